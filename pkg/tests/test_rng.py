import math

import numpy as np
import pytest

from subsetsampling import InvalidProbabilityError, RngState
from subsetsampling.oracle import chi_square_p


def test_same_seed_same_sequence():
    a = RngState(42)
    b = RngState(42)
    assert [a.uniform01() for _ in range(50)] == [b.uniform01() for _ in range(50)]
    assert [a.next_u64() for _ in range(50)] == [b.next_u64() for _ in range(50)]


def test_mixed_call_reproducibility():
    def run():
        r = RngState(7)
        out = []
        for i in range(200):
            out.append(r.uniform01())
            out.append(r.uniform_int(1 + i % 13))
            out.append(r.geometric_skip(0.25))
        out.extend(r.uniform01_batch(100).tolist())
        return out

    assert run() == run()


def test_uniform01_strictly_inside_unit_interval():
    r = RngState(3)
    u = r.uniform01_batch(100_000)
    assert u.min() > 0.0
    assert u.max() < 1.0


def test_uniform01_mean():
    # law of large numbers: 6 sigma of 1/sqrt(12 * 1e6) is under 0.002
    r = RngState(12345)
    u = r.uniform01_batch(1_000_000)
    assert abs(float(u.mean()) - 0.5) < 0.002


def test_uniform_int_k1_and_reproducible():
    r = RngState(5)
    assert all(r.uniform_int(1) == 1 for _ in range(10))
    a = RngState(9)
    b = RngState(9)
    assert [a.uniform_int(4096) for _ in range(100)] == [
        b.uniform_int(4096) for _ in range(100)
    ]


def test_uniform_int_frequencies():
    r = RngState(2024)
    n = 1_000_000
    counts = np.zeros(7)
    for _ in range(n):
        counts[r.uniform_int(7) - 1] += 1
    p = 1.0 / 7.0
    sigma = math.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) < 4 * sigma)


def test_uniform_int_rejects_zero():
    with pytest.raises(ValueError):
        RngState(1).uniform_int(0)


def test_geometric_skip_p1_always_zero():
    r = RngState(11)
    assert all(r.geometric_skip(1.0) == 0 for _ in range(100))


def test_geometric_skip_formula_hand_value():
    # p=0.5, U=0.3: floor(log 0.3 / log 0.5) = floor(1.7369) = 1
    class OneU(RngState):
        def uniform01(self):
            return 0.3

    assert OneU(0).geometric_skip(0.5) == 1


def test_geometric_skip_rejects_bad_p():
    r = RngState(1)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidProbabilityError):
            r.geometric_skip(bad)


def test_geometric_first_mass():
    # empirical P(g=0) within 4 sigma of p for p = 0.25
    r = RngState(777)
    n = 1_000_000
    g = r.geometric_batch(0.25, n)
    freq = float(np.mean(g == 0))
    sigma = math.sqrt(0.25 * 0.75 / n)
    assert abs(freq - 0.25) < 4 * sigma


@pytest.mark.parametrize("p", [0.5, 0.25, 2.0 ** -10])
def test_geometric_pmf_chi_square(p):
    r = RngState(int(1 / p))
    n = 1_000_000
    g = np.minimum(r.geometric_batch(p, n), 21)  # 21 pools the tail
    counts = np.bincount(g, minlength=22).astype(np.float64)
    pmf = np.array([(1 - p) ** k * p for k in range(21)])
    law = np.append(pmf, 1.0 - pmf.sum())
    assert chi_square_p(law, counts / n, n) > 1e-4


def test_first_landing_n1_and_p1():
    r = RngState(4)
    assert all(r.first_landing_truncated(0.3, 1) == 1 for _ in range(20))
    assert all(r.first_landing_truncated(1.0, 5) == 1 for _ in range(20))


def test_first_landing_hand_inversion():
    # p=0.5, n=2, U=0.5: 1 - 0.5*0.75 = 0.625; ceil(log .625 / log .5) = 1
    class HalfU(RngState):
        def uniform01(self):
            return 0.5

    assert HalfU(0).first_landing_truncated(0.5, 2) == 1


def test_first_landing_range_fuzz():
    r = RngState(99)
    for _ in range(5000):
        p = r.uniform01()
        n = r.uniform_int(50)
        j = r.first_landing_truncated(max(p, 1e-12), n)
        assert 1 <= j <= n


def test_first_landing_half_n2_frequency():
    # P(j=1) = p / (1-(1-p)^n) = 0.5/0.75 = 2/3
    r = RngState(31337)
    n = 1_000_000
    ones = sum(r.first_landing_truncated(0.5, 2) == 1 for _ in range(n))
    sigma = math.sqrt((2 / 3) * (1 / 3) / n)
    assert abs(ones / n - 2 / 3) < 4 * sigma


@pytest.mark.parametrize("p,n", [(0.5, 2), (0.25, 8), (2.0 ** -6, 100)])
def test_first_landing_pmf_chi_square(p, n):
    r = RngState(n * 1000 + 1)
    trials = 1_000_000
    counts = np.zeros(n)
    for _ in range(trials):
        counts[r.first_landing_truncated(p, n) - 1] += 1
    tail = 1.0 - (1.0 - p) ** n
    law = np.array([(1 - p) ** (j - 1) * p / tail for j in range(1, n + 1)])
    assert chi_square_p(law, counts / trials, trials) > 1e-4


def test_errors_on_invalid_inputs():
    r = RngState(1)
    with pytest.raises(InvalidProbabilityError):
        r.first_landing_truncated(0.0, 3)
    with pytest.raises(ValueError):
        r.first_landing_truncated(0.5, 0)
