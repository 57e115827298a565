import math
import time

import numpy as np
import pytest

from subsetsampling import (
    BoundedBucket,
    DuplicateKeyError,
    KeyNotFoundError,
    RngState,
    SlotArray,
    WorkCounter,
)
from _stubs import FakeRng


def test_insert_and_len():
    s = SlotArray()
    s.insert("a", 0.5)
    assert len(s) == 1
    assert s.prob("a") == 0.5


def test_insert_then_delete_roundtrip():
    s = SlotArray()
    s.insert("k1", 0.4)
    s.delete("k1")
    assert len(s) == 0
    assert "k1" not in s
    with pytest.raises(KeyNotFoundError):
        s.prob("k1")


def test_duplicate_and_missing_errors():
    s = SlotArray([("a", 0.1)])
    with pytest.raises(DuplicateKeyError):
        s.insert("a", 0.2)
    with pytest.raises(KeyNotFoundError):
        s.delete("zz")
    with pytest.raises(KeyNotFoundError):
        s.update("zz", 0.5)


def test_delete_swaps_last_into_hole():
    s = SlotArray([("a", 0.1), ("b", 0.2), ("c", 0.3)])
    s.delete("b")
    assert s.keys == ["a", "c"]
    assert s.prob("c") == 0.3
    s.audit()


def test_update_adjusts_mu():
    s = SlotArray([("a", 0.2)])
    s.update("a", 0.8)
    assert abs(s.mu - 0.8) < 1e-12


def test_op_fuzz_consistency():
    rng = RngState(404)
    s = SlotArray()
    shadow = {}
    for step in range(10_000):
        r = rng.uniform01()
        if shadow and r < 0.3:
            k = list(shadow)[rng.uniform_int(len(shadow)) - 1]
            s.delete(k)
            del shadow[k]
        elif shadow and r < 0.5:
            k = list(shadow)[rng.uniform_int(len(shadow)) - 1]
            p = rng.uniform01()
            s.update(k, p)
            shadow[k] = p
        else:
            k = rng.uniform_int(10_000_000)
            if k not in shadow:
                p = rng.uniform01()
                s.insert(k, p)
                shadow[k] = p
        s.audit()
    assert len(s) == len(shadow)
    for k, p in shadow.items():
        assert s.prob(k) == p


def test_insert_time_has_no_ambient_dependence():
    # amortized insert cost should not grow with how much is already stored
    def time_inserts(base, count):
        s = SlotArray()
        for i in range(base):
            s.insert(i, 0.5)
        t0 = time.perf_counter()
        for i in range(base, base + count):
            s.insert(i, 0.5)
        return (time.perf_counter() - t0) / count

    small = min(time_inserts(100, 20_000) for _ in range(3))
    large = min(time_inserts(300_000, 20_000) for _ in range(3))
    assert large < 4 * small


# -- naive query --------------------------------------------------------------


def test_naive_degenerate_probs():
    s = SlotArray([("a", 1.0), ("b", 0.0), ("c", 1.0)])
    rng = RngState(8)
    for _ in range(50):
        assert sorted(s.query(rng)) == ["a", "c"]


def test_naive_all_zero():
    s = SlotArray([(i, 0.0) for i in range(40)])
    rng = RngState(8)
    assert s.query(rng) == []


def test_naive_hand_trace():
    # u-stream (0.3, 0.7) against (0.5, 0.5): only the first key passes
    s = SlotArray([("x", 0.5), ("y", 0.5)])
    assert s.query(FakeRng(uniforms=[0.3, 0.7])) == ["x"]


def test_naive_counts_work():
    s = SlotArray([(i, 0.5) for i in range(10)])
    w = WorkCounter()
    s.query(RngState(3), w)
    assert w.touched == 10


# -- bounded bucket / jump query ----------------------------------------------


def test_bucket_band_enforced():
    b = BoundedBucket(2)  # (0.25, 0.5]
    b.insert("ok", 0.3)
    b.insert("edge", 0.5)  # closed upper end belongs to this bucket
    with pytest.raises(ValueError):
        b.insert("low", 0.25)
    with pytest.raises(ValueError):
        b.insert("high", 0.6)


def test_tail_bucket_relaxes_lower_bound():
    b = BoundedBucket(10, is_tail=True)
    b.insert("tiny", 1e-12)
    with pytest.raises(ValueError):
        b.insert("zero", 0.0)


def test_gate_identity():
    b = BoundedBucket(3)  # pbar = 0.25
    assert b.gate == 0.0
    for i in range(5):
        b.insert(i, 0.2)
        assert abs(b.gate - (1 - 0.75 ** (i + 1))) < 1e-15
    b.delete(0)
    assert abs(b.gate - (1 - 0.75 ** 4)) < 1e-15


def test_jump_hand_trace():
    # skips (1, 5) over 3 slots: land on slot 2 only; u=0.5 < 0.2/0.25 keeps y
    b = BoundedBucket(3)
    for key, p in [("x", 0.21), ("y", 0.2), ("z", 0.22)]:
        b.insert(key, p)
    out = b.query(FakeRng(uniforms=[0.5], geometrics=[1, 5]))
    assert out == ["y"]


def test_jump_empty_bucket_single_draw():
    b = BoundedBucket(4)
    stub = FakeRng(geometrics=[99])
    assert b.query(stub) == []
    assert stub.geo_calls == 1


def test_jump_pbar_one_degenerates_to_scan():
    b = BoundedBucket(1)  # pbar = 1: p in (0.5, 1]
    for i in range(20):
        b.insert(i, 1.0)
    assert sorted(b.query(RngState(2))) == list(range(20))


def test_conditioned_single_slot():
    b = BoundedBucket(1)
    b.insert("only", 1.0)
    for _ in range(20):
        assert b.query_given_landing(RngState(5)) == ["only"]
    with pytest.raises(ValueError):
        BoundedBucket(2).query_given_landing(RngState(1))


def test_conditioned_gate_times_first_landing_identity():
    # gate * P(first landing = 1) must equal pbar (here 0.75 * 2/3 = 0.5)
    b = BoundedBucket(2)
    b.insert("a", 0.3)
    b.insert("b", 0.3)
    gate = b.gate
    assert abs(gate - 0.75) < 1e-15
    rng = RngState(123)
    n = 200_000
    first_is_1 = sum(
        rng.first_landing_truncated(b.pbar, 2) == 1 for _ in range(n)
    )
    est = gate * first_is_1 / n
    sigma = math.sqrt((2 / 3) * (1 / 3) / n)  # P(j=1) = 0.5/0.75
    assert abs(est - b.pbar) < 4.5 * gate * sigma


def test_conditioned_mixture_equals_unconditional():
    # gate x conditioned-process vs the plain jump process; the empirical-TV
    # noise floor forces a bucket small enough for the 0.01 tolerance
    rng = RngState(2718)
    b = BoundedBucket(3)
    probs = {}
    for i in range(8):
        p = 0.125 + 0.125 * ((i * 37 % 8) + 0.5) / 8  # inside (0.125, 0.25]
        b.insert(i, p)
        probs[i] = p
    bit = {i: 1 << i for i in range(8)}
    trials = 600_000
    plain = np.zeros(1 << 8)
    mixed = np.zeros(1 << 8)
    for _ in range(trials):
        m = 0
        for k in b.query(rng):
            m |= bit[k]
        plain[m] += 1
        m = 0
        if rng.uniform01() < b.gate:
            for k in b.query_given_landing(rng):
                m |= bit[k]
        mixed[m] += 1
    tv = 0.5 * np.abs(plain / trials - mixed / trials).sum()
    assert tv < 0.01


def test_jump_marginals_at_scale():
    # one dyadic band, n=1e4 records at p=0.3, 1e5 queries
    n = 10_000
    b = BoundedBucket(2)
    for i in range(n):
        b.insert(i, 0.3)
    rng = RngState(5150)
    trials = 100_000
    counts = np.zeros(n)
    probs = b.store.probs_view()
    for _ in range(trials):
        pos = b._landings(rng, 0)
        u = rng.uniform01_batch(len(pos))
        hit = pos[u < probs[pos - 1] * (1.0 / b.pbar)] - 1
        counts[hit] += 1.0
    sigma = math.sqrt(0.3 * 0.7 / trials)
    z = np.abs(counts / trials - 0.3) / sigma
    # a handful of 1e4 keys may exceed 4 sigma; all must be within 4.5
    assert float(np.mean(z <= 4.0)) > 0.995
    assert np.all(z <= 4.5)


def test_jump_pairwise_independence():
    b = BoundedBucket(2)
    rng = RngState(616)
    probs = {}
    for i in range(24):
        p = 0.25 + 0.25 * ((i * 29 % 24) + 0.5) / 24
        b.insert(i, p)
        probs[i] = p
    pairs = [(0, 5), (1, 7), (2, 11), (3, 13), (4, 17), (6, 19),
             (8, 21), (9, 22), (10, 23), (12, 20)]
    trials = 200_000
    both = np.zeros(len(pairs))
    for _ in range(trials):
        got = set(b.query(rng))
        for j, (u, v) in enumerate(pairs):
            if u in got and v in got:
                both[j] += 1
    for j, (u, v) in enumerate(pairs):
        q = probs[u] * probs[v]
        sigma = math.sqrt(q * (1 - q) / trials)
        assert abs(both[j] / trials - q) < 4.5 * sigma


def test_jump_work_bound():
    # mean landings per query within [0.5, 4] x (count * pbar)
    b = BoundedBucket(3)
    for i in range(200):
        b.insert(i, 0.2)
    rng = RngState(321)
    w = WorkCounter()
    trials = 10_000
    for _ in range(trials):
        b.query(rng, w)
    expect = 200 * b.pbar
    assert 0.5 * expect <= w.touched / trials <= 4 * expect
