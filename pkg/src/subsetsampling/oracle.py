"""Brute-force reference laws and the statistical test kit.

Every distributional test in the suite compares a sampler against the laws
computed here. Joint laws are enumerated exactly for up to 12 records
(4096 outcomes); beyond that the marginal/pairwise helpers apply.

Thresholds used throughout the tests (TV 0.01, |z| 4.5, chi-square p 1e-4)
are calibrated for a sub-1e-3 flake rate at the trial counts the tests use;
with the deterministic RNG the suite is fully reproducible anyway.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import chi2

from .errors import CapacityError, check_prob

MAX_JOINT_KEYS = 12


def enumerate_exact(probs) -> np.ndarray:
    """Exact subset law as an array of 2^n masses.

    Entry `mask` is the probability that exactly the records whose bits are
    set in `mask` are sampled (bit i = record i). n is capped at 12.
    """
    probs = [check_prob(p) for p in probs]
    if len(probs) > MAX_JOINT_KEYS:
        raise CapacityError(f"joint law limited to {MAX_JOINT_KEYS} records")
    law = np.array([1.0])
    for p in probs:
        law = np.concatenate([law * (1.0 - p), law * p])
    return law


def enumerate_exact_incl_excl(probs) -> np.ndarray:
    """Second, independent route to the same law via inclusion-exclusion.

    P(X = T) = sum over U >= T of (-1)^(|U|-|T|) * prod_{v in U} p(v).
    Exponential in n; used only to cross-check enumerate_exact.
    """
    probs = [check_prob(p) for p in probs]
    n = len(probs)
    if n > MAX_JOINT_KEYS:
        raise CapacityError(f"joint law limited to {MAX_JOINT_KEYS} records")
    prod_up = np.empty(1 << n)
    for mask in range(1 << n):
        acc = 1.0
        m = mask
        while m:
            v = (m & -m).bit_length() - 1
            acc *= probs[v]
            m &= m - 1
        prod_up[mask] = acc
    law = np.zeros(1 << n)
    full = (1 << n) - 1
    for t_mask in range(1 << n):
        rest = full & ~t_mask
        total = 0.0
        # iterate over supersets U = T | sub for sub subset of rest
        sub = rest
        while True:
            u_mask = t_mask | sub
            sign = -1.0 if (bin(sub).count("1") & 1) else 1.0
            total += sign * prod_up[u_mask]
            if sub == 0:
                break
            sub = (sub - 1) & rest
        law[t_mask] = total
    return law


def any_sampled_prob(probs) -> float:
    """Probability that at least one record is sampled: 1 - prod(1 - p)."""
    acc = 1.0
    for p in probs:
        acc *= 1.0 - check_prob(p)
    return 1.0 - acc


def empirical_law(sampler, keys, trials: int, rng) -> np.ndarray:
    """Frequency over subset bitmasks from `trials` independent queries.

    `sampler(rng)` must return an iterable of keys drawn from `keys`
    (at most 12 of them). Returns counts / trials.
    """
    if len(keys) > MAX_JOINT_KEYS:
        raise CapacityError(f"joint law limited to {MAX_JOINT_KEYS} records")
    bit = {k: 1 << i for i, k in enumerate(keys)}
    counts = np.zeros(1 << len(keys))
    if trials <= 0:
        return counts
    for _ in range(trials):
        mask = 0
        for k in sampler(rng):
            mask |= bit[k]
        counts[mask] += 1.0
    return counts / trials


def tv_distance(law: np.ndarray, freq: np.ndarray) -> float:
    """Total variation distance between two distributions on the same support."""
    law = np.asarray(law, dtype=np.float64)
    freq = np.asarray(freq, dtype=np.float64)
    if law.shape != freq.shape:
        raise ValueError("support mismatch")
    return 0.5 * float(np.abs(law - freq).sum())


def chi_square_p(law: np.ndarray, freq: np.ndarray, trials: int) -> float:
    """Chi-square goodness-of-fit p-value of observed `freq` against `law`.

    Outcomes with expected count below 5 are pooled into one cell before
    the statistic is formed (the pooled cell joins its smallest neighbour
    if it is still below 5).
    """
    law = np.asarray(law, dtype=np.float64)
    freq = np.asarray(freq, dtype=np.float64)
    if law.shape != freq.shape:
        raise ValueError("support mismatch")
    expected = law * trials
    observed = freq * trials
    big = expected >= 5.0
    exp_cells = list(expected[big])
    obs_cells = list(observed[big])
    pooled_e = float(expected[~big].sum())
    pooled_o = float(observed[~big].sum())
    if pooled_e > 0.0:
        exp_cells.append(pooled_e)
        obs_cells.append(pooled_o)
    if len(exp_cells) < 2:
        return 1.0
    exp_arr = np.array(exp_cells)
    obs_arr = np.array(obs_cells)
    if pooled_e > 0.0 and pooled_e < 5.0:
        # merge the pooled remainder into the smallest regular cell
        j = int(np.argmin(exp_arr[:-1]))
        exp_arr[j] += exp_arr[-1]
        obs_arr[j] += obs_arr[-1]
        exp_arr = exp_arr[:-1]
        obs_arr = obs_arr[:-1]
        if len(exp_arr) < 2:
            return 1.0
    # renormalize tiny drift so the statistic is well-posed
    exp_arr *= obs_arr.sum() / exp_arr.sum()
    stat = float(((obs_arr - exp_arr) ** 2 / exp_arr).sum())
    df = len(exp_arr) - 1
    return float(chi2.sf(stat, df))


def marginal_report(sampler, keys, probs, trials: int, rng):
    """Per-key inclusion frequencies with binomial z-scores.

    `sampler(rng)` returns either an iterable of keys or a boolean numpy
    mask aligned with `keys` (the mask form keeps huge-n reference samplers
    vectorized). Returns (freqs, z_scores, frac_within) where frac_within
    is the fraction of keys with |z| <= 4.5. Keys with p in {0, 1} get
    z = 0 when the frequency is exact and inf otherwise.
    """
    index = {k: i for i, k in enumerate(keys)}
    counts = np.zeros(len(keys))
    for _ in range(trials):
        res = sampler(rng)
        if isinstance(res, np.ndarray) and res.dtype == np.bool_:
            counts += res
        else:
            for k in res:
                counts[index[k]] += 1.0
    freqs = counts / max(trials, 1)
    probs = np.asarray([check_prob(p) for p in probs])
    var = probs * (1.0 - probs) / max(trials, 1)
    z = np.zeros(len(keys))
    degenerate = var == 0.0
    ok = ~degenerate
    z[ok] = (freqs[ok] - probs[ok]) / np.sqrt(var[ok])
    z[degenerate & (freqs != probs)] = math.inf
    frac_within = float(np.mean(np.abs(z) <= 4.5)) if len(keys) else 1.0
    return freqs, z, frac_within


def sample_from_law(law: np.ndarray, trials: int, rng) -> np.ndarray:
    """Draw subset masks directly from an exact law (for calibration tests)."""
    cdf = np.cumsum(law)
    cdf[-1] = 1.0
    u = rng.uniform01_batch(trials)
    masks = np.searchsorted(cdf, u, side="left")
    counts = np.bincount(masks, minlength=len(law)).astype(np.float64)
    return counts / trials
