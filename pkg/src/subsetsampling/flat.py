"""Array-backed samplers: naive Bernoulli scan and geometric-jump sampling.

A SlotArray keeps records in arbitrary order with O(1) expected insert,
delete (swap-with-last) and update. A BoundedBucket wraps a SlotArray whose
probabilities all lie in one dyadic band (2^-l, 2^-l+1] and answers queries
by geometric skips with acceptance thinning, so the expected work is
proportional to the bucket's probability mass instead of its size.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DuplicateKeyError, KeyNotFoundError, check_prob

_INDEX_THRESHOLD = 32  # below this a linear key scan beats a dict
_SCALAR_CUTOFF = 16    # below this scalar loops beat numpy calls


class WorkCounter:
    """Counts record slots examined; threaded through queries by benchmarks."""

    __slots__ = ("touched",)

    def __init__(self):
        self.touched = 0

    def add(self, k):
        self.touched += k


class SlotArray:
    """Dense array of (key, probability) records with a key -> slot index.

    Deletion swaps the last record into the hole, so slots stay dense.
    The key index is materialized lazily: tiny arrays (chunk samplers,
    reduced instances) stay dict-free and cheap.
    """

    __slots__ = ("_keys", "_probs", "_count", "_mu", "_index")

    def __init__(self, items=None):
        self._keys = []
        self._probs = np.empty(8, dtype=np.float64)
        self._count = 0
        self._mu = 0.0
        self._index = None
        if items:
            for key, p in items:
                self.insert(key, p)

    @classmethod
    def _from_columns(cls, keys, probs):
        """Bulk constructor for pre-validated columns (vectorized builds)."""
        s = cls()
        n = len(keys)
        s._keys = list(keys)
        arr = np.empty(max(8, n), dtype=np.float64)
        arr[:n] = probs
        s._probs = arr
        s._count = n
        s._mu = float(arr[:n].sum())
        if n >= _INDEX_THRESHOLD:
            s._index = {k: i for i, k in enumerate(s._keys)}
        return s

    def __len__(self):
        return self._count

    def __contains__(self, key):
        return self._slot(key) is not None

    @property
    def mu(self) -> float:
        return self._mu

    @property
    def keys(self):
        return self._keys

    def probs_view(self) -> np.ndarray:
        return self._probs[: self._count]

    def _slot(self, key):
        if self._index is not None:
            return self._index.get(key)
        try:
            return self._keys.index(key)
        except ValueError:
            return None

    def _maybe_build_index(self):
        if self._index is None and self._count >= _INDEX_THRESHOLD:
            self._index = {k: i for i, k in enumerate(self._keys)}

    def insert(self, key, p):
        if self._slot(key) is not None:
            raise DuplicateKeyError(key)
        p = check_prob(p)
        n = self._count
        if n == len(self._probs):
            grown = np.empty(2 * n, dtype=np.float64)
            grown[:n] = self._probs
            self._probs = grown
        self._keys.append(key)
        self._probs[n] = p
        self._count = n + 1
        self._mu += p
        if self._index is not None:
            self._index[key] = n
        else:
            self._maybe_build_index()

    def delete(self, key):
        i = self._slot(key)
        if i is None:
            raise KeyNotFoundError(key)
        n = self._count - 1
        self._mu -= self._probs[i]
        last_key = self._keys[n]
        if i != n:
            self._keys[i] = last_key
            self._probs[i] = self._probs[n]
            if self._index is not None:
                self._index[last_key] = i
        self._keys.pop()
        self._count = n
        if self._index is not None:
            del self._index[key]

    def update(self, key, p):
        i = self._slot(key)
        if i is None:
            raise KeyNotFoundError(key)
        p = check_prob(p)
        self._mu += p - self._probs[i]
        self._probs[i] = p

    def prob(self, key) -> float:
        i = self._slot(key)
        if i is None:
            raise KeyNotFoundError(key)
        return float(self._probs[i])

    def recompute_mu(self) -> float:
        """Resum probabilities exactly; called on structure rebuilds."""
        self._mu = float(self._probs[: self._count].sum())
        return self._mu

    def query(self, rng, work=None):
        """Naive subset sample: one uniform per record, include if u < p."""
        n = self._count
        if work is not None:
            work.add(n)
        if n == 0:
            return []
        if n <= _SCALAR_CUTOFF:
            probs = self._probs
            return [
                self._keys[i] for i in range(n) if rng.uniform01() < probs[i]
            ]
        u = rng.uniform01_batch(n)
        hit = np.flatnonzero(u < self._probs[:n])
        keys = self._keys
        return [keys[i] for i in hit]

    def audit(self):
        """Invariant check used by fuzz tests: index/slots/mu consistency."""
        assert self._count == len(self._keys)
        if self._index is not None:
            assert len(self._index) == self._count
            for k, i in self._index.items():
                assert self._keys[i] == k
        assert len(set(self._keys)) == self._count
        total = float(self._probs[: self._count].sum())
        assert abs(total - self._mu) <= 1e-9 * max(1.0, abs(total))


class BoundedBucket:
    """Records whose probabilities fit one dyadic band, sampled by jumps.

    level l owns probabilities in (2^-l, 2^-l+1]; a tail bucket relaxes the
    lower bound to 0. All records are overestimated by pbar = 2^-l+1; the
    query jumps through slots with Geo(pbar) skips and keeps each landed
    record with probability p(v)/pbar (an exact binary division, pbar being
    a power of two). The gate (probability that any landing occurs) is a
    pure function of (pbar, count), so it never drifts under modification.
    """

    __slots__ = ("level", "pbar", "store", "is_tail", "_log_denom")

    def __init__(self, level: int, is_tail: bool = False):
        self.level = level
        self.pbar = 2.0 ** (-level + 1)
        self.store = SlotArray()
        self.is_tail = is_tail
        self._log_denom = math.log1p(-self.pbar) if self.pbar < 1.0 else 0.0

    def __len__(self):
        return len(self.store)

    @property
    def mu(self) -> float:
        return self.store.mu

    @property
    def gate(self) -> float:
        """P(at least one geometric landing) = 1 - (1-pbar)^count."""
        n = len(self.store)
        if n == 0:
            return 0.0
        if self.pbar == 1.0:
            return 1.0
        return -math.expm1(n * self._log_denom)

    def _check_band(self, p):
        upper = self.pbar
        lower = 0.0 if self.is_tail else 0.5 * upper
        if not (lower < p <= upper):
            raise ValueError(
                f"probability {p} outside bucket band ({lower}, {upper}]"
            )

    def insert(self, key, p):
        p = check_prob(p)
        self._check_band(p)
        self.store.insert(key, p)

    def delete(self, key):
        self.store.delete(key)

    def update(self, key, p):
        p = check_prob(p)
        self._check_band(p)
        self.store.update(key, p)

    # -- sampling -----------------------------------------------------------

    def _landings(self, rng, start: int):
        """1-based slot positions hit by the jump process after `start`."""
        count = len(self.store)
        pbar = self.pbar
        if pbar == 1.0:
            # Geo(1) skips are all zero: every remaining slot is a landing
            return np.arange(start + 1, count + 1, dtype=np.int64)
        if count - start <= _SCALAR_CUTOFF:
            out = []
            pos = start
            while True:
                pos += rng.geometric_skip(pbar) + 1
                if pos > count:
                    break
                out.append(pos)
            return np.asarray(out, dtype=np.int64)
        chunks = []
        pos = start
        inv_denom = 1.0 / self._log_denom
        while True:
            expect = (count - pos) * pbar
            k = max(8, int(expect + 6.0 * math.sqrt(expect) + 4.0))
            g = (np.log(rng.uniform01_batch(k)) * inv_denom).astype(np.int64)
            steps = np.cumsum(g) + np.arange(1, k + 1, dtype=np.int64) + pos
            inside = steps[steps <= count]
            chunks.append(inside)
            if len(inside) < k:
                break
            pos = int(steps[-1])
            if pos >= count:
                break
        return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]

    def _thin(self, rng, positions, work=None):
        m = len(positions)
        if work is not None:
            work.add(m)
        if m == 0:
            return []
        probs = self.store.probs_view()
        ratios = probs[positions - 1] * (1.0 / self.pbar)
        if m <= _SCALAR_CUTOFF:
            keys = self.store.keys
            out = []
            for i in range(m):
                if rng.uniform01() < ratios[i]:
                    out.append(keys[positions[i] - 1])
            return out
        u = rng.uniform01_batch(m)
        hit = positions[u < ratios] - 1
        keys = self.store.keys
        return [keys[i] for i in hit]

    def query(self, rng, work=None):
        """Unconditional jump query; exact Bernoulli(p(v)) per record."""
        return self._thin(rng, self._landings(rng, 0), work)

    def query_given_landing(self, rng, work=None):
        """Jump query conditioned on at least one landing occurring.

        The first landing is drawn from the truncated geometric law; the
        process then continues unconditionally. Selecting this variant with
        probability `gate` reproduces the unconditional query law exactly.
        """
        count = len(self.store)
        if count == 0:
            raise ValueError("query_given_landing on an empty bucket")
        j0 = rng.first_landing_truncated(self.pbar, count)
        rest = self._landings(rng, j0)
        positions = np.concatenate([np.array([j0], dtype=np.int64), rest])
        return self._thin(rng, positions, work)
