"""Dynamic subset sampler with constant-time modification.

Records are split into dyadic buckets by probability; each bucket is gated
by the probability that its jump process lands at least once, and the
gates themselves form a reduced sampling instance over the bucket indices
1..L, solved recursively. A query first samples the set of active buckets
from the reduced instance and then runs the landing-conditioned jump query
inside each selected bucket, which composes to an exact independent
Bernoulli(p(v)) law per record.

The reduced chain shrinks while the index count L is below half the
current size and above the table threshold m0; the last level is a plain
scan, or a lookup-table sampler when it is small enough. The whole
structure is rebuilt (L refrozen) whenever the record count doubles or
halves relative to the last rebuild.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DuplicateKeyError, KeyNotFoundError, check_prob
from .flat import BoundedBucket, SlotArray
from .lookup import DEFAULT_TABLE_BUDGET, TableStore, encode, update_digit

ZERO_LEVEL = 0  # sentinel level for p == 0 records (kept aside, never sampled)


def level_count(n: int) -> int:
    """Number of dyadic buckets for a set of size n: 2 ceil(log2 n) + 2."""
    if n <= 1:
        return 2
    return 2 * (n - 1).bit_length() + 2


def bucket_level(p: float, L: int) -> int:
    """The unique l in [1, L] with 2^-l < p <= 2^-l+1, clamped to L.

    p = 0 maps to ZERO_LEVEL. Exact at dyadic boundaries: p = 2^-k
    belongs to bucket k+1 (the band's open lower end excludes it).
    """
    p = check_prob(p)
    if p == 0.0:
        return ZERO_LEVEL
    frac, e = math.frexp(p)  # p = frac * 2^e with frac in [0.5, 1)
    l = 2 - e if frac == 0.5 else 1 - e
    return l if l < L else L


def _levels_vector(probs: np.ndarray, L: int) -> np.ndarray:
    """Vectorized bucket_level for a float array (0 stays ZERO_LEVEL)."""
    frac, e = np.frexp(probs)
    levels = np.where(frac == 0.5, 2 - e, 1 - e).astype(np.int64)
    np.minimum(levels, L, out=levels)
    levels[probs == 0.0] = ZERO_LEVEL
    return levels


class BaseSolver:
    """Terminal solver for a reduced instance: scan, or lookup tables.

    Table mode keeps the probability vector as a radix integer with
    round-up digits and thins emissions back to the exact law; it only
    ever sees update operations (the key set of a reduced instance is
    frozen), which is what the digit encoding supports.
    """

    __slots__ = ("mode", "slots", "keys", "index", "probs", "digits", "lam", "store", "m")

    def __init__(self, records, store: TableStore | None, m0: int):
        n = len(records)
        if store is not None and n <= m0:
            self.mode = "table"
            self.keys = [k for k, _ in records]
            self.index = {k: i + 1 for i, k in enumerate(self.keys)}
            self.probs = [check_prob(p) for _, p in records]
            self.m = n
            self.store = store
            self.digits = [self._digit(p) for p in self.probs]
            self.lam = encode(self.digits, n) if n else 0
            self.slots = None
        else:
            self.mode = "scan"
            self.slots = SlotArray(records)
            self.keys = None

    def _digit(self, p: float) -> int:
        msq = self.m * self.m
        d = -int(-(msq * p) // 1)  # ceil, with a float guard below
        if d < msq and d / msq < p:
            d += 1
        return d

    def __len__(self):
        return len(self.slots) if self.mode == "scan" else self.m

    def prob_of(self, key) -> float:
        if self.mode == "scan":
            return self.slots.prob(key)
        return self.probs[self.index[key] - 1]

    def update(self, key, p):
        if self.mode == "scan":
            self.slots.update(key, p)
            return
        p = check_prob(p)
        v = self.index.get(key)
        if v is None:
            raise KeyNotFoundError(key)
        d = self._digit(p)
        self.lam = update_digit(self.lam, v, d, self.m)
        self.digits[v - 1] = d
        self.probs[v - 1] = p

    def query(self, rng, work=None):
        if self.mode == "scan":
            return self.slots.query(rng, work)
        if self.m == 0:
            return []
        emitted = self.store.query(self.lam, self.m, rng, work)
        out = []
        msq = self.m * self.m
        for v in emitted:
            ratio = self.probs[v - 1] * msq / self.digits[v - 1]
            if ratio >= 1.0 or rng.uniform01() < ratio:
                out.append(self.keys[v - 1])
        return out

    def audit(self):
        if self.mode == "scan":
            self.slots.audit()
        else:
            assert self.digits == [self._digit(p) for p in self.probs]
            assert self.lam == encode(self.digits, self.m)


class LevelInstance:
    """One level of the bucket decomposition plus its reduced instance."""

    __slots__ = (
        "L", "buckets", "zeros", "probs", "reduced",
        "size", "old_size", "mu", "_m0", "_store",
    )

    def __init__(self, records, m0: int = 3, store: TableStore | None = None):
        self._m0 = m0
        self._store = store
        self._build(list(records))

    # -- construction -------------------------------------------------------

    def _build(self, records):
        n = len(records)
        self.size = n
        self.old_size = max(1, n)
        self.L = level_count(n)
        self.buckets = {}
        self.zeros = SlotArray()
        self.mu = 0.0
        if n >= 1024:
            self._bulk_load(records)
        else:
            self.probs = {}
            for key, p in records:
                p = check_prob(p)
                if key in self.probs:
                    raise DuplicateKeyError(key)
                self.probs[key] = p
                self._place(key, p)
                self.mu += p
        gates = [(l, self._gate(l)) for l in range(1, self.L + 1)]
        if self.L > self._m0 and 2 * self.L < n:
            self.reduced = LevelInstance(gates, self._m0, self._store)
        else:
            self.reduced = BaseSolver(gates, self._store, self._m0)

    def _bulk_load(self, records):
        keys = [k for k, _ in records]
        parr = np.array([p for _, p in records], dtype=np.float64)
        if np.any(~((parr >= 0.0) & (parr <= 1.0))):
            bad = parr[~((parr >= 0.0) & (parr <= 1.0))][0]
            check_prob(bad)  # raises with the offending value
        self.probs = dict(zip(keys, parr.tolist()))
        if len(self.probs) != len(records):
            raise DuplicateKeyError("duplicate keys in build input")
        levels = _levels_vector(parr, self.L)
        order = np.argsort(levels, kind="stable")
        sorted_levels = levels[order]
        bounds = np.searchsorted(sorted_levels, np.arange(0, self.L + 2))
        for l in range(0, self.L + 1):
            lo, hi = int(bounds[l]), int(bounds[l + 1])
            if lo == hi:
                continue
            idx = order[lo:hi]
            chunk_keys = [keys[i] for i in idx]
            chunk_probs = parr[idx]
            if l == ZERO_LEVEL:
                self.zeros = SlotArray._from_columns(chunk_keys, chunk_probs)
            else:
                bucket = BoundedBucket(l, is_tail=(l == self.L))
                bucket.store = SlotArray._from_columns(chunk_keys, chunk_probs)
                self.buckets[l] = bucket
        self.mu = float(parr.sum())

    def _bucket(self, l: int) -> BoundedBucket:
        b = self.buckets.get(l)
        if b is None:
            b = BoundedBucket(l, is_tail=(l == self.L))
            self.buckets[l] = b
        return b

    def _gate(self, l: int) -> float:
        b = self.buckets.get(l)
        return b.gate if b is not None else 0.0

    def _place(self, key, p):
        l = bucket_level(p, self.L)
        if l == ZERO_LEVEL:
            self.zeros.insert(key, p)
        else:
            self._bucket(l).insert(key, p)
        return l

    def _remove(self, key, p):
        l = bucket_level(p, self.L)
        if l == ZERO_LEVEL:
            self.zeros.delete(key)
        else:
            self.buckets[l].delete(key)
        return l

    def _push_gate(self, l: int):
        if l != ZERO_LEVEL:
            self.reduced.update(l, self._gate(l))

    # -- dynamic operations -------------------------------------------------

    def __len__(self):
        return self.size

    def __contains__(self, key):
        return key in self.probs

    def prob_of(self, key) -> float:
        try:
            return self.probs[key]
        except KeyError:
            raise KeyNotFoundError(key) from None

    def insert(self, key, p):
        p = check_prob(p)
        if key in self.probs:
            raise DuplicateKeyError(key)
        self.probs[key] = p
        self.size += 1
        if self.size >= 2 * self.old_size:
            self._rebuild()
            return
        self.mu += p
        l = self._place(key, p)
        self._push_gate(l)

    def delete(self, key):
        p = self.probs.pop(key, None)
        if p is None:
            raise KeyNotFoundError(key)
        self.size -= 1
        if 2 * self.size <= self.old_size:
            self._rebuild()
            return
        self.mu -= p
        l = self._remove(key, p)
        self._push_gate(l)

    def update(self, key, p):
        pold = self.probs.get(key)
        if pold is None:
            raise KeyNotFoundError(key)
        p = check_prob(p)
        l_old = bucket_level(pold, self.L)
        l_new = bucket_level(p, self.L)
        if l_old == l_new:
            if l_old == ZERO_LEVEL:
                self.zeros.update(key, p)
            else:
                self.buckets[l_old].update(key, p)
            # counts unchanged on both sides, so both gates are unchanged
        else:
            self._remove(key, pold)
            if l_new == ZERO_LEVEL:
                self.zeros.insert(key, p)
            else:
                self._bucket(l_new).insert(key, p)
            self._push_gate(l_old)
            self._push_gate(l_new)
        self.probs[key] = p
        self.mu += p - pold

    def _rebuild(self):
        self._build(list(self.probs.items()))

    # -- sampling -----------------------------------------------------------

    def query(self, rng, work=None):
        """Exact independent Bernoulli(p(v)) subset of the stored keys."""
        selected = self.reduced.query(rng, work)
        out = []
        for l in selected:
            bucket = self.buckets.get(l)
            if bucket is None or len(bucket) == 0:
                raise AssertionError(f"empty bucket {l} selected (stale gate)")
            out.extend(bucket.query_given_landing(rng, work))
        return out

    # -- introspection ------------------------------------------------------

    def stats(self) -> dict:
        chain = []
        inst = self
        while isinstance(inst, LevelInstance):
            chain.append(inst.L)
            inst = inst.reduced
        return {
            "size": self.size,
            "mu": self.mu,
            "depth": len(chain),
            "per_level_L": chain,
            "base_mode": inst.mode,
            "base_size": len(inst),
        }

    def audit(self):
        """Full structural check; used after every op by fuzz tests."""
        total = len(self.zeros)
        mu = self.zeros.mu
        self.zeros.audit()
        for l, bucket in self.buckets.items():
            bucket.store.audit()
            probs = bucket.store.probs_view()
            for i, key in enumerate(bucket.store.keys):
                p = float(probs[i])
                assert bucket_level(p, self.L) == l, (key, p, l)
                assert self.probs[key] == p
            total += len(bucket)
            mu += bucket.mu
            assert self.reduced.prob_of(l) == bucket.gate
        for l in range(1, self.L + 1):
            if l not in self.buckets:
                assert self.reduced.prob_of(l) == 0.0
        assert total == self.size == len(self.probs)
        assert abs(mu - self.mu) <= 1e-9 * max(1.0, abs(mu))
        assert self.old_size // 2 <= self.size <= 2 * self.old_size
        assert self.L == level_count(self.old_size)
        self.reduced.audit()


class DynamicSampler:
    """Public facade: build / query / insert / delete / update / stats."""

    def __init__(self, records=(), m0: int = 3,
                 table_budget: int = DEFAULT_TABLE_BUDGET,
                 store: TableStore | None = None):
        self.store = store if store is not None else TableStore(table_budget)
        self.root = LevelInstance(records, m0, self.store)

    def __len__(self):
        return len(self.root)

    def __contains__(self, key):
        return key in self.root

    @property
    def mu(self) -> float:
        return self.root.mu

    def prob_of(self, key) -> float:
        return self.root.prob_of(key)

    def query(self, rng, work=None):
        return self.root.query(rng, work)

    def insert(self, key, p):
        self.root.insert(key, p)

    def delete(self, key):
        self.root.delete(key)

    def update(self, key, p):
        self.root.update(key, p)

    def stats(self) -> dict:
        return self.root.stats()

    def audit(self):
        self.root.audit()
