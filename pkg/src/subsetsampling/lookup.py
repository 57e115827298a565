"""Table-lookup subset sampler for m records on the 1/m^2 probability grid.

The probability vector is held as one integer `lam` in radix m^2+1 (digit v
is m^2 * p(v)), so a probability update is a single generalized bit
operation. For each (lam, i) the sampler needs a jump table: integer masses
proportional to "records i..j-1 rejected, j sampled", and a flat array Tb
indexed by a uniform integer that returns that j directly. Tables are
materialized lazily and memoized; a hard entry budget makes runaway
configurations fail fast instead of thrashing.

The round-up wrapper serves arbitrary real probabilities exactly: digits are
ceil(m^2 p), and每 emitted record is kept with probability p / (d/m^2),
which restores the exact Bernoulli product law.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError, check_prob

DEFAULT_TABLE_BUDGET = 4_000_000  # total Tb entries across all (lam, i)


def encode(digits, m: int) -> int:
    """Radix-(m^2+1) integer for a digit vector d[1..m], d[v] in [0, m^2]."""
    if len(digits) != m:
        raise ValueError(f"expected {m} digits, got {len(digits)}")
    radix = m * m + 1
    lam = 0
    place = 1
    for d in digits:
        if not (0 <= d <= m * m):
            raise ValueError(f"digit {d} out of [0, {m * m}]")
        lam += int(d) * place
        place *= radix
    return lam


def decode_digit(lam: int, v: int, m: int) -> int:
    """Digit of record v (1-based) in lam."""
    radix = m * m + 1
    return (lam // radix ** (v - 1)) % radix


def decode(lam: int, m: int):
    """All m digits of lam, record order."""
    return [decode_digit(lam, v, m) for v in range(1, m + 1)]


def update_digit(lam: int, v: int, dnew: int, m: int) -> int:
    """Replace digit v with dnew; O(1) word arithmetic.

    lam' = floor(lam / R^v) R^v + dnew R^(v-1) + lam mod R^(v-1), R = m^2+1.
    """
    if not (1 <= v <= m):
        raise ValueError(f"record index {v} out of [1, {m}]")
    if not (0 <= dnew <= m * m):
        raise ValueError(f"digit {dnew} out of [0, {m * m}]")
    radix = m * m + 1
    low_place = radix ** (v - 1)
    high_place = low_place * radix
    return (lam // high_place) * high_place + dnew * low_place + lam % low_place


class JumpTable:
    """Materialized jump row for one (lam, i): masses, cumulative sums, Tb."""

    __slots__ = ("mass", "cum", "tb", "total")

    def __init__(self, mass, cum, tb, total):
        self.mass = mass
        self.cum = cum
        self.tb = tb
        self.total = total


class TableStore:
    """Lazy memo of jump tables with a hard total-entry budget.

    Eviction is deliberately unsupported: exceeding the budget raises
    CapacityError so a misconfigured build fails immediately.
    """

    def __init__(self, budget: int = DEFAULT_TABLE_BUDGET):
        self.budget = budget
        self.entries_used = 0
        self._memo = {}

    def materialize(self, lam: int, i: int, m: int) -> JumpTable:
        """Jump table for row i of lam; cached after the first call."""
        key = (m, lam, i)
        table = self._memo.get(key)
        if table is not None:
            return table
        msq = m * m
        digits = decode(lam, m)
        beta = [0] + digits + [1]            # beta[v] = m^2 p(v); beta[m+1] = 1
        total = msq ** (m - i + 1)
        if self.entries_used + total > self.budget:
            raise CapacityError(
                f"table budget exhausted: {self.entries_used} + {total} "
                f"> {self.budget}"
            )
        mass = []
        prefix = 1  # running product of betabar over rejected records
        for j in range(i, m + 2):
            if j == i:
                mass.append(beta[i] * msq ** max(0, m - i))
            else:
                prefix *= msq - beta[j - 1]
                mass.append(prefix * beta[j] * msq ** max(0, m - j))
        cum = []
        acc = 0
        for w in mass:
            acc += w
            cum.append(acc)
        assert acc == total, "mass rows must sum to (m^2)^(m-i+1)"
        dtype = np.int8 if m + 1 < 127 else np.int64
        targets = np.arange(i, m + 2, dtype=dtype)
        tb = np.repeat(targets, mass)
        table = JumpTable(mass, cum, tb, total)
        self._memo[key] = table
        self.entries_used += total
        return table

    def query(self, lam: int, m: int, rng, work=None):
        """Subset sample of {1..m} with the grid probabilities encoded in lam.

        Starting at the first undecided record i = 1, draw du uniform on
        [1, (m^2)^(m-i+1)], jump to j = Tb[lam][i][du]; j <= m means record
        j is sampled and records i..j-1 are not, so the next undecided
        record is j + 1. A jump to m + 1 rejects everything left and ends
        the query.
        """
        out = []
        i = 1
        while i <= m:
            table = self.materialize(lam, i, m)
            du = rng.uniform_int(table.total)
            j = int(table.tb[du - 1])
            if work is not None:
                work.add(1)
            if j == m + 1:
                break
            out.append(j)
            i = j + 1
        return out


def roundup_thin_query(probs, store: TableStore, rng, work=None):
    """Exact subset sample for arbitrary real probabilities via the tables.

    Each probability is rounded UP to the grid (d = ceil(m^2 p)), the grid
    sampler runs, and every emitted record is kept with probability
    p / (d/m^2). The overestimate times the acceptance ratio cancels, so
    the output law is exactly independent Bernoulli(p).
    """
    probs = [check_prob(p) for p in probs]
    m = len(probs)
    if m == 0:
        return []
    msq = m * m
    digits = []
    for p in probs:
        d = -int(-(msq * p) // 1)  # ceil
        if d < msq and d / msq < p:  # float-rounding guard: keep d/m^2 >= p
            d += 1
        digits.append(d)
    lam = encode(digits, m)
    emitted = store.query(lam, m, rng, work)
    out = []
    for v in emitted:
        d = digits[v - 1]
        ratio = probs[v - 1] * msq / d
        if ratio >= 1.0 or rng.uniform01() < ratio:
            out.append(v)
    return out
