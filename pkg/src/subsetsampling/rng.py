"""Deterministic, seedable randomness kernel.

All samplers in this package draw their randomness through an explicitly
passed :class:`RngState`, so any run is reproducible from its 64-bit seed.
The generator is SplitMix64 (Steele, Lea, Flood; used as the seeder in the
xoroshiro family): a counter-based mixer, which makes batch generation with
numpy cheap while keeping the output sequence a pure function of
``(seed, position)``.

Reference: https://prng.di.unimi.it/splitmix64.c
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidProbabilityError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0 ** -53
_BLOCK = 4096
_U64_SPAN = 1 << 64


def _mix_block(seed, position, count):
    """SplitMix64 outputs for stream positions [position, position+count)."""
    z = np.uint64(seed) + np.arange(
        position + 1, position + count + 1, dtype=np.uint64
    ) * _GAMMA
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


class RngState:
    """One stream of random variates, owned by exactly one structure.

    The state is (seed, position); two states built from the same seed
    produce identical sequences on every platform, because all integer
    mixing is exact 64-bit arithmetic.

    uniform01() maps 53 mantissa bits to (k + 0.5) * 2**-53, which lies
    strictly inside (0, 1); log(u) is therefore always finite.
    """

    __slots__ = ("seed", "_base", "_i", "_raw", "_f64", "_flist")

    def __init__(self, seed: int, position: int = 0):
        self.seed = int(seed) % _U64_SPAN
        self._base = int(position)
        self._i = _BLOCK  # forces a refill on first use
        self._raw = None
        self._f64 = None
        self._flist = None

    @property
    def position(self) -> int:
        """Number of raw 64-bit words consumed so far."""
        if self._raw is None:
            return self._base
        return self._base - (_BLOCK - self._i)

    def _refill(self):
        self._raw = _mix_block(self.seed, self._base, _BLOCK)
        self._f64 = ((self._raw >> _S11).astype(np.float64) + 0.5) * _INV53
        self._flist = self._f64.tolist()
        self._base += _BLOCK
        self._i = 0

    # -- core draws ---------------------------------------------------------

    def uniform01(self) -> float:
        """Next uniform variate, strictly inside (0, 1). Advances by one word."""
        i = self._i
        if i >= _BLOCK:
            self._refill()
            i = 0
        self._i = i + 1
        return self._flist[i]

    def uniform01_batch(self, count: int) -> np.ndarray:
        """`count` uniforms in (0, 1) as a float64 array."""
        out = np.empty(count, dtype=np.float64)
        filled = 0
        while filled < count:
            i = self._i
            if i >= _BLOCK:
                self._refill()
                i = 0
            take = min(count - filled, _BLOCK - i)
            out[filled:filled + take] = self._f64[i:i + take]
            self._i = i + take
            filled += take
        return out

    def next_u64(self) -> int:
        """Next raw 64-bit word as a Python int."""
        i = self._i
        if i >= _BLOCK:
            self._refill()
            i = 0
        self._i = i + 1
        return int(self._raw[i])

    # -- derived variates ---------------------------------------------------

    def uniform_int(self, k: int) -> int:
        """Exactly unbiased uniform integer in [1, k], by rejection."""
        if k <= 0:
            raise ValueError(f"uniform_int needs k >= 1, got {k}")
        if k == 1:
            return 1
        limit = (_U64_SPAN // k) * k
        while True:
            r = self.next_u64()
            if r < limit:
                return 1 + r % k

    def geometric_skip(self, p: float) -> int:
        """Number of failures before the first success, P(g=k) = (1-p)^k p.

        Computed as floor(log u / log(1-p)) with log1p for stability when
        p is small. p must satisfy 0 < p <= 1; p = 1 always gives 0.
        """
        if not (0.0 < p <= 1.0):
            raise InvalidProbabilityError(f"geometric_skip needs 0 < p <= 1, got {p!r}")
        if p == 1.0:
            return 0
        return int(math.log(self.uniform01()) / math.log1p(-p))

    def geometric_batch(self, p: float, count: int) -> np.ndarray:
        """`count` independent geometric skips as an int64 array."""
        if not (0.0 < p <= 1.0):
            raise InvalidProbabilityError(f"geometric_batch needs 0 < p <= 1, got {p!r}")
        if p == 1.0:
            return np.zeros(count, dtype=np.int64)
        u = self.uniform01_batch(count)
        return (np.log(u) * (1.0 / math.log1p(-p))).astype(np.int64)

    def first_landing_truncated(self, p: float, n: int) -> int:
        """First success position j in [1, n], conditioned on one existing.

        P(j) = (1-p)^(j-1) p / (1 - (1-p)^n), drawn by CDF inversion:
        j = ceil(log(1 - U (1-(1-p)^n)) / log(1-p)), clamped to [1, n].
        """
        if not (0.0 < p <= 1.0):
            raise InvalidProbabilityError(
                f"first_landing_truncated needs 0 < p <= 1, got {p!r}"
            )
        if n <= 0:
            raise ValueError(f"first_landing_truncated needs n >= 1, got {n}")
        if n == 1 or p == 1.0:
            return 1
        d = math.log1p(-p)
        tail = -math.expm1(n * d)  # 1 - (1-p)^n
        j = math.ceil(math.log1p(-self.uniform01() * tail) / d)
        if j < 1:
            return 1
        if j > n:
            return n
        return j

    def spawn(self, stream: int) -> "RngState":
        """Independent state for a derived stream (seed offset by stream id)."""
        return RngState((self.seed + 0x9E3779B97F4A7C15 * (1 + stream)) % _U64_SPAN)

    def __repr__(self):
        return f"RngState(seed={self.seed}, position={self.position})"
