"""Exception types shared across the package."""


class InvalidProbabilityError(ValueError):
    """A probability was NaN or outside [0, 1]."""


class DuplicateKeyError(KeyError):
    """Insertion of a key that is already stored."""


class KeyNotFoundError(KeyError):
    """Lookup/update/delete of a key that is not stored."""


class CapacityError(RuntimeError):
    """A hard capacity limit (table budget, law size) would be exceeded."""


class FrameBudgetError(RuntimeError):
    """More block frames pinned than the simulated memory allows.

    This signals an algorithm bug, not a recoverable condition.
    """


class UsageError(ValueError):
    """Bad command-line arguments or malformed workload files."""


def check_prob(p):
    """Validate a probability at an ingestion boundary and return it as float.

    Rejects NaN and values outside [0, 1].
    """
    p = float(p)
    if not (0.0 <= p <= 1.0):  # NaN fails both comparisons
        raise InvalidProbabilityError(f"probability must be in [0, 1], got {p!r}")
    return p
