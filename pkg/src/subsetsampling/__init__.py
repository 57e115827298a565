"""Dynamic weighted subset sampling.

A query draws a random subset of a keyed record set in which every record
appears independently with its own probability. Engines:

    dynamic:  in-memory, O(1 + mu) expected query, O(1) amortized updates
    em:       simulated external memory with exact I/O accounting (static)
    rss:      range-restricted sampling over real-valued keys (treap-based
              exact baseline, and a linear-space chunked variant)
    oracle:   brute-force laws and the statistical test kit

All randomness flows through an explicitly passed RngState, so runs are
reproducible from a 64-bit seed.
"""

from .dynamic import DynamicSampler, LevelInstance, bucket_level, level_count
from .errors import (
    CapacityError,
    DuplicateKeyError,
    FrameBudgetError,
    InvalidProbabilityError,
    KeyNotFoundError,
    UsageError,
    check_prob,
)
from .flat import BoundedBucket, SlotArray, WorkCounter
from .lookup import TableStore, encode, decode, update_digit, roundup_thin_query
from .rng import RngState

__all__ = [
    "DynamicSampler",
    "LevelInstance",
    "bucket_level",
    "level_count",
    "BoundedBucket",
    "SlotArray",
    "WorkCounter",
    "TableStore",
    "encode",
    "decode",
    "update_digit",
    "roundup_thin_query",
    "RngState",
    "CapacityError",
    "DuplicateKeyError",
    "FrameBudgetError",
    "InvalidProbabilityError",
    "KeyNotFoundError",
    "UsageError",
    "check_prob",
]

__version__ = "0.1.0"
