"""Scripted stand-ins for RngState, used by hand-trace tests."""

import numpy as np


class FakeRng:
    """Pops uniforms / geometric skips / landings from preloaded queues.

    Only the scalar entry points used by the small-input code paths are
    implemented; tests construct inputs small enough to stay on them.
    """

    def __init__(self, uniforms=(), geometrics=(), landings=(), ints=()):
        self.uniforms = list(uniforms)
        self.geometrics = list(geometrics)
        self.landings = list(landings)
        self.ints = list(ints)
        self.geo_calls = 0

    def uniform01(self):
        return self.uniforms.pop(0)

    def uniform01_batch(self, count):
        return np.array([self.uniform01() for _ in range(count)])

    def geometric_skip(self, p):
        self.geo_calls += 1
        return self.geometrics.pop(0)

    def first_landing_truncated(self, p, n):
        return self.landings.pop(0)

    def uniform_int(self, k):
        return self.ints.pop(0)
