"""Counter-based random numbers.

Every random draw used by the oracle tracer and the renderer is a pure
function of ``(seed, counters...)``, so results never depend on how work
is split across threads.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    # splitmix64 finalizer; uint64 array arithmetic wraps silently
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_bits(seed, *counters):
    """64-bit hash of a seed and any number of broadcastable integer counters."""
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(np.asarray(seed, dtype=np.uint64)) + _GOLDEN)
        for c in counters:
            c = np.asarray(c).astype(np.uint64)
            h = _mix(h ^ _mix(c + _GOLDEN))
    return h


def uniform(seed, *counters):
    """Uniform floats in [0, 1) keyed by ``(seed, *counters)``."""
    bits = hash_bits(seed, *counters)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def generator(seed, *stream):
    """A numpy Generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))
