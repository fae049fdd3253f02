"""Counter-based random streams.

Every random number in the package is a pure function of a 64-bit key and a
counter, so results do not depend on evaluation order, thread count or
backend.  The mixing function is the SplitMix64 finalizer; the uniform stream
for key ``s`` is exactly the SplitMix64 sequence seeded with ``s``.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MUL1 = np.uint64(0xBF58476D1CE4E5B9)
MUL2 = np.uint64(0x94D049BB133111EB)
INV_2_53 = 1.0 / 9007199254740992.0

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def mix64(z):
    """SplitMix64 finalizer on a uint64 scalar or array (bijective)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * MUL1
        z = (z ^ (z >> _S27)) * MUL2
    return z ^ (z >> _S31)


def as_u64(value):
    """Map a Python int (possibly negative or > 2**63) onto uint64."""
    return np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)


def substream(key, index):
    """Key of the ``index``-th child stream of ``key``."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(key) ^ mix64(idx + GOLDEN))


def uniform(key, counter):
    """Uniform doubles in [0, 1) for (key, counter); broadcasts."""
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(key + (counter + np.uint64(1)) * GOLDEN)
    return (z >> _S11).astype(np.float64) * INV_2_53


def normal(key, counter):
    """Standard normal draws; draw ``c`` consumes uniform counters 2c, 2c+1."""
    counter = np.asarray(counter, dtype=np.uint64)
    u1 = uniform(key, counter * np.uint64(2))
    u2 = uniform(key, counter * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


class CounterNormal:
    """Minimal generator facade over one counter stream (``standard_normal`` only)."""

    def __init__(self, key, start=0):
        self.key = as_u64(key)
        self.counter = int(start)

    def standard_normal(self):
        value = float(normal(self.key, self.counter))
        self.counter += 1
        return value
