"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, counters...)``, so a path's
randomness does not depend on how paths are batched or scheduled. Streams are
built from the SplitMix64 finalizer applied once per key component.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1

# named substreams; values are arbitrary distinct constants
STREAMS = {
    "dW": 0x1,
    "jump_count": 0x2,
    "jump_time": 0x3,
    "jump_mark": 0x4,
    "probe": 0x5,
}


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(value):
    if isinstance(value, int):
        return np.uint64(value & _MASK64)
    arr = np.asarray(value)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    return arr.astype(np.int64).view(np.uint64)


def hash64(seed, stream, *counters):
    """Hash ``(seed, stream, counters...)`` to uint64, broadcasting counters."""
    if isinstance(stream, str):
        stream = STREAMS[stream]
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(_as_u64(int(seed))) + _GOLDEN)
        h = _mix(h ^ (np.uint64(stream) * _GOLDEN))
        for c in counters:
            h = _mix((h + _GOLDEN) ^ _as_u64(c))
    return h


def uniform(seed, stream, *counters):
    """Uniforms in the open interval (0, 1)."""
    h = hash64(seed, stream, *counters)
    out = ((h >> _S11).astype(np.float64) + 0.5) * 2.0**-53
    if all(np.ndim(c) == 0 for c in counters):
        return float(out[0])
    return out


def normal(seed, stream, *counters):
    """Standard normals by inverse-CDF transform of :func:`uniform`."""
    return ndtri(uniform(seed, stream, *counters))
