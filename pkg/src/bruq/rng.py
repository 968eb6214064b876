"""Counter-based random numbers for reproducible, order-independent Monte Carlo.

The generator is Philox4x32-10 (Salmon et al., "Parallel random numbers:
as easy as 1, 2, 3", SC'11), evaluated in vectorised form with numpy.  Every
draw is a pure function of ``(seed, stream, step, index)``::

    key     = (seed mod 2**32, seed div 2**32)
    counter = (index mod 2**32, index div 2**32, step, stream)

so trajectory ``k`` at step ``s`` gets the same uniform no matter how the
ensemble is chunked across workers.  Words 0 and 1 of the Philox output block
are combined into a 53-bit double in [0, 1).
"""

from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
ROUNDS = 10

# stream tags; distinct consumers never share counters
STREAM_LAB = 0
STREAM_GUIDANCE = 1
STREAM_GUIDANCE_REFERENCE = 2


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = ROUNDS) -> np.ndarray:
    """Apply the Philox4x32 bijection.

    ``counter`` has shape ``(4, ...)`` with values in [0, 2**32).  Returns an
    array of the same shape with dtype uint32.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = c[0], c[1], c[2], c[3]
    k0, k1 = key[0] & 0xFFFFFFFF, key[1] & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
    return np.stack([c0, c1, c2, c3]).astype(np.uint32)


def _seed_key(seed: int) -> tuple[int, int]:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, indices, step: int = 0, stream: int = STREAM_LAB) -> np.ndarray:
    """Uniform doubles in [0, 1), one per entry of ``indices``."""
    idx = np.asarray(indices, dtype=np.uint64)
    counter = np.empty((4,) + idx.shape, dtype=np.uint64)
    counter[0] = idx & _MASK32
    counter[1] = idx >> np.uint64(32)
    counter[2] = np.uint64(step & 0xFFFFFFFF)
    counter[3] = np.uint64(stream & 0xFFFFFFFF)
    out = philox4x32(counter, _seed_key(seed)).astype(np.uint64)
    a = out[0] >> np.uint64(5)  # 27 bits
    b = out[1] >> np.uint64(6)  # 26 bits
    return (a.astype(np.float64) * 67108864.0 + b.astype(np.float64)) / 9007199254740992.0


def uniform(seed: int, index: int = 0, step: int = 0, stream: int = STREAM_LAB) -> float:
    return float(uniforms(seed, [index], step=step, stream=stream)[0])
