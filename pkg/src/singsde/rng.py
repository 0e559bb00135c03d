"""Counter-based random streams keyed by (seed, path index).

Every variate is a pure function of ``(seed, path, stream, step, slot)``, so a
path's noise does not depend on how paths are batched or which worker
generates them. The block cipher is Philox-4x64-10, vectorised with numpy
over arbitrary counter/key arrays; normals come from the inverse CDF.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# stream tags, so independent uses of one (seed, path) never share counters
BROWNIAN = 0
INITIAL = 1
TAIL = 2
AUX = 3


def _mulhilo(a, b):
    a0, a1 = a & _LO32, a >> _S32
    b0, b1 = b & _LO32, b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _LO32) + (p10 & _LO32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox-4x64 block function.

    ``counter`` has shape (..., 4) and ``key`` broadcasts against (..., 2);
    returns (..., 4) uint64. Matches ``numpy.random.Philox`` block output.
    """
    c = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0 = np.broadcast_to(k[..., 0], c0.shape).copy()
    k1 = np.broadcast_to(k[..., 1], c0.shape).copy()
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 += _W0
                k1 += _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def _to_unit(bits: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, centred in its cell: strictly inside (0, 1)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniforms(seed: int, paths, stream: int, start_step: int, n_steps: int,
             width: int) -> np.ndarray:
    """Uniform(0,1) array of shape (n_steps, len(paths), width).

    Each (seed, path, stream) is one flat sequence: value j of step s sits at
    position ``s * width + j``, four positions per Philox block with the
    block index as counter. Any step range can be drawn independently.
    """
    paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
    lo = start_step * width
    hi = (start_step + n_steps) * width
    b0, b1 = lo // 4, -(-hi // 4)
    ctr = np.zeros((paths.size, b1 - b0, 4), dtype=np.uint64)
    ctr[..., 0] = np.arange(b0, b1, dtype=np.uint64)[None, :]
    ctr[..., 2] = np.uint64(stream)
    key = np.zeros((paths.size, 1, 2), dtype=np.uint64)
    key[..., 0] = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    key[..., 1] = paths[:, None]
    bits = philox4x64(ctr, key).reshape(paths.size, -1)
    off = lo - 4 * b0
    bits = bits[:, off:off + n_steps * width].reshape(paths.size, n_steps, width)
    return _to_unit(bits.transpose(1, 0, 2))


def normals(seed: int, paths, stream: int, start_step: int, n_steps: int,
            width: int) -> np.ndarray:
    """Standard normal array of shape (n_steps, len(paths), width)."""
    return ndtri(uniforms(seed, paths, stream, start_step, n_steps, width))


class PathStreams:
    """Per-path Brownian noise for an ensemble, generated in step chunks."""

    def __init__(self, seed: int, paths, width: int, stream: int = BROWNIAN):
        self.seed = int(seed)
        self.paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
        self.width = int(width)
        self.stream = int(stream)

    def block(self, start_step: int, n_steps: int) -> np.ndarray:
        return normals(self.seed, self.paths, self.stream, start_step, n_steps,
                       self.width)

    def initial(self, width: int | None = None) -> np.ndarray:
        """One standard-normal vector per path for initial-law sampling."""
        w = self.width if width is None else width
        return normals(self.seed, self.paths, INITIAL, 0, 1, w)[0]
