"""Counter-based random numbers keyed by (seed, round, particle, step, substep).

Every draw is a pure function of its key and a draw index, so results never
depend on how particles are distributed over workers or in which order the
particle and step loops are nested.  The bit source is Philox-4x32-10
(Salmon et al., "Parallel random numbers: as easy as 1, 2, 3"), vectorised
over numpy arrays of particle indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngKey",
    "RngStream",
    "Substep",
    "philox4x32",
    "stream_for",
    "uniforms",
    "normals",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

_MAX_ROUND = (1 << 24) - 1
_MAX_SUBSTEP = (1 << 8) - 1
_MAX_U32 = (1 << 32) - 1


class Substep:
    """Substep tags separating independent uses of randomness in one step."""

    INIT = 0
    EXACT = 1
    PROPOSAL = 2
    ACCEPT = 3
    RESAMPLE = 4
    SWAP = 5
    PAIR = 6


def philox4x32(counter, key, rounds: int = 10):
    """Philox-4x32 block function.

    Parameters
    ----------
    counter : sequence of 4 array_like
        Counter words (each < 2**32), broadcast against each other.
    key : sequence of 2 int
        Key words (each < 2**32).

    Returns
    -------
    tuple of 4 ndarray of dtype uint64
        Output words, each < 2**32.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]), int(key[1])
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + _W0) & _MAX_U32
        k1 = (k1 + _W1) & _MAX_U32
    return c0, c1, c2, c3


def _key_words(seed: int) -> tuple[int, int]:
    seed = int(seed) & ((1 << 64) - 1)
    return seed & _MAX_U32, seed >> 32


def _check_fields(round: int, step: int, substep: int) -> None:
    if not 0 <= round <= _MAX_ROUND:
        raise ValueError(f"round index {round} outside [0, {_MAX_ROUND}]")
    if not 0 <= step <= _MAX_U32:
        raise ValueError(f"step index {step} outside [0, 2**32)")
    if not 0 <= substep <= _MAX_SUBSTEP:
        raise ValueError(f"substep {substep} outside [0, {_MAX_SUBSTEP}]")


def _to_unit(hi, lo):
    # 53 random bits mapped to the open interval (0, 1).
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def _blocks(seed, round, particles, step, substep, nblocks, offset=0):
    _check_fields(round, step, substep)
    particles = np.asarray(particles, dtype=np.uint64).reshape(-1, 1)
    idx = np.arange(offset, offset + nblocks, dtype=np.uint64).reshape(1, -1)
    word3 = np.uint64((round << 8) | substep)
    return philox4x32((idx, particles, np.uint64(step), word3), _key_words(seed))


def uniforms(seed, round, particles, step, substep, count, offset=0):
    """Uniform draws in (0, 1), one row per particle.

    Draw ``j`` of particle ``n`` depends only on
    ``(seed, round, n, step, substep, offset + j)``.

    Returns
    -------
    ndarray, shape (len(particles), count)
    """
    if offset % 2:
        raise ValueError("offset must be even (two uniforms per block)")
    nblocks = (count + 1) // 2
    w0, w1, w2, w3 = _blocks(seed, round, particles, step, substep, nblocks, offset // 2)
    out = np.empty(w0.shape + (2,))
    out[..., 0] = _to_unit(w0, w1)
    out[..., 1] = _to_unit(w2, w3)
    return out.reshape(w0.shape[0], -1)[:, :count]


def normals(seed, round, particles, step, substep, count, offset=0):
    """Standard normal draws via Box-Muller, one row per particle."""
    u = uniforms(seed, round, particles, step, substep, 2 * ((count + 1) // 2), 2 * offset)
    u1, u2 = u[:, 0::2], u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty((u.shape[0], u1.shape[1], 2))
    out[..., 0] = r * np.cos(theta)
    out[..., 1] = r * np.sin(theta)
    return out.reshape(u.shape[0], -1)[:, :count]


@dataclass(frozen=True)
class RngKey:
    """Full coordinates of one random stream."""

    seed: int
    round: int = 0
    particle: int = 0
    step: int = 0
    substep: int = 0

    def __post_init__(self):
        _check_fields(self.round, self.step, self.substep)
        if not 0 <= self.particle <= _MAX_U32:
            raise ValueError(f"particle index {self.particle} outside [0, 2**32)")


class RngStream:
    """Sequential view of the stream addressed by one key.

    Successive calls consume successive blocks of the counter, so two streams
    built from the same key produce identical sequences.
    """

    def __init__(self, key: RngKey):
        self.key = key
        self._position = 0

    def _take(self, nblocks):
        k = self.key
        words = _blocks(k.seed, k.round, [k.particle], k.step, k.substep, nblocks, self._position)
        self._position += nblocks
        return [w[0] for w in words]

    def uniform(self, size: int = 1) -> np.ndarray:
        w0, w1, w2, w3 = self._take((size + 1) // 2)
        out = np.column_stack([_to_unit(w0, w1), _to_unit(w2, w3)]).ravel()
        return out[:size]

    def normal(self, size: int = 1) -> np.ndarray:
        u = self.uniform(2 * ((size + 1) // 2))
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)]).ravel()[:size]

    def categorical(self, probs, size: int = 1) -> np.ndarray:
        """Indices drawn from ``probs`` by inversion."""
        cdf = np.cumsum(np.asarray(probs, dtype=float))
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, self.uniform(size), side="right")
        return np.minimum(idx, len(cdf) - 1)


def stream_for(key: RngKey) -> RngStream:
    return RngStream(key)
