"""Stateless building blocks: frequency encoding, real SH, spatial hashing,
trilinear blending and vector-matrix tensor reconstruction.

All functions accept batched inputs along leading axes unless noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HASH_PRIMES = (1, 2654435761, 805459861)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

# corner c of a unit cell sits at offset (c >> 2 & 1, c >> 1 & 1, c & 1)
CORNER_OFFSETS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64)


class ConfigError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


class UnsupportedDegreeError(ValueError):
    pass


class OutOfCellError(ValueError):
    pass


@dataclass(frozen=True)
class PosEncConfig:
    num_freqs: int = 10
    include_input: bool = True

    def out_dim(self, in_dim: int = 3) -> int:
        return in_dim * (2 * self.num_freqs + (1 if self.include_input else 0))


@dataclass(frozen=True)
class HashConfig:
    table_size: int = 2 ** 19
    levels: int = 14
    base_resolution: int = 16
    max_resolution: int = 2048
    features_per_level: int = 2
    primes: tuple = field(default=HASH_PRIMES)

    def __post_init__(self):
        if self.table_size <= 0 or self.table_size & (self.table_size - 1):
            raise ConfigError(f"table_size must be a power of two, got {self.table_size}")
        if len(self.primes) != 3:
            raise ConfigError("exactly three hash primes are required")

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level


@dataclass
class VmComponents:
    """Vector and matrix factors of a 3-D tensor.

    ``vectors[a]`` is (R_a, len of axis a); ``matrices[a]`` is (R_a, n, m)
    spanning the two remaining axes in increasing order.
    """
    vectors: list
    matrices: list

    @property
    def ranks(self) -> tuple:
        return tuple(v.shape[0] for v in self.vectors)

    @property
    def shape(self) -> tuple:
        dims = [None, None, None]
        for a in range(3):
            if self.vectors[a].shape[0]:
                dims[a] = self.vectors[a].shape[1]
            rest = [b for b in range(3) if b != a]
            if self.matrices[a].shape[0]:
                dims[rest[0]], dims[rest[1]] = self.matrices[a].shape[1:]
        return tuple(dims)


def positional_encode(p, cfg: PosEncConfig) -> np.ndarray:
    """``[p, sin(2^0 pi p), cos(2^0 pi p), ..., cos(2^(L-1) pi p)]`` along the last axis."""
    p = np.asarray(p)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("positional_encode requires finite input")
    parts = [p] if cfg.include_input else []
    for k in range(cfg.num_freqs):
        arg = (2.0 ** k * math.pi) * p
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    if not parts:
        return np.zeros(p.shape[:-1] + (0,), dtype=p.dtype)
    return np.concatenate(parts, axis=-1)


def sh_basis(d, l_max: int) -> np.ndarray:
    """Real orthonormal SH values at unit direction(s) ``d``, ordered by (l, m)."""
    if not 0 <= l_max <= 3:
        raise UnsupportedDegreeError(f"SH degree {l_max} not supported (max 3)")
    d = np.asarray(d)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [np.full_like(x, SH_C0)]
    if l_max >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if l_max >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [SH_C2[0] * x * y,
                SH_C2[1] * y * z,
                SH_C2[2] * (2 * zz - xx - yy),
                SH_C2[3] * x * z,
                SH_C2[4] * (xx - yy)]
    if l_max >= 3:
        out += [SH_C3[0] * y * (3 * xx - yy),
                SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4 * zz - xx - yy),
                SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
                SH_C3[4] * x * (4 * zz - xx - yy),
                SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=-1)


def sh_color(k, d, l_max: int) -> np.ndarray:
    """Sigmoid of the SH expansion per channel. ``k`` is (..., 3, (l_max+1)^2)."""
    k = np.asarray(k)
    n = (l_max + 1) ** 2
    if k.shape[-1] != n:
        raise ValueError(f"expected {n} SH coefficients per channel, got {k.shape[-1]}")
    basis = sh_basis(d, l_max)
    return 0.5 * (1.0 + np.tanh(0.5 * np.einsum("...ck,...k->...c", k, basis)))


def hash_index(g, cfg: HashConfig) -> np.ndarray:
    """XOR of coordinate-times-prime with 32-bit wraparound, reduced mod table size."""
    g = np.asarray(g, dtype=np.int64)
    if np.any(g < 0):
        raise InvalidInputError("lattice coordinates must be nonnegative")
    g = g.astype(np.uint32)
    with np.errstate(over="ignore"):
        h = g[..., 0] * np.uint32(cfg.primes[0])
        h ^= g[..., 1] * np.uint32(cfg.primes[1])
        h ^= g[..., 2] * np.uint32(cfg.primes[2])
    return (h & np.uint32(cfg.table_size - 1)).astype(np.int64)


def trilinear_weights(local) -> np.ndarray:
    """(..., 3) local coordinates -> (..., 8) corner weights in CORNER_OFFSETS order."""
    local = np.asarray(local)
    w = np.ones(local.shape[:-1] + (8,), dtype=local.dtype)
    for c, off in enumerate(CORNER_OFFSETS):
        for a in range(3):
            w[..., c] *= local[..., a] if off[a] else 1 - local[..., a]
    return w


def trilinear(values_at_8_corners, local) -> np.ndarray:
    """Blend 8 corner values (8, D) at a local position in the unit cell."""
    vals = np.asarray(values_at_8_corners)
    local = np.asarray(local, dtype=np.float64)
    if vals.shape[0] != 8:
        raise ValueError("need exactly 8 corner values")
    if np.any(local < 0) or np.any(local > 1):
        raise OutOfCellError(f"local coordinate {local} outside the unit cell")
    w = trilinear_weights(local)
    return np.tensordot(w, vals, axes=(0, 0))


def vm_reconstruct(comp: VmComponents, idx) -> float:
    """Value of the VM-factored tensor at integer index ``(i, j, k)``."""
    i, j, k = idx
    shape = comp.shape
    for a, n in zip((i, j, k), shape):
        if n is not None and not 0 <= a < n:
            raise IndexError(f"index {tuple(idx)} outside tensor of shape {shape}")
    v1, v2, v3 = comp.vectors
    m23, m13, m12 = comp.matrices
    total = 0.0
    if v1.shape[0]:
        total += float(np.dot(v1[:, i], m23[:, j, k]))
    if v2.shape[0]:
        total += float(np.dot(v2[:, j], m13[:, i, k]))
    if v3.shape[0]:
        total += float(np.dot(v3[:, k], m12[:, i, j]))
    return total


def level_resolutions(cfg: HashConfig) -> np.ndarray:
    """Geometric progression of grid resolutions from base to max, rounded half up."""
    if cfg.levels < 2:
        raise ConfigError("at least two levels are required")
    if cfg.max_resolution < cfg.base_resolution:
        raise ConfigError("max_resolution must be >= base_resolution")
    b = math.exp((math.log(cfg.max_resolution) - math.log(cfg.base_resolution)) / (cfg.levels - 1))
    res = np.floor(cfg.base_resolution * b ** np.arange(cfg.levels) + 0.5).astype(np.int64)
    res[0], res[-1] = cfg.base_resolution, cfg.max_resolution
    return res
