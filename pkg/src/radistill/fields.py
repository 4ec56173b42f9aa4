"""Scene representations split into an encoder stage and a decoder stage.

Each field maps a point ``x`` in [-1, 1]^3 and a unit direction ``d`` to a
raw density and an RGB colour. ``phi1`` produces the intermediate feature,
``phi2`` decodes it:

==============  ===============================  ===========================
arch            phi1                             phi2
==============  ===============================  ===========================
``mlp``         first K ReLU layers              remaining layers + heads
``sparse_grid`` trilinear density/SH payload     identity density, SH colour
``vm``          vector-matrix component values   summed density, MLP colour
``hash``        multiresolution hash features    small MLP
==============  ===============================  ===========================
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from . import autograd as ag
from .autograd import Tensor, no_grad
from .encodings import (CORNER_OFFSETS, ConfigError, HashConfig, PosEncConfig,
                        VmComponents, hash_index, level_resolutions,
                        positional_encode, sh_basis, trilinear_weights)
from .optim import ParamStore

ARCH_TAGS = ("mlp", "sparse_grid", "vm", "hash")
ARCH_ALIASES = {
    "mlp": "mlp", "nerf": "mlp",
    "grid": "sparse_grid", "sparse_grid": "sparse_grid", "plenoxels": "sparse_grid",
    "tensors": "sparse_grid",
    "vm": "vm", "tensorf": "vm",
    "hash": "hash", "ngp": "hash", "ingp": "hash",
}
BASE_LR = 0.02
DECODER_LR = 1e-3


class OutOfBoundsError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def canonical_arch(name: str) -> str:
    try:
        return ARCH_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; choose from mlp, grid, vm, hash") from None


class RadianceSample(NamedTuple):
    sigma: np.ndarray
    rgb: np.ndarray


@dataclass(frozen=True)
class DensityClip:
    a: float = -2.0
    b: float = 7.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f"clip bounds need a < b, got [{self.a}, {self.b}]")


def clip_density(sigma, clip: DensityClip = DensityClip()):
    return np.minimum(np.maximum(sigma, clip.a), clip.b)


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class MlpFieldConfig:
    depth: int = 8
    width: int = 128
    split_k: int = 4
    dir_branch_width: int = 128
    pos_enc: PosEncConfig = PosEncConfig(10, True)
    dir_enc: PosEncConfig = PosEncConfig(4, True)

    def validate(self):
        if not 1 <= self.split_k < self.depth:
            raise ConfigError(f"split_k must lie in [1, depth), got {self.split_k}")
        if self.width < 1 or self.dir_branch_width < 1:
            raise ConfigError("layer widths must be positive")

    @classmethod
    def full_scale(cls):
        return cls(width=256)


@dataclass(frozen=True)
class SparseGridFieldConfig:
    resolution: tuple = (64, 64, 64)
    sh_degree: int = 2
    init_density: float = 0.1

    def validate(self):
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ConfigError(f"grid resolution must be three sizes >= 2, got {self.resolution}")
        if not 0 <= self.sh_degree <= 3:
            raise ConfigError("sh_degree must be in 0..3")

    @property
    def n_sh(self) -> int:
        return (self.sh_degree + 1) ** 2

    @classmethod
    def full_scale(cls):
        return cls(resolution=(128, 128, 128))


@dataclass(frozen=True)
class VmFieldConfig:
    resolution: int = 64
    density_per_pair: int = 4
    appearance_per_pair: int = 12
    decoder_width: int = 128
    dir_enc: PosEncConfig = PosEncConfig(4, True)
    init_std: float = 0.1

    def validate(self):
        if self.resolution < 2:
            raise ConfigError("VM resolution must be >= 2")
        if self.density_per_pair < 1 or self.appearance_per_pair < 1:
            raise ConfigError("VM needs at least one density and one appearance component per pair")

    @property
    def total_components(self) -> int:
        return 3 * (self.density_per_pair + self.appearance_per_pair)

    @classmethod
    def full_scale(cls):
        return cls(resolution=300)


@dataclass(frozen=True)
class HashFieldConfig:
    hash: HashConfig = HashConfig(table_size=2 ** 15, levels=14, base_resolution=16,
                                  max_resolution=256, features_per_level=2)
    decoder_width: int = 64
    dir_enc: PosEncConfig = PosEncConfig(4, True)

    def validate(self):
        level_resolutions(self.hash)
        if self.decoder_width < 1:
            raise ConfigError("decoder width must be positive")

    @classmethod
    def full_scale(cls):
        return cls(hash=HashConfig(table_size=2 ** 19, levels=14, base_resolution=16,
                                   max_resolution=2048, features_per_level=2))


CONFIG_TYPES = {
    "mlp": MlpFieldConfig,
    "sparse_grid": SparseGridFieldConfig,
    "vm": VmFieldConfig,
    "hash": HashFieldConfig,
}


def default_config(arch: str, full_scale: bool = False):
    cls = CONFIG_TYPES[canonical_arch(arch)]
    return cls.full_scale() if full_scale else cls()


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(arch: str, data: dict):
    arch = canonical_arch(arch)
    cls = CONFIG_TYPES[arch]
    data = dict(data)
    for key in ("pos_enc", "dir_enc"):
        if key in data and isinstance(data[key], dict):
            data[key] = PosEncConfig(**data[key])
    if "hash" in data and isinstance(data["hash"], dict):
        h = dict(data["hash"])
        h["primes"] = tuple(h.get("primes", HashConfig().primes))
        data["hash"] = HashConfig(**h)
    if "resolution" in data and isinstance(data["resolution"], list):
        data["resolution"] = tuple(data["resolution"])
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {arch} config keys: {sorted(unknown)}")
    return cls(**data)


# ---------------------------------------------------------------- helpers

def _kaiming(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def _add_linear(store, rng, name, fan_in, fan_out, lr_scale):
    store.add(f"{name}.w", _kaiming(rng, fan_in, fan_out, store.dtype), lr_scale)
    store.add(f"{name}.b", np.zeros(fan_out, dtype=store.dtype), lr_scale)


def _dense(store, name, x, act=None):
    y = ag.linear(x, store.tensor(f"{name}.w"), store.tensor(f"{name}.b"))
    if act == "relu":
        return ag.relu(y)
    if act == "sigmoid":
        return ag.sigmoid(y)
    return y


def _to_unit(x):
    return (x + 1.0) * 0.5


class FieldPair:
    """Base class: a radiance field as an encoder stage and a decoder stage."""

    arch_tag: str = ""

    def __init__(self, config, params: ParamStore, seed: int = 0):
        self.config = config
        self.params = params
        self.seed = seed

    @property
    def dtype(self):
        return self.params.dtype

    @property
    def feature_dim(self) -> int:
        raise NotImplementedError

    # graph-building forms used by training and rendering
    def phi1(self, x: np.ndarray, d: np.ndarray) -> Tensor:
        raise NotImplementedError

    def phi2(self, feat: Tensor, d: np.ndarray) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def forward(self, x, d) -> tuple[Tensor, Tensor]:
        return self.phi2(self.phi1(x, d), d)

    def decoder_segments(self) -> list[str]:
        """Names of parameter segments that belong to the decoder stage."""
        return []

    def _inputs(self, x, d):
        x = np.asarray(x, dtype=self.dtype).reshape(-1, 3)
        d = np.asarray(d, dtype=self.dtype).reshape(-1, 3)
        if x.shape[0] != d.shape[0]:
            raise ShapeError(f"{x.shape[0]} points but {d.shape[0]} directions")
        return x, d

    def _check_bounds(self, x):
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1.0):
            raise OutOfBoundsError("points must lie inside [-1, 1]^3")

    # array-in, array-out forms
    def eval_phi1(self, x, d) -> np.ndarray:
        x, d = self._inputs(x, d)
        self._check_bounds(x)
        with no_grad():
            return self.phi1(x, d).data

    def eval_phi2(self, feat, d) -> RadianceSample:
        feat = np.asarray(feat, dtype=self.dtype)
        if feat.shape[-1] != self.feature_dim:
            raise ShapeError(f"feature length must be {self.feature_dim}, got {feat.shape[-1]}")
        feat = feat.reshape(-1, self.feature_dim)
        d = np.asarray(d, dtype=self.dtype).reshape(-1, 3)
        with no_grad():
            sigma, rgb = self.phi2(Tensor(feat), d)
        return RadianceSample(sigma.data, rgb.data)

    def eval_field(self, x, d) -> RadianceSample:
        return self.eval_phi2(self.eval_phi1(x, d), d)

    def astype(self, dtype) -> "FieldPair":
        return type(self)(self.config, self.params.astype(dtype), self.seed)

    def copy(self) -> "FieldPair":
        return type(self)(self.config, self.params.copy(), self.seed)


# ---------------------------------------------------------------- MLP

class MlpField(FieldPair):
    arch_tag = "mlp"

    @classmethod
    def create(cls, config: MlpFieldConfig, rng, dtype=np.float32):
        config.validate()
        store = ParamStore(dtype)
        lr = DECODER_LR / BASE_LR
        fan_in = config.pos_enc.out_dim(3)
        for i in range(config.depth):
            _add_linear(store, rng, f"layer{i}", fan_in, config.width, lr)
            fan_in = config.width
        _add_linear(store, rng, "sigma", config.width, 1, lr)
        _add_linear(store, rng, "feature", config.width, config.width, lr)
        _add_linear(store, rng, "dir", config.width + config.dir_enc.out_dim(3),
                    config.dir_branch_width, lr)
        _add_linear(store, rng, "rgb", config.dir_branch_width, 3, lr)
        return store

    @property
    def feature_dim(self):
        return self.config.width

    def phi1(self, x, d):
        h = Tensor(positional_encode(x, self.config.pos_enc))
        for i in range(self.config.split_k):
            h = _dense(self.params, f"layer{i}", h, "relu")
        return h

    def phi2(self, feat, d):
        h = feat
        for i in range(self.config.split_k, self.config.depth):
            h = _dense(self.params, f"layer{i}", h, "relu")
        sigma = ag.reshape(_dense(self.params, "sigma", h), (-1,))
        f = _dense(self.params, "feature", h)
        g = ag.concat([f, Tensor(positional_encode(d, self.config.dir_enc))])
        g = _dense(self.params, "dir", g, "relu")
        return sigma, _dense(self.params, "rgb", g, "sigmoid")

    def decoder_segments(self):
        return [n for n in self.params.segments
                if not n.startswith("layer") or int(n[5:].split(".")[0]) >= self.config.split_k]

    def with_split(self, k: int) -> "MlpField":
        """Same weights, different encoder/decoder boundary."""
        return MlpField(replace(self.config, split_k=k), self.params, self.seed)


# ---------------------------------------------------------------- sparse grid

def _grid_corners(u, res):
    """Flat corner indices (N, 8) and trilinear weights for unit coords ``u``."""
    res = np.asarray(res)
    pos = u * (res - 1)
    base = np.clip(np.floor(pos).astype(np.int64), 0, res - 2)
    local = pos - base
    corners = base[:, None, :] + CORNER_OFFSETS[None, :, :]
    flat = (corners[..., 0] * res[1] + corners[..., 1]) * res[2] + corners[..., 2]
    return flat, trilinear_weights(local)


class SparseGridField(FieldPair):
    arch_tag = "sparse_grid"

    @classmethod
    def create(cls, config: SparseGridFieldConfig, rng, dtype=np.float32):
        config.validate()
        n = int(np.prod(config.resolution))
        store = ParamStore(dtype)
        store.add("density", np.full((n, 1), config.init_density, dtype=dtype))
        store.add("sh", np.zeros((n, 3 * config.n_sh), dtype=dtype))
        return store

    @property
    def feature_dim(self):
        return 1 + 3 * self.config.n_sh

    def phi1(self, x, d):
        idx, w = _grid_corners(_to_unit(x), self.config.resolution)
        return ag.concat([ag.gather_blend(self.params.tensor("density"), idx, w),
                          ag.gather_blend(self.params.tensor("sh"), idx, w)])

    def phi2(self, feat, d):
        sigma = ag.reshape(feat[:, 0], (-1,))
        coeffs = ag.reshape(feat[:, 1:], (-1, 3, self.config.n_sh))
        basis = sh_basis(np.asarray(d, dtype=self.dtype), self.config.sh_degree)
        return sigma, ag.sigmoid(ag.rowwise_dot(coeffs, basis))

    def grid_view(self) -> np.ndarray:
        """Payload as a (Nx, Ny, Nz, 1 + 3 * n_sh) array (a view)."""
        res = tuple(self.config.resolution)
        return np.concatenate([self.params.view("density"), self.params.view("sh")],
                              axis=1).reshape(res + (-1,))


# ---------------------------------------------------------------- VM

_PAIRS = ((0, (1, 2)), (1, (0, 2)), (2, (0, 1)))


def _line_corners(u, n):
    pos = u * (n - 1)
    base = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    t = pos - base
    return np.stack([base, base + 1], axis=-1), np.stack([1 - t, t], axis=-1)


def _plane_corners(ub, uc, n):
    ib, wb = _line_corners(ub, n)
    ic, wc = _line_corners(uc, n)
    idx = ib[:, :, None] * n + ic[:, None, :]
    w = wb[:, :, None] * wc[:, None, :]
    return idx.reshape(-1, 4), w.reshape(-1, 4)


class VmField(FieldPair):
    arch_tag = "vm"

    @classmethod
    def create(cls, config: VmFieldConfig, rng, dtype=np.float32):
        config.validate()
        n = config.resolution
        store = ParamStore(dtype)
        for kind, r in (("density", config.density_per_pair), ("app", config.appearance_per_pair)):
            for a, _ in _PAIRS:
                store.add(f"{kind}_line{a}", rng.normal(0, config.init_std, (n, r)).astype(dtype))
                store.add(f"{kind}_plane{a}", rng.normal(0, config.init_std, (n * n, r)).astype(dtype))
        lr = DECODER_LR / BASE_LR
        fan_in = 3 * config.appearance_per_pair + config.dir_enc.out_dim(3)
        _add_linear(store, rng, "dec0", fan_in, config.decoder_width, lr)
        _add_linear(store, rng, "dec1", config.decoder_width, config.decoder_width, lr)
        _add_linear(store, rng, "dec_rgb", config.decoder_width, 3, lr)
        return store

    @property
    def feature_dim(self):
        return self.config.total_components

    @property
    def n_density(self):
        return 3 * self.config.density_per_pair

    def phi1(self, x, d):
        u = _to_unit(x)
        n = self.config.resolution
        line_idx = [_line_corners(u[:, a], n) for a in range(3)]
        plane_idx = [_plane_corners(u[:, b], u[:, c], n) for _, (b, c) in _PAIRS]
        parts = []
        for kind in ("density", "app"):
            for a, _ in _PAIRS:
                line = ag.gather_blend(self.params.tensor(f"{kind}_line{a}"), *line_idx[a])
                plane = ag.gather_blend(self.params.tensor(f"{kind}_plane{a}"), *plane_idx[a])
                parts.append(line * plane)
        return ag.concat(parts)

    def phi2(self, feat, d):
        sigma = ag.sum_(feat[:, :self.n_density], axis=1)
        h = ag.concat([feat[:, self.n_density:], Tensor(positional_encode(d, self.config.dir_enc))])
        h = _dense(self.params, "dec0", h, "relu")
        h = _dense(self.params, "dec1", h, "relu")
        return sigma, _dense(self.params, "dec_rgb", h, "sigmoid")

    def decoder_segments(self):
        return [n for n in self.params.segments if n.startswith("dec")]

    def components(self, kind: str = "density") -> VmComponents:
        n = self.config.resolution
        vectors = [self.params.view(f"{kind}_line{a}").T for a in range(3)]
        matrices = [self.params.view(f"{kind}_plane{a}").T.reshape(-1, n, n) for a in range(3)]
        return VmComponents(vectors, matrices)

    def line_plane_segments(self) -> list[str]:
        return [n for n in self.params.segments if "_line" in n or "_plane" in n]


# ---------------------------------------------------------------- hash

class HashField(FieldPair):
    arch_tag = "hash"

    @classmethod
    def create(cls, config: HashFieldConfig, rng, dtype=np.float32):
        config.validate()
        h = config.hash
        store = ParamStore(dtype)
        store.add("tables", rng.uniform(-1e-4, 1e-4, (h.levels * h.table_size, h.features_per_level))
                  .astype(dtype))
        lr = DECODER_LR / BASE_LR
        w = config.decoder_width
        _add_linear(store, rng, "dec0", h.feature_dim, w, lr)
        _add_linear(store, rng, "dec_sigma", w, 1, lr)
        _add_linear(store, rng, "dec1", w + config.dir_enc.out_dim(3), w, lr)
        _add_linear(store, rng, "dec_rgb", w, 3, lr)
        return store

    def __init__(self, config, params, seed=0):
        super().__init__(config, params, seed)
        self._res = level_resolutions(config.hash).astype(np.float64)

    @property
    def feature_dim(self):
        return self.config.hash.feature_dim

    def lookup(self, x):
        """Flat table indices (N, L, 8) and weights (N, L, 8)."""
        h = self.config.hash
        p = np.asarray(h.primes, dtype=np.uint64)
        idx, w = _kernels.hash_corners(np.ascontiguousarray(_to_unit(x), dtype=np.float64), self._res,
                                       h.table_size, p[0], p[1], p[2])
        return idx, w.astype(self.dtype, copy=False)

    def phi1(self, x, d):
        idx, w = self.lookup(x)
        feats = ag.gather_blend(self.params.tensor("tables"), idx, w)   # (N, L, F)
        return ag.reshape(feats, (len(x), -1))

    def phi2(self, feat, d):
        h1 = _dense(self.params, "dec0", feat, "relu")
        sigma = ag.reshape(_dense(self.params, "dec_sigma", h1), (-1,))
        h2 = ag.concat([h1, Tensor(positional_encode(d, self.config.dir_enc))])
        h2 = _dense(self.params, "dec1", h2, "relu")
        return sigma, _dense(self.params, "dec_rgb", h2, "sigmoid")

    def decoder_segments(self):
        return [n for n in self.params.segments if n.startswith("dec")]


FIELD_TYPES = {
    "mlp": MlpField,
    "sparse_grid": SparseGridField,
    "vm": VmField,
    "hash": HashField,
}


def init_field(arch: str, config=None, seed: int = 0, dtype=np.float32) -> FieldPair:
    """Fresh field with parameters drawn from a generator seeded by ``seed``."""
    arch = canonical_arch(arch)
    if config is None:
        config = default_config(arch)
    if not isinstance(config, CONFIG_TYPES[arch]):
        raise ConfigError(f"{arch} field needs a {CONFIG_TYPES[arch].__name__}")
    rng = np.random.default_rng(seed)
    cls = FIELD_TYPES[arch]
    return cls(config, cls.create(config, rng, dtype), seed)


def eval_phi1(field: FieldPair, x, d) -> np.ndarray:
    return field.eval_phi1(x, d)


def eval_phi2(field: FieldPair, feat, d) -> RadianceSample:
    return field.eval_phi2(feat, d)


def eval_field(field: FieldPair, x, d) -> RadianceSample:
    return field.eval_field(x, d)
