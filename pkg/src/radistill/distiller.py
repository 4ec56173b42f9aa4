"""Teacher-to-student conversion between field architectures.

Training runs in three cumulative stages:

1. encoder features of teacher and student are matched on sampled points
   (no decoding, no ray integration);
2. decoded density and colour are matched point-wise as well;
3. rendered pixels from random orbit cameras are matched on top.

Sparse-grid students have no separate encoder, so they skip the feature
term and match density and colour from the first step.
"""
from __future__ import annotations

import copy
import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .encodings import ConfigError
from .fields import (DensityClip, FieldPair, HashField, MlpField, ShapeError, SparseGridField,
                     VmField, canonical_arch, init_field)
from .optim import AdamState, ParamStore, adam_step, backward, lr_schedule
from .renderer import Camera, RenderConfig, orbit_cameras, pixel_rays, render_rays
from .scenes import AnalyticScene, ViewSet, make_viewset

PART_NAMES = ("volume", "density", "color", "rgb", "reg")


class ContractError(RuntimeError):
    pass


class NotApplicableError(ValueError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose (init, points, poses...)."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class DistillConfig:
    w_volume: float = 2e-3
    w_density: float = 2e-3
    w_color: float = 2e-3
    w_rgb: float = 1.0
    w_reg: float = 1.0
    clip: DensityClip | None = DensityClip(-2.0, 7.0)
    total_steps: int = 20000
    stage1_steps: int = 3000
    stage2_steps: int = 5000
    batch_rays: int = 4096
    batch_points: int = 2 ** 14
    tv_rate: float = 1e-5
    l1_rate: float = 1e-4
    lr: float = 0.02
    adapter_lr: float = 1e-3
    seed: int = 0
    point_mode: str = "uniform"
    render: RenderConfig = RenderConfig(n_samples=64, stratified=True)
    orbit_radius: float = 4.0
    elevation: tuple = (-30.0, 80.0)
    image_size: int = 128
    poses_per_step: int = 4

    def __post_init__(self):
        if self.stage1_steps + self.stage2_steps > self.total_steps:
            raise ConfigError("stage1_steps + stage2_steps exceeds total_steps")
        if min(self.w_volume, self.w_density, self.w_color, self.w_rgb, self.w_reg) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.point_mode not in ("uniform", "rays"):
            raise ConfigError(f"point_mode must be 'uniform' or 'rays', got {self.point_mode!r}")

    def stage(self, step: int) -> int:
        if step < self.stage1_steps:
            return 1
        if step < self.stage1_steps + self.stage2_steps:
            return 2
        return 3

    def scaled(self, total_steps: int) -> "DistillConfig":
        """Same stage proportions over a different step budget."""
        f = total_steps / self.total_steps
        return replace(self, total_steps=total_steps, stage1_steps=int(self.stage1_steps * f),
                       stage2_steps=int(self.stage2_steps * f))


# ---------------------------------------------------------------- logging

@dataclass
class StepRecord:
    step: int
    stage: int
    volume: float = 0.0
    density: float = 0.0
    color: float = 0.0
    rgb: float = 0.0
    reg: float = 0.0
    total: float = 0.0
    lr: float = 0.0
    wall_ms: float = 0.0


@dataclass
class StageReport:
    records: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def stage_mask(self, stage: int) -> np.ndarray:
        return self.column("stage") == stage

    def to_ndjson(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ndjson())
        return path

    @classmethod
    def read(cls, path) -> "StageReport":
        recs = [StepRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
        return cls(recs)


# ---------------------------------------------------------------- adapter

class FeatureAdapter:
    """Learnable linear map from student features into the teacher's feature space."""

    def __init__(self, student_dim: int, teacher_dim: int, identity: bool = False, seed: int = 0,
                 dtype=np.float32):
        if identity and student_dim != teacher_dim:
            raise ShapeError("identity adapter needs equal feature dims")
        self.student_dim = student_dim
        self.teacher_dim = teacher_dim
        self.identity = identity
        self.params = ParamStore(dtype)
        if not identity:
            rng = np.random.default_rng(seed)
            bound = 1.0 / math.sqrt(student_dim)
            self.params.add("w", rng.uniform(-bound, bound, (student_dim, teacher_dim)))
            self.params.add("b", np.zeros(teacher_dim))

    @classmethod
    def between(cls, teacher: FieldPair, student: FieldPair, seed: int = 0) -> "FeatureAdapter":
        same = teacher.arch_tag == student.arch_tag and teacher.feature_dim == student.feature_dim
        return cls(student.feature_dim, teacher.feature_dim, same, seed, student.dtype)

    def __call__(self, feat: Tensor) -> Tensor:
        if feat.shape[-1] != self.student_dim:
            raise ShapeError(f"adapter expects {self.student_dim} features, got {feat.shape[-1]}")
        if self.identity:
            return feat
        return ag.linear(feat, self.params.tensor("w"), self.params.tensor("b"))


# ---------------------------------------------------------------- losses

def feature_loss(t_feat, s_feat: Tensor) -> Tensor:
    """Mean over the batch of the squared L2 distance between feature rows."""
    t_feat = np.asarray(t_feat)
    if t_feat.shape != s_feat.shape:
        raise ShapeError(f"teacher features {t_feat.shape} vs adapted student {s_feat.shape}")
    return ag.mse(s_feat, Tensor(t_feat.astype(s_feat.dtype))) * float(t_feat.shape[-1])


def volume_aligned_loss(teacher: FieldPair, student: FieldPair, adapter: FeatureAdapter, x, d) -> Tensor:
    with no_grad():
        t_feat = teacher.phi1(np.asarray(x, teacher.dtype), np.asarray(d, teacher.dtype)).data
    s_feat = student.phi1(np.asarray(x, student.dtype), np.asarray(d, student.dtype))
    return feature_loss(t_feat, adapter(s_feat))


def density_loss(sigma_t, sigma_s, clip: DensityClip | None = DensityClip()):
    """MSE between clipped teacher and clipped student densities.

    ``sigma_s`` may be a Tensor (graph) or an array (value only). With
    ``clip=None`` the raw densities are compared.
    """
    sigma_t = np.asarray(sigma_t, dtype=np.float64)
    if clip is not None:
        sigma_t = np.clip(sigma_t, clip.a, clip.b)
    if isinstance(sigma_s, Tensor):
        s = ag.clip(sigma_s, clip.a, clip.b) if clip is not None else sigma_s
        return ag.mse(s, Tensor(sigma_t.astype(s.dtype)))
    s = np.asarray(sigma_s, dtype=np.float64)
    if clip is not None:
        s = np.clip(s, clip.a, clip.b)
    return float(np.mean((sigma_t - s) ** 2))


def color_loss(c_t, c_s):
    if isinstance(c_s, Tensor):
        return ag.mse(c_s, Tensor(np.asarray(c_t, dtype=c_s.dtype)))
    return float(np.mean((np.asarray(c_t, np.float64) - np.asarray(c_s, np.float64)) ** 2))


rgb_loss = color_loss


def _tv_op(x: Tensor, spatial_shape: tuple) -> Tensor:
    """Sum over spatial axes of the mean squared forward difference."""
    arr = x.data.reshape(spatial_shape + (-1,))
    total = 0.0
    diffs = []
    for axis in range(len(spatial_shape)):
        if spatial_shape[axis] < 2:
            diffs.append(None)
            continue
        dif = np.diff(arr, axis=axis)
        diffs.append(dif)
        total += float(np.mean(dif * dif))

    def fn(g):
        out = np.zeros(arr.shape, dtype=x.dtype)
        for axis, dif in enumerate(diffs):
            if dif is None:
                continue
            gd = (2.0 * g / dif.size) * dif
            lo = [slice(None)] * arr.ndim
            hi = [slice(None)] * arr.ndim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            out[tuple(lo)] -= gd
            out[tuple(hi)] += gd
        return (out.reshape(x.shape),)
    return ag._make(np.asarray(total, dtype=x.dtype), (x,), fn)


def tv_values(arr, spatial_ndim: int = 3) -> float:
    """TV of a plain array whose leading ``spatial_ndim`` axes are spatial."""
    arr = np.asarray(arr, dtype=np.float64)
    return float(_tv_op(Tensor(arr), arr.shape[:spatial_ndim]).data)


def tv_reg(field: FieldPair) -> Tensor:
    if isinstance(field, SparseGridField):
        res = tuple(field.config.resolution)
        return (_tv_op(field.params.tensor("density"), res)
                + _tv_op(field.params.tensor("sh"), res))
    if isinstance(field, VmField):
        n = field.config.resolution
        terms = []
        for name in field.line_plane_segments():
            shape = (n,) if "_line" in name else (n, n)
            terms.append(_tv_op(field.params.tensor(name), shape))
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out
    raise NotApplicableError(f"TV regulariser does not apply to {field.arch_tag} fields")


def l1_reg(field: FieldPair) -> Tensor:
    if not isinstance(field, VmField):
        raise NotApplicableError(f"L1 regulariser does not apply to {field.arch_tag} fields")
    names = field.line_plane_segments()
    count = sum(field.params.segments[n].size for n in names)
    out = None
    for name in names:
        term = ag.sum_(ag.absolute(field.params.tensor(name)))
        out = term if out is None else out + term
    return out * (1.0 / count)


def regularizer(field: FieldPair, tv_rate: float, l1_rate: float) -> Tensor | None:
    if isinstance(field, SparseGridField):
        return tv_reg(field) * tv_rate
    if isinstance(field, VmField):
        return tv_reg(field) * tv_rate + l1_reg(field) * l1_rate
    return None


def required_parts(stage: int, student_arch: str | None = None) -> tuple:
    grid = student_arch is not None and canonical_arch(student_arch) == "sparse_grid"
    if stage not in (1, 2, 3):
        raise ContractError(f"stage must be 1, 2 or 3, got {stage}")
    parts = () if grid else ("volume",)
    if stage >= 2 or grid:
        parts += ("density", "color")
    if stage == 3:
        parts += ("rgb",)
    return parts


def total_loss(parts: dict, cfg: DistillConfig, stage: int, student_arch: str | None = None):
    """Weighted sum of the stage-active loss parts (plus ``reg`` when present)."""
    weights = {"volume": cfg.w_volume, "density": cfg.w_density, "color": cfg.w_color,
               "rgb": cfg.w_rgb, "reg": cfg.w_reg}
    active = required_parts(stage, student_arch)
    missing = [p for p in active if parts.get(p) is None]
    if missing:
        raise ContractError(f"stage {stage} needs loss parts {missing}")
    names = list(active) + (["reg"] if parts.get("reg") is not None else [])
    total = None
    for name in names:
        term = parts[name] * weights[name]
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------- sampling

def pseudo_poses(n: int, radius: float = 4.0, elevation=(-30.0, 80.0), seed=0,
                 width: int = 128, height: int = 128) -> list[Camera]:
    """Random look-at cameras on an orbit sphere; no training data involved."""
    return orbit_cameras(n, radius=radius, elevation=elevation, seed=seed, width=width, height=height)


def random_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_points(n: int, seed=0, bounds: float = 1.0, mode: str = "uniform",
                  render: RenderConfig | None = None, radius: float = 4.0,
                  elevation=(-30.0, 80.0)):
    """``n`` points in the cube and unit directions.

    ``uniform`` draws x uniformly in the cube and d uniformly on the sphere.
    ``rays`` draws x along random orbit-camera rays (d is the ray direction),
    which concentrates samples where cameras actually look.
    """
    if n < 1:
        raise ValueError("need at least one point")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mode == "uniform":
        return rng.uniform(-bounds, bounds, (n, 3)), random_directions(n, rng)
    if mode != "rays":
        raise ValueError(f"unknown sampling mode {mode!r}")
    render = render or RenderConfig()
    xs, ds = [], []
    have = 0
    while have < n:
        cam = orbit_cameras(1, radius, elevation, rng, width=64, height=64)[0]
        m = 4 * (n - have) + 16
        o, d = pixel_rays(cam, rng.uniform(0, cam.width, m), rng.uniform(0, cam.height, m),
                          np.zeros((m, 2)))
        t = rng.uniform(render.near, render.far, m)
        x = o + t[:, None] * d
        keep = np.all(np.abs(x) <= bounds, axis=1)
        xs.append(x[keep])
        ds.append(d[keep])
        have += int(keep.sum())
    return np.concatenate(xs)[:n], np.concatenate(ds)[:n]


def _pseudo_ray_batch(cfg: DistillConfig, rng: np.random.Generator):
    cams = pseudo_poses(cfg.poses_per_step, cfg.orbit_radius, cfg.elevation, rng,
                        cfg.image_size, cfg.image_size)
    which = rng.integers(0, len(cams), cfg.batch_rays)
    i = rng.integers(0, cfg.image_size, cfg.batch_rays)
    j = rng.integers(0, cfg.image_size, cfg.batch_rays)
    jit = rng.random((cfg.batch_rays, 2))
    origins = np.empty((cfg.batch_rays, 3))
    dirs = np.empty((cfg.batch_rays, 3))
    for k, cam in enumerate(cams):
        sel = which == k
        origins[sel], dirs[sel] = pixel_rays(cam, i[sel], j[sel], jit[sel])
    return origins, dirs


# ---------------------------------------------------------------- loops

def distill(teacher: FieldPair, student_arch: str, cfg: DistillConfig = DistillConfig(),
            student_config=None, student: FieldPair | None = None,
            callback: Callable[[int, FieldPair, StepRecord], None] | None = None):
    """Train a student of ``student_arch`` to reproduce ``teacher``.

    Returns ``(student, report)``. The teacher is only ever evaluated without
    gradient tracking; its parameters stay bit-identical.
    """
    arch = canonical_arch(student_arch)
    if student is None:
        student = init_field(arch, student_config, seed=int(stream(cfg.seed, "init").integers(2 ** 31)),
                             dtype=teacher.dtype)
    adapter = FeatureAdapter.between(teacher, student, seed=int(stream(cfg.seed, "adapter").integers(2 ** 31)))
    grid_student = arch == "sparse_grid"
    stores = [student.params] + ([adapter.params] if len(adapter.params) else [])
    opt = AdamState.for_store(student.params, lr=cfg.lr)
    opt_adapter = AdamState.for_store(adapter.params, lr=cfg.adapter_lr) if len(adapter.params) else None
    point_rng = stream(cfg.seed, "points")
    pose_rng = stream(cfg.seed, "poses")
    teacher_grad_before = teacher.params.grads.copy()
    report = StageReport()

    for step in range(cfg.total_steps):
        t0 = time.perf_counter()
        stage = cfg.stage(step)
        lr = lr_schedule(step, cfg.total_steps, cfg.lr)
        x, d = sample_points(cfg.batch_points, point_rng, mode=cfg.point_mode, render=cfg.render,
                             radius=cfg.orbit_radius, elevation=cfg.elevation)
        x_t, d_t = x.astype(teacher.dtype), d.astype(teacher.dtype)
        x_s, d_s = x.astype(student.dtype), d.astype(student.dtype)
        with no_grad():
            t_feat = teacher.phi1(x_t, d_t)
            t_sigma, t_rgb = teacher.phi2(t_feat, d_t) if (stage >= 2 or grid_student) else (None, None)
            if stage == 3:
                origins, dirs = _pseudo_ray_batch(cfg, pose_rng)
                ray_rng = copy.deepcopy(pose_rng)
                t_pix = render_rays(teacher, origins, dirs, cfg.render, ray_rng)["rgb"].data
        values = {}

        def loss_fn():
            parts = {}
            s_feat = student.phi1(x_s, d_s)
            if not grid_student:
                parts["volume"] = feature_loss(t_feat.data, adapter(s_feat))
            if stage >= 2 or grid_student:
                s_sigma, s_rgb = student.phi2(s_feat, d_s)
                parts["density"] = density_loss(t_sigma.data, s_sigma, cfg.clip)
                parts["color"] = color_loss(t_rgb.data, s_rgb)
            if stage == 3:
                s_pix = render_rays(student, origins, dirs, cfg.render, pose_rng)["rgb"]
                parts["rgb"] = rgb_loss(t_pix, s_pix)
            reg = regularizer(student, cfg.tv_rate, cfg.l1_rate)
            if reg is not None:
                parts["reg"] = reg
            for k, v in parts.items():
                values[k] = float(v.data)
            return total_loss(parts, cfg, stage, arch)

        total = backward(loss_fn, stores)
        adam_step(student.params, opt, lr)
        if opt_adapter is not None:
            adam_step(adapter.params, opt_adapter, lr * cfg.adapter_lr / cfg.lr)
        if not np.array_equal(teacher.params.grads, teacher_grad_before):
            raise ContractError("teacher parameters received gradient during distillation")
        rec = StepRecord(step, stage, total=total, lr=lr,
                         wall_ms=1e3 * (time.perf_counter() - t0), **values)
        report.append(rec)
        if callback is not None:
            callback(step, student, rec)
    return student, report


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_rays: int = 4096
    lr: float = 0.02
    tv_rate: float = 1e-5
    l1_rate: float = 1e-4
    w_reg: float = 1.0
    render: RenderConfig = RenderConfig(n_samples=64, stratified=True)
    seed: int = 0


def train_from_scratch(scene, arch: str, steps: int | None = None, seed: int | None = None,
                       config=None, train: TrainConfig = TrainConfig(), init: FieldPair | None = None,
                       callback=None, dtype=np.float32):
    """Fit a field to posed images by rendered-pixel MSE.

    ``scene`` is a ``ViewSet`` with images or an ``AnalyticScene`` (20 orbit
    views are rendered as ground truth). ``init`` warm-starts from an
    existing field, which is copied, not modified.
    """
    if steps is not None:
        train = replace(train, steps=steps)
    if seed is not None:
        train = replace(train, seed=seed)
    if isinstance(scene, AnalyticScene):
        scene = make_viewset(scene, 20, "train", seed=train.seed)
    if not isinstance(scene, ViewSet) or scene.images is None:
        raise ValueError("train_from_scratch needs a ViewSet with images or an AnalyticScene")
    if init is not None:
        fld = init.copy()
    else:
        fld = init_field(arch, config, seed=int(stream(train.seed, "init").integers(2 ** 31)), dtype=dtype)
    pixels, colors = [], []
    for cam, img in zip(scene.cameras, scene.images):
        jj, ii = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
        pixels.append(np.stack([ii.ravel(), jj.ravel()], axis=1))
        colors.append(np.asarray(img).reshape(-1, 3))
    pix_cam = np.concatenate([np.full(len(c), k) for k, c in enumerate(colors)])
    pix_ij = np.concatenate(pixels)
    colors = np.concatenate(colors)
    rng = stream(train.seed, "rays")

    def sampler(n):
        sel = rng.integers(0, len(colors), n)
        jit = rng.random((n, 2))
        o = np.empty((n, 3))
        d = np.empty((n, 3))
        for k in np.unique(pix_cam[sel]):
            m = pix_cam[sel] == k
            ij = pix_ij[sel[m]]
            o[m], d[m] = pixel_rays(scene.cameras[k], ij[:, 0], ij[:, 1], jit[m])
        return o, d, colors[sel]
    return fit_rays(fld, sampler, train, rng, callback)


def fit_rays(fld: FieldPair, sampler: Callable[[int], tuple], train: TrainConfig = TrainConfig(),
             rng: np.random.Generator | None = None, callback=None):
    """Adam on rendered-pixel MSE; ``sampler(n)`` yields (origins, dirs, target rgb)."""
    rng = rng if rng is not None else stream(train.seed, "rays")
    opt = AdamState.for_store(fld.params, lr=train.lr)
    report = StageReport()
    for step in range(train.steps):
        t0 = time.perf_counter()
        lr = lr_schedule(step, train.steps, train.lr)
        o, d, target = sampler(train.batch_rays)
        values = {}

        def loss_fn():
            pix = render_rays(fld, o, d, train.render, rng)["rgb"]
            loss = rgb_loss(target, pix)
            values["rgb"] = float(loss.data)
            reg = regularizer(fld, train.tv_rate, train.l1_rate)
            if reg is not None:
                values["reg"] = float(reg.data)
                loss = loss + reg * train.w_reg
            return loss

        total = backward(loss_fn, fld.params)
        adam_step(fld.params, opt, lr)
        rec = StepRecord(step, 3, total=total, lr=lr, wall_ms=1e3 * (time.perf_counter() - t0), **values)
        report.append(rec)
        if callback is not None:
            callback(step, fld, rec)
    return fld, report
