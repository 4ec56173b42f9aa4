"""Procedural radiance scenes with closed-form density and colour.

These serve as ground-truth oracles in place of captured datasets. A scene
is a sum of primitives; colour is the density-weighted mix of primitive
albedos, optionally tinted by the view direction.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .encodings import sh_basis
from .fields import RadianceSample, SparseGridField, SparseGridFieldConfig, init_field
from .renderer import Camera, RenderConfig, orbit_cameras, render_image


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ConstantFog:
    sigma: float = 2.0
    color: tuple = (0.6, 0.6, 0.6)

    def density(self, x):
        return np.full(x.shape[0], self.sigma)

    def albedo(self, x):
        return np.broadcast_to(np.asarray(self.color), x.shape)


@dataclass(frozen=True)
class SoftSphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    sigma: float = 20.0
    softness: float = 0.05
    color: tuple = (0.8, 0.3, 0.2)
    # albedo varies linearly with position: color + gradient @ (x - center)
    gradient: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def density(self, x):
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return self.sigma * _sigmoid((self.radius - r) / self.softness)

    def albedo(self, x):
        c = np.asarray(self.color) + (x - np.asarray(self.center)) @ np.asarray(self.gradient).T
        return np.clip(c, 0.02, 0.98)


@dataclass(frozen=True)
class SoftBox:
    center: tuple = (0.0, 0.0, 0.0)
    half_size: tuple = (0.4, 0.4, 0.4)
    sigma: float = 20.0
    softness: float = 0.05
    color: tuple = (0.2, 0.6, 0.3)

    def density(self, x):
        q = np.abs(x - np.asarray(self.center)) - np.asarray(self.half_size)
        outside = np.linalg.norm(np.maximum(q, 0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0)
        return self.sigma * _sigmoid(-(outside + inside) / self.softness)

    def albedo(self, x):
        return np.broadcast_to(np.asarray(self.color), x.shape)


@dataclass(frozen=True)
class RangeWarp:
    """Remaps a primitive's density into a wide signed range with ripples.

    Where the base primitive is solid, density lands in [hi_min, hi]; where
    it is empty, in [lo, lo_max]. The ripples carry no visual information
    (empty space stays transparent, solid space stays opaque) but widen the
    numeric range a field must reproduce.
    """
    base: SoftSphere = SoftSphere()
    lo: float = -31.0
    lo_max: float = -2.0
    hi_min: float = 7.0
    hi: float = 40.0
    frequency: float = 9.0

    def density(self, x):
        occ = self.base.density(x) / self.base.sigma
        f = self.frequency
        ripple = 0.5 + 0.5 * np.sin(f * x[:, 0]) * np.sin(f * x[:, 1] + 1.0) * np.sin(f * x[:, 2] + 2.0)
        solid = self.hi_min + (self.hi - self.hi_min) * ripple
        empty = self.lo + (self.lo_max - self.lo) * ripple
        return occ * solid + (1 - occ) * empty

    def albedo(self, x):
        return self.base.albedo(x)


@dataclass(frozen=True)
class AnalyticScene:
    name: str
    primitives: tuple
    tint: float = 0.0
    tint_axis: tuple = (0.0, 0.0, 1.0)
    dtype: np.dtype = field(default=np.dtype(np.float64), compare=False)

    def describe(self) -> dict:
        def prim(p):
            d = {"type": type(p).__name__}
            for k, v in p.__dict__.items():
                d[k] = prim(v) if hasattr(v, "density") else v
            return d
        return {"name": self.name, "tint": self.tint, "tint_axis": list(self.tint_axis),
                "primitives": [prim(p) for p in self.primitives]}

    def sample(self, x, d) -> RadianceSample:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
        sig = np.stack([p.density(x) for p in self.primitives], axis=0)
        alb = np.stack([p.albedo(x) for p in self.primitives], axis=0)
        weight = np.maximum(sig, 0) + 1e-6
        base = (weight[..., None] * alb).sum(0) / weight.sum(0)[:, None]
        if self.tint:
            view = 0.5 + 0.5 * (d @ np.asarray(self.tint_axis))
            base = (1 - self.tint) * base + self.tint * view[:, None]
        sigma = sig.sum(0)
        sigma = np.where(np.all(np.abs(x) <= 1.0, axis=-1), sigma, 0.0)
        return RadianceSample(sigma, base)

    # renderer protocol
    def forward(self, x, d):
        s = self.sample(x, d)
        return Tensor(s.sigma), Tensor(s.rgb)


def analytic_eval(scene: AnalyticScene, x, d) -> RadianceSample:
    return scene.sample(x, d)


def _smoke():
    a = SoftSphere(center=(-0.3, -0.05, 0.0), radius=0.42, sigma=15.0, softness=0.04,
                   color=(0.85, 0.35, 0.2), gradient=((0.0, 0.0, 0.1), (0.0, 0.0, 0.35), (0.0, 0.0, 0.0)))
    b = SoftSphere(center=(0.38, 0.12, 0.1), radius=0.3, sigma=15.0, softness=0.04,
                   color=(0.2, 0.45, 0.85), gradient=((0.3, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)))
    return AnalyticScene("smoke", (a, b), tint=0.2, tint_axis=(0.6, 0.0, 0.8))


SCENES = {
    "fog": lambda: AnalyticScene("fog", (ConstantFog(2.0),)),
    "sphere": lambda: AnalyticScene("sphere", (SoftSphere(),)),
    "box": lambda: AnalyticScene("box", (SoftBox(),)),
    "smoke": _smoke,
    "hdr": lambda: AnalyticScene("hdr", (RangeWarp(SoftSphere(radius=0.55, color=(0.3, 0.7, 0.4),
                                                              gradient=((0.3, 0, 0), (0, 0.3, 0), (0, 0, 0.3)))),)),
}


def get_scene(name: str) -> AnalyticScene:
    try:
        return SCENES[name]()
    except KeyError:
        raise KeyError(f"unknown scene {name!r}; known: {sorted(SCENES)}") from None


@dataclass
class ViewSet:
    cameras: list
    images: np.ndarray | None = None
    split: str = "train"

    def __post_init__(self):
        if self.images is not None:
            self.images = np.asarray(self.images)
            if len(self.images) != len(self.cameras):
                raise ValueError("one image per camera required")
            for cam, img in zip(self.cameras, self.images):
                if img.shape[:2] != (cam.height, cam.width):
                    raise ValueError(f"image {img.shape[:2]} does not match camera "
                                     f"{cam.height}x{cam.width}")

    def __len__(self):
        return len(self.cameras)


def default_cache_dir() -> Path:
    return Path(os.environ.get("RADISTILL_CACHE", Path.home() / ".cache" / "radistill"))


def _cache_key(scene: AnalyticScene, cam: Camera, cfg: RenderConfig) -> str:
    payload = {
        "scene": scene.describe(),
        "camera": [cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy,
                   np.round(cam.pose, 12).tolist()],
        "render": [cfg.n_samples, cfg.near, cfg.far, cfg.stratified, list(cfg.background)],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def render_ground_truth(scene: AnalyticScene, cam: Camera, cfg: RenderConfig | None = None,
                        cache_dir: str | Path | None = None) -> np.ndarray:
    """Dense-quadrature render of an analytic scene, cached on disk by content key."""
    cfg = cfg or RenderConfig(n_samples=1024)
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    path = cache / f"{_cache_key(scene, cam, cfg)}.npy"
    if path.exists():
        return np.load(path)
    rgb, _ = render_image(scene, cam, cfg)
    cache.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.stem}.{os.getpid()}.tmp.npy")
    np.save(tmp, rgb)
    os.replace(tmp, path)
    return rgb


def make_viewset(scene: AnalyticScene, n_views: int, split: str = "train", seed: int = 0,
                 width: int = 128, height: int = 128, cfg: RenderConfig | None = None,
                 cache_dir=None, radius: float = 4.0) -> ViewSet:
    """Orbit views of ``scene`` with dense-quadrature ground-truth images."""
    cams = orbit_cameras(n_views, radius=radius, seed=seed, width=width, height=height)
    imgs = np.stack([render_ground_truth(scene, c, cfg, cache_dir) for c in cams])
    return ViewSet(cams, imgs, split)


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def bake_sparse_grid(scene: AnalyticScene, resolution=(64, 64, 64), sh_degree: int = 2,
                     n_dirs: int = 32, dtype=np.float32) -> SparseGridField:
    """Sample ``scene`` at grid nodes into a sparse-grid field.

    Density is copied verbatim. Colour is fitted per node by least squares
    of the SH expansion against the logit of the scene colour over a fixed
    set of directions.
    """
    cfg = SparseGridFieldConfig(resolution=tuple(resolution), sh_degree=sh_degree)
    fld = init_field("sparse_grid", cfg, dtype=dtype)
    axes = [np.linspace(-1.0, 1.0, n) for n in cfg.resolution]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dirs = _fibonacci_sphere(n_dirs)
    basis = sh_basis(dirs, sh_degree)
    pinv = np.linalg.pinv(basis)
    sh = fld.params.view("sh")
    dens = fld.params.view("density")
    chunk = 4096
    for lo in range(0, len(nodes), chunk):
        x = nodes[lo:lo + chunk]
        dens[lo:lo + len(x), 0] = scene.sample(x, np.tile([0.0, 0.0, 1.0], (len(x), 1))).sigma
        xx = np.repeat(x, n_dirs, axis=0)
        dd = np.tile(dirs, (len(x), 1))
        c = np.clip(scene.sample(xx, dd).rgb, 1e-4, 1 - 1e-4).reshape(len(x), n_dirs, 3)
        logit = np.log(c / (1 - c))
        coef = np.einsum("kd,ndc->nck", pinv, logit)
        sh[lo:lo + len(x)] = coef.reshape(len(x), -1)
    return fld
