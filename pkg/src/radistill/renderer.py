"""Pinhole cameras, ray sampling and volume compositing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad


class RenderShapeError(ValueError):
    pass


@dataclass
class Camera:
    """Pinhole camera. ``pose`` is a 3x4 camera-to-world matrix; the camera
    looks down its local -z axis with +y up (NeRF-synthetic convention)."""
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4)[:3].copy())

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)[:3, :4]
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.pose[:, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return self.pose[:, 3]

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), width=128, height=128,
                focal=None, fov_x=np.deg2rad(30.0)):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        pose = np.stack([right, true_up, -forward, eye], axis=1)
        if focal is None:
            focal = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(width, height, focal, focal, width / 2.0, height / 2.0, pose)


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 64
    near: float = 2.0
    far: float = 6.0
    stratified: bool = False
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0 <= self.near < self.far:
            raise ValueError(f"need 0 <= near < far, got {self.near}, {self.far}")
        if self.n_samples < 2:
            raise ValueError("need at least two samples per ray")


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def orbit_cameras(n: int, radius: float = 4.0, elevation=(-30.0, 80.0), seed=0,
                  width: int = 128, height: int = 128, fov_x=np.deg2rad(30.0)) -> list[Camera]:
    """Look-at cameras on a sphere around the origin.

    Azimuth is uniform in [0, 2pi), elevation (degrees) uniform in ``elevation``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("need at least one camera")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    az = rng.uniform(0.0, 2 * np.pi, n)
    el = np.deg2rad(rng.uniform(elevation[0], elevation[1], n))
    eyes = radius * np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    return [Camera.look_at(e, width=width, height=height, fov_x=fov_x) for e in eyes]


def pixel_rays(cam: Camera, i, j, jitter=None):
    """Origins and unit directions for pixel columns ``i`` and rows ``j``.

    ``jitter`` offsets inside the pixel in [0, 1)^2; ``None`` means the centre.
    """
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    if jitter is None:
        jx = jy = 0.5
    else:
        jitter = np.asarray(jitter, dtype=np.float64)
        jx, jy = jitter[..., 0], jitter[..., 1]
    dirs = np.stack([(i + jx - cam.cx) / cam.fx,
                     -(j + jy - cam.cy) / cam.fy,
                     -np.ones(np.broadcast(i, jx).shape)], axis=-1)
    dirs = dirs @ cam.pose[:, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return origins, dirs


def ray_for_pixel(cam: Camera, i: int, j: int, jitter=None) -> Ray:
    if not (0 <= i < cam.width and 0 <= j < cam.height):
        raise IndexError(f"pixel ({i}, {j}) outside {cam.width}x{cam.height} frame")
    o, d = pixel_rays(cam, i, j, jitter)
    return Ray(o.reshape(3), d.reshape(3))


def image_rays(cam: Camera):
    jj, ii = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    o, d = pixel_rays(cam, ii.ravel(), jj.ravel())
    return o, d


def sample_along_ray(n_rays: int, cfg: RenderConfig, rng: np.random.Generator | None = None):
    """Sample distances (n_rays, N) in [near, far] and their spacings.

    Fixed mode uses bin centres; stratified mode draws one uniform point per bin.
    The last spacing runs to ``far``.
    """
    n = cfg.n_samples
    step = (cfg.far - cfg.near) / n
    edges = cfg.near + step * np.arange(n)
    if cfg.stratified:
        if rng is None:
            raise ValueError("stratified sampling needs a generator")
        t = edges[None, :] + step * rng.random((n_rays, n))
    else:
        t = np.broadcast_to(edges + 0.5 * step, (n_rays, n)).copy()
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = cfg.far - t[:, -1]
    return t, delta


def composite(sigmas, colors, deltas, t=None, background=(0.0, 0.0, 0.0)):
    """Quadrature of one ray or a batch: returns (pixel rgb, opacity, depth)."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    single = sigmas.ndim == 1
    if single:
        sigmas, colors, deltas = sigmas[None], colors[None], deltas[None]
        t = None if t is None else np.asarray(t, dtype=np.float64)[None]
    if sigmas.shape != deltas.shape or colors.shape != sigmas.shape + (3,) or sigmas.shape[-1] < 1:
        raise RenderShapeError(f"mismatched shapes {sigmas.shape}, {colors.shape}, {deltas.shape}")
    if t is None:
        t = np.cumsum(deltas, axis=-1) - deltas
    pix, w = ag.composite_rgb(Tensor(sigmas), Tensor(colors), deltas, background)
    acc = w.sum(axis=-1)
    depth = (w * t).sum(axis=-1) / np.maximum(acc, 1e-10)
    if single:
        return pix.data[0], acc[0], depth[0]
    return pix.data, acc, depth


def transmittance(sigmas, deltas) -> np.ndarray:
    sd = np.maximum(np.asarray(sigmas), 0) * np.asarray(deltas)
    excl = np.zeros_like(sd)
    excl[..., 1:] = np.cumsum(sd, axis=-1)[..., :-1]
    return np.exp(-excl)


def render_rays(field, origins, dirs, cfg: RenderConfig, rng=None):
    """Render a ray batch, building the graph when gradients are enabled.

    ``field`` needs ``forward(x, d) -> (sigma, rgb)`` over points inside
    [-1, 1]^3; points outside contribute zero density and are never
    evaluated. Returns a dict with ``rgb`` (Tensor), ``sigma`` and ``color``
    (Tensors over all samples), plus arrays ``acc``, ``depth``, ``t``,
    ``weights``.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    R, N = len(origins), cfg.n_samples
    if R == 0:
        raise RenderShapeError("empty ray batch")
    t, delta = sample_along_ray(R, cfg, rng)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    inside = np.flatnonzero(np.all(np.abs(flat) <= 1.0, axis=-1))
    dtype = field.dtype
    dir_flat = np.repeat(dirs, N, axis=0)
    if inside.size:
        s_in, c_in = field.forward(flat[inside].astype(dtype), dir_flat[inside].astype(dtype))
        sigma = ag.scatter_rows(s_in, inside, R * N)
        color = ag.scatter_rows(c_in, inside, R * N)
    else:
        sigma = Tensor(np.zeros(R * N, dtype=dtype))
        color = Tensor(np.zeros((R * N, 3), dtype=dtype))
    sigma2 = ag.reshape(sigma, (R, N))
    color2 = ag.reshape(color, (R, N, 3))
    pix, w = ag.composite_rgb(sigma2, color2, delta.astype(dtype), cfg.background)
    acc = w.sum(axis=1)
    depth = (w * t).sum(axis=1) / np.maximum(acc, 1e-10)
    return {"rgb": pix, "sigma": sigma2, "color": color2, "acc": acc, "depth": depth,
            "t": t, "weights": w}


def render_rays_batched(field, origins, dirs, cfg: RenderConfig, rng=None, chunk_points: int = 1 << 16):
    """Gradient-free rendering in chunks; arrays only."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 0:
        raise RenderShapeError("empty ray batch")
    chunk = max(1, chunk_points // cfg.n_samples)
    keys = ("rgb", "acc", "depth", "sigma", "color", "t")
    out = {k: [] for k in keys}
    with no_grad():
        for s in range(0, len(origins), chunk):
            r = render_rays(field, origins[s:s + chunk], dirs[s:s + chunk], cfg, rng)
            for k in keys:
                v = r[k]
                out[k].append(v.data if isinstance(v, Tensor) else v)
    return {k: np.concatenate(v, axis=0) for k, v in out.items()}


def render_image(field, cam: Camera, cfg: RenderConfig, rng=None, chunk_points: int = 1 << 16):
    """Render (H, W, 3) colour and (H, W) expected depth."""
    o, d = image_rays(cam)
    r = render_rays_batched(field, o, d, cfg, rng, chunk_points)
    return (r["rgb"].reshape(cam.height, cam.width, 3),
            r["depth"].reshape(cam.height, cam.width))
