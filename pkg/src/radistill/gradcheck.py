"""Finite-difference checks of the rendered-pixel loss for each architecture.

The fields here are deliberately tiny so a few hundred double-precision
re-renders stay well under a minute.
"""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, mse
from .encodings import HashConfig, PosEncConfig
from .fields import (HashFieldConfig, MlpFieldConfig, SparseGridFieldConfig, VmFieldConfig,
                     canonical_arch, init_field)
from .optim import ParamStore, grad_check
from .renderer import RenderConfig, image_rays, orbit_cameras, render_rays


def tiny_config(arch: str):
    arch = canonical_arch(arch)
    if arch == "mlp":
        return MlpFieldConfig(depth=4, width=16, split_k=2, dir_branch_width=8)
    if arch == "sparse_grid":
        return SparseGridFieldConfig(resolution=(6, 6, 6), init_density=1.0)
    if arch == "vm":
        return VmFieldConfig(resolution=6, decoder_width=8)
    return HashFieldConfig(hash=HashConfig(table_size=2 ** 8, levels=4, base_resolution=2,
                                           max_resolution=8), decoder_width=8)


def render_loss_problem(arch: str, seed: int = 0, image_size: int = 8, n_samples: int = 16):
    """A float64 field plus a closure computing pixel MSE against random targets.

    Grid-like parameters get extra noise: at their stock init (zeros or
    1e-4) the decoder pre-activations cluster around the ReLU kink and the
    central difference straddles it.
    """
    arch = canonical_arch(arch)
    field = init_field(arch, tiny_config(arch), seed=seed + 3, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if arch == "mlp":
        # keep some density positive so the opacity path is exercised
        field.params.view("sigma.b")[:] = 1.0
    else:
        field.params.values += rng.normal(0.0, 0.3, field.params.values.shape)
    cam = orbit_cameras(1, width=image_size, height=image_size, seed=seed + 1)[0]
    o, d = image_rays(cam)
    target = rng.random((len(o), 3))
    cfg = RenderConfig(n_samples=n_samples)

    def loss():
        return mse(render_rays(field, o, d, cfg)["rgb"], Tensor(target))
    return field, loss


def gradcheck_field(arch: str, seed: int = 0, n_params: int = 100, eps: float = 1e-5) -> float:
    field, loss = render_loss_problem(arch, seed)
    return grad_check(loss, field.params, n_params=n_params, eps=eps, seed=seed)


def gradcheck_quadratic(seed: int = 0, n: int = 16, eps: float = 1e-4) -> float:
    store = ParamStore(np.float64)
    store.add("theta", np.random.default_rng(seed).normal(size=n))

    def loss():
        t = store.tensor("theta")
        return mse(t, Tensor(np.zeros(n))) * float(n)
    return grad_check(loss, store, n_params=n, eps=eps, seed=seed)
