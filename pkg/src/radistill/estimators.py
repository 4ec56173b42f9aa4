"""scikit-learn style wrappers around training and distillation.

Rays are passed as (n, 6) arrays ``[ox, oy, oz, dx, dy, dz]``; targets are
(n, 3) colours. ``transform`` maps (n, 3) or (n, 6) points to encoder
features, ``predict`` renders rays to colours.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .distiller import DistillConfig, TrainConfig, distill, fit_rays, stream, train_from_scratch
from .fields import DensityClip, FieldPair, OutOfBoundsError, canonical_arch, default_config, init_field
from .metrics import psnr
from .renderer import RenderConfig, render_rays_batched
from .scenes import AnalyticScene, ViewSet


def check_rays(X) -> tuple[np.ndarray, np.ndarray]:
    """Validate an (n, 6) ray array; returns origins and unit directions."""
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 6:
        raise ValueError(f"rays need 6 columns (origin, direction), got {X.shape[1]}")
    o, d = X[:, :3], X[:, 3:]
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("ray directions must be nonzero")
    return o, d / norm


def check_points(X) -> tuple[np.ndarray, np.ndarray]:
    """Validate (n, 3) points or (n, 6) point+direction rows inside [-1, 1]^3."""
    X = check_array(X, dtype=np.float64)
    if X.shape[1] not in (3, 6):
        raise ValueError(f"points need 3 or 6 columns, got {X.shape[1]}")
    x = X[:, :3]
    if np.any(np.abs(x) > 1.0):
        raise OutOfBoundsError("points must lie inside [-1, 1]^3")
    if X.shape[1] == 6:
        d = X[:, 3:]
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
    else:
        d = np.tile([0.0, 0.0, 1.0], (len(x), 1))
    return x, d


class _FieldMixin(TransformerMixin):
    n_samples = 64

    def _render_config(self):
        return RenderConfig(n_samples=self.n_samples)

    def transform(self, X):
        check_is_fitted(self, "field_")
        x, d = check_points(X)
        return self.field_.eval_phi1(x, d).astype(np.float64)

    def predict(self, X):
        check_is_fitted(self, "field_")
        o, d = check_rays(X)
        return render_rays_batched(self.field_, o, d, self._render_config())["rgb"].astype(np.float64)

    def score(self, X, y, sample_weight=None):
        """PSNR in dB of predicted against given colours."""
        y = check_array(y, dtype=np.float64)
        return psnr(self.predict(X), y)


class RadianceFieldRegressor(_FieldMixin, RegressorMixin, BaseEstimator):
    """Fit a field of one architecture to ray/colour pairs by rendered MSE.

    ``fit`` also accepts a ViewSet or an AnalyticScene as ``X`` with ``y``
    left as None, in which case per-pixel jittered rays are drawn from the
    posed images.
    """

    def __init__(self, arch="hash", steps=2000, batch_rays=4096, lr=0.02, n_samples=64,
                 seed=0, full_scale=False, config=None):
        self.arch = arch
        self.steps = steps
        self.batch_rays = batch_rays
        self.lr = lr
        self.n_samples = n_samples
        self.seed = seed
        self.full_scale = full_scale
        self.config = config

    def _train_config(self):
        return TrainConfig(steps=self.steps, batch_rays=self.batch_rays, lr=self.lr, seed=self.seed,
                           render=RenderConfig(n_samples=self.n_samples, stratified=True))

    def _field_config(self):
        return self.config if self.config is not None else default_config(self.arch, self.full_scale)

    def fit(self, X, y=None):
        arch = canonical_arch(self.arch)
        train = self._train_config()
        if isinstance(X, (ViewSet, AnalyticScene)):
            self.field_, self.report_ = train_from_scratch(X, arch, config=self._field_config(),
                                                           train=train)
        else:
            X, y = check_X_y(X, y, dtype=np.float64, multi_output=True)
            o, d = check_rays(X)
            if y.shape[1] != 3:
                raise ValueError(f"targets need 3 colour columns, got {y.shape[1]}")
            rng = stream(self.seed, "rays")

            def sampler(n):
                sel = rng.integers(0, len(o), n)
                return o[sel], d[sel], y[sel]
            fld = init_field(arch, self._field_config(), seed=int(stream(self.seed, "init").integers(2 ** 31)))
            self.field_, self.report_ = fit_rays(fld, sampler, train, rng)
        self.n_features_in_ = 6
        return self


class DistillationRegressor(_FieldMixin, RegressorMixin, BaseEstimator):
    """Distill a trained teacher field into a student architecture.

    The procedure needs no data, so ``fit`` ignores ``X`` and ``y``.
    ``sigma_clip=None`` turns off density clipping.
    """

    def __init__(self, teacher: FieldPair | None = None, student="mlp", total_steps=20000,
                 stage_steps=(3000, 5000), batch_rays=4096, batch_points=2 ** 14,
                 sigma_clip=(-2.0, 7.0), n_samples=64, seed=0, student_config=None):
        self.teacher = teacher
        self.student = student
        self.total_steps = total_steps
        self.stage_steps = stage_steps
        self.batch_rays = batch_rays
        self.batch_points = batch_points
        self.sigma_clip = sigma_clip
        self.n_samples = n_samples
        self.seed = seed
        self.student_config = student_config

    def distill_config(self) -> DistillConfig:
        clip = DensityClip(*self.sigma_clip) if self.sigma_clip is not None else None
        s1, s2 = self.stage_steps
        return DistillConfig(total_steps=self.total_steps, stage1_steps=s1, stage2_steps=s2,
                             batch_rays=self.batch_rays, batch_points=self.batch_points, clip=clip,
                             seed=self.seed, render=RenderConfig(n_samples=self.n_samples, stratified=True))

    def fit(self, X=None, y=None):
        if not isinstance(self.teacher, FieldPair):
            raise ValueError("teacher must be a trained field")
        self.field_, self.report_ = distill(self.teacher, self.student, self.distill_config(),
                                            student_config=self.student_config)
        self.n_features_in_ = 6
        return self
