"""Differentiable radiance fields in four representations, with
teacher-to-student conversion between any pair of them."""
from .fields import (DensityClip, FieldPair, HashFieldConfig, MlpFieldConfig, RadianceSample,
                     SparseGridFieldConfig, VmFieldConfig, clip_density, eval_field, eval_phi1,
                     eval_phi2, init_field)
from .renderer import Camera, RenderConfig, render_image, render_rays_batched

__version__ = "0.1.0"
