"""8-bit PNG / ASCII PPM colour output and 16-bit depth PNGs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(rgb) -> np.ndarray:
    v = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def write_png(path, rgb) -> Path:
    path = Path(path)
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path, format="PNG")
    return path


def write_ppm(path, rgb) -> Path:
    path = Path(path)
    img = to_uint8(rgb)
    h, w, _ = img.shape
    rows = "\n".join(" ".join(str(int(v)) for v in row.reshape(-1)) for row in img)
    path.write_text(f"P3\n{w} {h}\n255\n{rows}\n")
    return path


def write_depth_png(path, depth, near: float, far: float) -> Path:
    path = Path(path)
    z = np.clip((np.asarray(depth, dtype=np.float64) - near) / (far - near), 0.0, 1.0)
    img = np.floor(65535.0 * z + 0.5).astype(np.uint16)
    Image.fromarray(img).save(path, format="PNG")
    return path


def read_image(path) -> np.ndarray:
    """Float RGB in [0, 1]; alpha is composited onto white."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
    rgb, alpha = arr[..., :3], arr[..., 3:]
    return rgb * alpha + (1.0 - alpha)
