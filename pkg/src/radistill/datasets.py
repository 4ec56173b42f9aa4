"""Transforms-JSON datasets (``camera_angle_x`` plus per-frame 4x4 poses)."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .imaging import read_image, write_png
from .renderer import Camera
from .scenes import ViewSet


class DatasetError(ValueError):
    def __init__(self, path, field, message):
        super().__init__(f"{path}: {field}: {message}")
        self.path = Path(path)
        self.field = field


def _transforms_file(root: Path, split: str) -> Path:
    for name in (f"transforms_{split}.json", "transforms.json"):
        if (root / name).exists():
            return root / name
    raise DatasetError(root / f"transforms_{split}.json", "file", "no transforms file found")


def _resolve_image(root: Path, rel: str) -> Path:
    p = root / rel
    if p.suffix:
        return p
    return p.with_suffix(".png")


def load_transforms_dataset(path, split: str = "train", load_images: bool = True) -> ViewSet:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(root, "path", "dataset directory does not exist")
    tf = _transforms_file(root, split)
    try:
        meta = json.loads(tf.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(tf, "json", str(exc)) from exc
    if "camera_angle_x" not in meta:
        raise DatasetError(tf, "camera_angle_x", "missing")
    frames = meta.get("frames")
    if not isinstance(frames, list) or not frames:
        raise DatasetError(tf, "frames", "missing or empty")
    angle = float(meta["camera_angle_x"])
    cams, imgs = [], []
    for k, frame in enumerate(frames):
        try:
            mat = np.asarray(frame["transform_matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(tf, f"frames[{k}].transform_matrix", str(exc)) from exc
        if mat.shape != (4, 4):
            raise DatasetError(tf, f"frames[{k}].transform_matrix", f"shape {mat.shape} != (4, 4)")
        img = None
        if load_images or "width" not in meta:
            if "file_path" not in frame:
                raise DatasetError(tf, f"frames[{k}].file_path", "missing")
            img_path = _resolve_image(root, frame["file_path"])
            if not img_path.exists():
                raise DatasetError(img_path, f"frames[{k}].file_path", "image not found")
            img = read_image(img_path)
            h, w = img.shape[:2]
        else:
            w, h = int(meta["width"]), int(meta["height"])
        fx = 0.5 * w / math.tan(0.5 * angle)
        try:
            cams.append(Camera(w, h, fx, fx, w / 2.0, h / 2.0, mat[:3]))
        except ValueError as exc:
            raise DatasetError(tf, f"frames[{k}].transform_matrix", str(exc)) from exc
        imgs.append(img)
    images = np.stack(imgs) if load_images else None
    return ViewSet(cams, images, split)


def write_transforms_dataset(viewset: ViewSet, path, split: str | None = None) -> Path:
    """Write images as PNG plus a transforms JSON; cameras must share intrinsics."""
    root = Path(path)
    split = split or viewset.split
    (root / split).mkdir(parents=True, exist_ok=True)
    cam0 = viewset.cameras[0]
    frames = []
    for k, cam in enumerate(viewset.cameras):
        rel = f"./{split}/r_{k}"
        if viewset.images is not None:
            write_png(root / f"{rel}.png", viewset.images[k])
        mat = np.eye(4)
        mat[:3] = cam.pose
        frames.append({"file_path": rel, "transform_matrix": mat.tolist()})
    meta = {"camera_angle_x": 2 * math.atan(0.5 * cam0.width / cam0.fx),
            "width": cam0.width, "height": cam0.height, "frames": frames}
    out = root / f"transforms_{split}.json"
    out.write_text(json.dumps(meta, indent=2))
    return out
