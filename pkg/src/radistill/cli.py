"""``radistill`` command line: train, distill, render, eval, gradcheck.

Settings resolve as defaults < ``--config`` YAML < flags. Every command
writes the fully resolved config to ``<out>/config.yaml``; running
``radistill --config <out>/config.yaml`` repeats the run.

Exit codes: 0 ok, 1 gradient check above tolerance, 2 usage/config error,
3 numerical failure, 4 IO error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .datasets import DatasetError, load_transforms_dataset
from .distiller import DistillConfig, TrainConfig, distill, stream, train_from_scratch
from .encodings import ConfigError
from .fields import DensityClip, canonical_arch, config_from_dict, default_config
from .imaging import write_depth_png, write_png, write_ppm
from .metrics import MetricReport, evaluate
from .optim import NonFiniteError
from .renderer import RenderConfig, orbit_cameras, render_image
from .scenes import SCENES, get_scene, make_viewset

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
GRADCHECK_TOL = 1e-3
ARCH_CHOICES = ("mlp", "grid", "vm", "hash")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- run config

@dataclass
class SceneSection:
    name: str | None = None
    train_views: int = 20
    test_views: int = 10
    image_size: int = 128
    cache_dir: str | None = None


@dataclass
class RenderSection:
    n_samples: int = 64
    near: float = 2.0
    far: float = 6.0
    background: list = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class OptimSection:
    steps: int = 2000
    batch_rays: int = 4096
    lr: float = 0.02
    tv_rate: float = 1e-5
    l1_rate: float = 1e-4
    checkpoint_every: int = 0


@dataclass
class DistillSection:
    teacher: str | None = None
    student: str = "mlp"
    total_steps: int = 20000
    stage_steps: list = field(default_factory=lambda: [3000, 5000])
    batch_rays: int = 4096
    batch_points: int = 2 ** 14
    sigma_clip: list | None = field(default_factory=lambda: [-2.0, 7.0])
    weights: list = field(default_factory=lambda: [2e-3, 2e-3, 2e-3, 1.0, 1.0])
    point_mode: str = "uniform"
    adapter_lr: float = 1e-3
    orbit_radius: float = 4.0
    elevation: list = field(default_factory=lambda: [-30.0, 80.0])
    poses_per_step: int = 4
    checkpoint_every: int = 0


@dataclass
class OutputSection:
    checkpoint: str | None = None
    orbit: int = 8
    image_size: int = 128
    ppm: bool = False


@dataclass
class RunConfig:
    command: str = "train"
    seed: int = 0
    out: str = "runs/out"
    threads: int | None = None
    arch: str = "hash"
    full_scale: bool = False
    arch_config: dict = field(default_factory=dict)
    scene: SceneSection = field(default_factory=SceneSection)
    render: RenderSection = field(default_factory=RenderSection)
    optim: OptimSection = field(default_factory=OptimSection)
    distill: DistillSection = field(default_factory=DistillSection)
    output: OutputSection = field(default_factory=OutputSection)


def _from_dict(cls, data, where="config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if is_dataclass(default):
            kw[name] = _from_dict(type(default), value or {}, f"{where}.{name}")
        else:
            kw[name] = value
    return cls(**kw)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return _from_dict(RunConfig, data, str(path))


def dump_run_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(asdict(cfg), sort_keys=False))
    return path


# ---------------------------------------------------------------- arguments

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radistill", description=__doc__.split("\n")[0])
    parser.add_argument("--config", dest="top_config", help="re-run a resolved config file")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="fit a field to a scene from scratch")
    _common(p)
    p.add_argument("--arch", choices=ARCH_CHOICES)
    p.add_argument("--scene", help="analytic scene name or transforms dataset directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--full-scale", action="store_true", default=None)

    p = sub.add_parser("distill", help="convert a trained field into another architecture")
    _common(p)
    p.add_argument("--teacher", help="teacher checkpoint")
    p.add_argument("--student", help="student architecture")
    p.add_argument("--scene", help="scene for the final metrics (default: the teacher's)")
    p.add_argument("--steps", type=int, help="total distillation steps")
    p.add_argument("--stage-steps", type=int, nargs=2, metavar=("S1", "S2"))
    clip = p.add_mutually_exclusive_group()
    clip.add_argument("--sigma-clip", type=float, nargs=2, metavar=("A", "B"))
    clip.add_argument("--no-sigma-clip", action="store_true")
    p.add_argument("--full-scale", action="store_true", default=None)

    p = sub.add_parser("render", help="render colour and depth images from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--orbit", type=int, help="number of orbit poses")
    p.add_argument("--camera", help="transforms JSON dataset directory supplying poses")
    p.add_argument("--size", type=int, help="image width and height")
    p.add_argument("--ppm", action="store_true", default=None, help="also write ASCII PPM")

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on held-out views")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scene")

    p = sub.add_parser("gradcheck", help="finite-difference check of the render loss")
    p.add_argument("--arch", choices=ARCH_CHOICES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-params", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--quadratic", action="store_true", help="check a pure quadratic loss instead")
    return parser


def resolve(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.command = args.command
    for name in ("seed", "out", "threads"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "arch", None):
        cfg.arch = args.arch
    if getattr(args, "full_scale", None):
        cfg.full_scale = True
    if getattr(args, "scene", None):
        cfg.scene.name = args.scene
    if args.command == "train" and args.steps is not None:
        cfg.optim.steps = args.steps
    if args.command == "distill":
        d = cfg.distill
        if args.teacher:
            d.teacher = args.teacher
        if args.student:
            d.student = args.student
        if args.steps is not None:
            d.total_steps = args.steps
            if args.stage_steps is None:
                base = DistillConfig()
                d.stage_steps = [int(base.stage1_steps * args.steps / base.total_steps),
                                 int(base.stage2_steps * args.steps / base.total_steps)]
        if args.stage_steps is not None:
            d.stage_steps = list(args.stage_steps)
        if args.no_sigma_clip:
            d.sigma_clip = None
        elif args.sigma_clip is not None:
            d.sigma_clip = list(args.sigma_clip)
    if args.command in ("render", "eval"):
        if args.checkpoint:
            cfg.output.checkpoint = args.checkpoint
    if args.command == "render":
        if args.orbit is not None:
            cfg.output.orbit = args.orbit
        if args.size is not None:
            cfg.output.image_size = args.size
        if args.ppm:
            cfg.output.ppm = True
        if args.camera:
            cfg.scene.name = args.camera
    return cfg


# ---------------------------------------------------------------- helpers

def _render_cfg(cfg: RunConfig, stratified=False) -> RenderConfig:
    r = cfg.render
    return RenderConfig(n_samples=r.n_samples, near=r.near, far=r.far, stratified=stratified,
                        background=tuple(r.background))


def _load_scene(cfg: RunConfig, split: str):
    """ViewSet for ``split``; known names are analytic scenes, anything else a dataset path."""
    if cfg.scene.name is None:
        cfg.scene.name = "smoke"
    name = cfg.scene.name
    s = cfg.scene
    if name in SCENES:
        scene = get_scene(name)
        n = s.train_views if split == "train" else s.test_views
        seed = cfg.seed if split == "train" else cfg.seed + 10_000
        return make_viewset(scene, n, split, seed=seed, width=s.image_size, height=s.image_size,
                            cache_dir=s.cache_dir)
    path = Path(name)
    if not path.is_dir():
        raise UsageError(f"scene not found: {name} (not a known scene name {sorted(SCENES)} "
                         f"and not a dataset directory)")
    return load_transforms_dataset(path, split)


def _field_config(cfg: RunConfig, arch: str):
    """Per-architecture overrides live under ``arch_config.<arch>``; the rest is default."""
    chosen = None
    for key, value in cfg.arch_config.items():
        if canonical_arch(key) == arch:
            chosen = value
    if chosen:
        return config_from_dict(arch, chosen)
    return default_config(arch, cfg.full_scale)


def _apply_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    # the compiled kernels are single-threaded; BLAS pools are the only workers
    from threadpoolctl import threadpool_limits
    threadpool_limits(n)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _stage_timings(report) -> dict:
    stages = report.column("stage")
    wall = report.column("wall_ms")
    out = {}
    for s in (1, 2, 3):
        m = stages == s
        if m.any():
            out[str(s)] = {"steps": int(m.sum()), "total_ms": float(wall[m].sum()),
                           "median_ms": float(np.median(wall[m]))}
    return out


def _checkpoint_callback(out: Path, every: int, extra: dict):
    if not every:
        return None

    def cb(step, fld, rec):
        if (step + 1) % every == 0:
            save_checkpoint(fld, out / f"step_{step + 1:06d}.ckpt", extra)
    return cb


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig) -> int:
    arch = canonical_arch(cfg.arch)
    out = Path(cfg.out)
    train = _load_scene(cfg, "train")
    test = _load_scene(cfg, "test")
    o = cfg.optim
    tcfg = TrainConfig(steps=o.steps, batch_rays=o.batch_rays, lr=o.lr, tv_rate=o.tv_rate,
                       l1_rate=o.l1_rate, render=_render_cfg(cfg, True), seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    extra = {"scene": cfg.scene.name, "command": "train"}
    fld, report = train_from_scratch(train, arch, config=_field_config(cfg, arch), train=tcfg,
                                     callback=_checkpoint_callback(out, o.checkpoint_every, extra))
    save_checkpoint(fld, out / "field.ckpt", extra)
    report.write(out / "log.ndjson")
    metrics = evaluate(fld, test, _render_cfg(cfg))
    (out / "metrics.json").write_text(metrics.to_json() + "\n")
    print(f"train {arch}: {o.steps} steps, test PSNR {metrics.mean_psnr:.3f} dB, "
          f"SSIM {metrics.mean_ssim:.4f} -> {out}")
    return EXIT_OK


def cmd_distill(cfg: RunConfig) -> int:
    d = cfg.distill
    if not d.teacher:
        raise UsageError("distill needs --teacher PATH")
    student_arch = canonical_arch(d.student)
    teacher_path = Path(d.teacher)
    if not teacher_path.exists():
        raise UsageError(f"teacher checkpoint not found: {teacher_path}")
    header = read_header(teacher_path)
    teacher = load_checkpoint(teacher_path)
    if cfg.scene.name is None and "scene" in header.get("extra", {}):
        cfg.scene.name = header["extra"]["scene"]
    if len(d.stage_steps) != 2 or len(d.weights) != 5:
        raise ConfigError("distill.stage_steps needs 2 values and distill.weights needs 5")
    clip = DensityClip(*d.sigma_clip) if d.sigma_clip is not None else None
    w = d.weights
    dcfg = DistillConfig(w_volume=w[0], w_density=w[1], w_color=w[2], w_rgb=w[3], w_reg=w[4], clip=clip,
                         total_steps=d.total_steps, stage1_steps=d.stage_steps[0],
                         stage2_steps=d.stage_steps[1], batch_rays=d.batch_rays,
                         batch_points=d.batch_points, tv_rate=cfg.optim.tv_rate,
                         l1_rate=cfg.optim.l1_rate, lr=cfg.optim.lr, adapter_lr=d.adapter_lr,
                         seed=cfg.seed, point_mode=d.point_mode, render=_render_cfg(cfg, True),
                         orbit_radius=d.orbit_radius, elevation=tuple(d.elevation),
                         image_size=cfg.scene.image_size, poses_per_step=d.poses_per_step)
    test = _load_scene(cfg, "test")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    extra = {"scene": cfg.scene.name, "command": "distill", "teacher": str(teacher_path)}
    student, report = distill(teacher, student_arch, dcfg, student_config=_field_config(cfg, student_arch),
                              callback=_checkpoint_callback(out, d.checkpoint_every, extra))
    save_checkpoint(student, out / "field.ckpt", extra)
    report.write(out / "log.ndjson")
    metrics = evaluate(student, test, _render_cfg(cfg))
    summary = json.loads(metrics.to_json())
    summary["stages"] = _stage_timings(report)
    _write_json(out / "metrics.json", summary)
    print(f"distill {teacher.arch_tag} -> {student_arch}: test PSNR {metrics.mean_psnr:.3f} dB, "
          f"SSIM {metrics.mean_ssim:.4f} -> {out}")
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    ck = cfg.output.checkpoint
    if not ck:
        raise UsageError("render needs --checkpoint PATH")
    if not Path(ck).exists():
        raise UsageError(f"checkpoint not found: {ck}")
    fld = load_checkpoint(ck)
    size = cfg.output.image_size
    if cfg.scene.name is None or cfg.scene.name in SCENES:
        cams = orbit_cameras(cfg.output.orbit, seed=stream(cfg.seed, "poses"), width=size, height=size)
    else:
        path = Path(cfg.scene.name)
        if not path.is_dir():
            raise UsageError(f"camera dataset not found: {path}")
        cams = load_transforms_dataset(path, "test", load_images=False).cameras
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    rc = _render_cfg(cfg)
    for k, cam in enumerate(cams):
        rgb, depth = render_image(fld, cam, rc)
        write_png(out / f"rgb_{k:03d}.png", rgb)
        write_depth_png(out / f"depth_{k:03d}.png", depth, rc.near, rc.far)
        if cfg.output.ppm:
            write_ppm(out / f"rgb_{k:03d}.ppm", rgb)
    print(f"rendered {len(cams)} views -> {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ck = cfg.output.checkpoint
    if not ck:
        raise UsageError("eval needs --checkpoint PATH")
    if not Path(ck).exists():
        raise UsageError(f"checkpoint not found: {ck}")
    fld = load_checkpoint(ck)
    test = _load_scene(cfg, "test")
    metrics: MetricReport = evaluate(fld, test, _render_cfg(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    (out / "metrics.json").write_text(metrics.to_json() + "\n")
    print(metrics.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck_field, gradcheck_quadratic
    if args.quadratic:
        results = {"quadratic": gradcheck_quadratic(args.seed)}
    else:
        archs = ARCH_CHOICES if args.arch == "all" else (args.arch,)
        results = {a: gradcheck_field(a, args.seed, args.n_params, args.eps) for a in archs}
    worst = max(results.values())
    print(json.dumps({"max_rel_error": results, "tolerance": GRADCHECK_TOL,
                      "passed": worst <= GRADCHECK_TOL}, indent=2))
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_CHECK


COMMANDS = {"train": cmd_train, "distill": cmd_distill, "render": cmd_render, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command is None:
            if not args.top_config:
                parser.print_usage(sys.stderr)
                return EXIT_USAGE
            cfg = load_run_config(args.top_config)
            if cfg.command not in COMMANDS:
                raise ConfigError(f"config command must be one of {sorted(COMMANDS)}")
            _apply_threads(cfg.threads)
            return COMMANDS[cfg.command](cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        cfg = resolve(args)
        _apply_threads(cfg.threads)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"radistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"radistill: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, DatasetError) as exc:
        print(f"radistill: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
