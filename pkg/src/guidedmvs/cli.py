"""Command-line entry point: generate, reconstruct, evaluate, fuse, evaluate-cloud, ablate.

Exit status is 0 on success, 1 on runtime or data errors and 2 on usage or config errors.
Reports are ``key = value`` lines followed by aligned tables.
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio
from .ablation import (
    FAMILIES,
    STAGE_VARIANTS,
    AblationConfig,
    format_checks,
    stage_checks,
    stage_study,
    strategy_checks,
    strategy_study,
)
from .aggregation import MODES, FilterParams, aggregate_hints
from .errors import GuidedMVSError
from .fusion import EvalThresholds, PointCloud, cloud_accuracy_completeness, depth_to_cloud, error_rates, fuse
from .guidance import GuidanceParams, SparseDepthMap
from .inference import DepthMap, PipelineConfig, StageConfig, default_stages, plane_spacing, run_coarse_to_fine
from .sweep import default_workers
from .synthetic import GroundTruth, generate_scene, read_scene_config, sample_hints

DEFAULT_SEED = 0
DEFAULT_DENSITY = 0.03


class UsageError(Exception):
    """Bad flag value or config file; maps to exit status 2."""


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    out: Path
    mode: str = "fmvg"
    stages: tuple[StageConfig, ...] = tuple(default_stages())
    k: float = 10.0
    c: float | None = None
    filter: FilterParams = FilterParams()
    density: float = DEFAULT_DENSITY
    seed: int = DEFAULT_SEED
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")


# --- flag parsing helpers -----------------------------------------------------


def parse_stages(text: str, guided: str | None = None) -> tuple[StageConfig, ...]:
    """``scale:planes[:half_width]`` items, comma separated, coarse to fine.

    The first item sweeps the full range with inverse-depth spacing; later items
    need a half width (in previous-stage plane spacings) and use linear spacing.
    """
    stages = []
    for n, item in enumerate(p for p in text.split(",") if p.strip()):
        parts = item.strip().split(":")
        try:
            scale, count = float(parts[0]), int(parts[1])
            half = float(parts[2]) if len(parts) > 2 else None
        except (IndexError, ValueError):
            raise UsageError(f"bad stage {item!r}; expected scale:planes[:half_width]") from None
        if n == 0 and half is not None:
            raise UsageError("the first stage sweeps the full range and takes no half width")
        if n > 0 and half is None:
            raise UsageError(f"stage {item!r} needs a half width")
        if count < 2 or not 0 < scale <= 1:
            raise UsageError(f"bad stage {item!r}")
        stages.append(StageConfig(scale, count, half, True, "inverse" if n == 0 else "linear"))
    if not stages:
        raise UsageError("empty stage list")
    if guided is not None:
        flags = [f.strip() not in ("0", "false", "no") for f in guided.split(",")]
        if len(flags) != len(stages):
            raise UsageError("--guide-stages needs one flag per stage")
        stages = [StageConfig(s.scale, s.num_hypotheses, s.half_width, f, s.spacing) for s, f in zip(stages, flags)]
    return tuple(stages)


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("empty number list")
    return vals


def parse_seeds(text: str) -> tuple[int, ...]:
    """``0-19`` ranges and comma lists; a bare number ``n`` means ``0..n-1``."""
    try:
        if "," not in text and "-" not in text:
            return tuple(range(int(text)))
        seeds = []
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
        return tuple(seeds)
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None


def threads_of(args) -> int:
    return args.threads if args.threads is not None else default_workers()


def report(lines: dict, stream=None) -> str:
    text = "\n".join(f"{k} = {v}" for k, v in lines.items())
    print(text, file=stream or sys.stdout)
    return text


# --- generate -----------------------------------------------------------------


def _gt_range(dm: DepthMap, margin: float, planes: int = 64) -> dataio.DepthRangeMeta:
    d = dm.depth[dm.validity]
    lo, hi = float(d.min()), float(d.max())
    span = hi - lo
    z0, z1 = max(lo - margin * span, 0.5 * lo), hi + margin * span
    return dataio.DepthRangeMeta(z0, (z1 - z0) / (planes - 1), planes, z1)


def cmd_generate(args) -> int:
    if args.config:
        try:
            cfg = read_scene_config(args.config)
        except (OSError, configparser.Error, ValueError, KeyError) as exc:
            raise UsageError(f"invalid scene config: {exc}") from None
    else:
        cfg = FAMILIES[args.family](args.seed)
    _, gt = generate_scene(cfg, args.seed)
    hints = None
    if args.density > 0:
        hints = [sample_hints(gt, i, args.density, args.seed, cfg.hint_noise) for i in range(len(gt.depths))]
    ranges = [_gt_range(d, cfg.range_margin) for d in gt.depths]
    root = dataio.write_scene(args.out, gt.cameras, gt.images, ranges, gt.depths, hints)
    valid = [float(d.validity.mean()) for d in gt.depths]
    report(
        {
            "out": root,
            "seed": args.seed,
            "views": len(gt.cameras),
            "size": f"{cfg.width}x{cfg.height}",
            "rig": cfg.rig,
            "primitives": len(cfg.rects) + len(cfg.spheres),
            "valid_fraction_mean": f"{np.mean(valid):.4f}",
            "hint_density": args.density,
            "depth_range.0": f"{ranges[0].z_min:.4f} {ranges[0].z_max:.4f}",
        }
    )
    return 0


# --- reconstruct --------------------------------------------------------------


def _scene_hints(scene: dataio.SceneFolder, run: RunConfig) -> list[SparseDepthMap] | None:
    if run.mode == "unguided":
        return None
    if scene.hints is not None:
        return scene.hints
    if scene.depths is None:
        raise GuidedMVSError(f"mode {run.mode} needs hints/ or depths/ in {scene.root}")
    gt = GroundTruth(tuple(scene.depths), tuple(scene.images), tuple(scene.cameras))
    return [sample_hints(gt, i, run.density, run.seed) for i in range(len(scene))]


def reconstruct_scene(run: RunConfig, refs: list[int] | None = None) -> dict:
    scene = dataio.load_scene(run.dataset)
    all_hints = _scene_hints(scene, run)
    refs = list(range(len(scene))) if refs is None else refs
    out = Path(run.out)
    (out / "depths").mkdir(parents=True, exist_ok=True)
    (out / "confidence").mkdir(parents=True, exist_ok=True)
    info: dict = {"mode": run.mode, "views": len(refs), "stages": len(run.stages), "threads": run.threads}
    for ref in refs:
        if not 0 <= ref < len(scene):
            raise UsageError(f"reference view {ref} out of range")
        views = scene.view_set(ref)
        ids = [ref] + scene.pairs[ref]
        c = run.c or plane_spacing(views.depth_range, run.stages[0])
        cfg = PipelineConfig(run.stages, GuidanceParams(run.k, c), views.depth_range, run.threads)
        hints = None
        name = scene.names[ref]
        if all_hints is not None:
            hints, stats = aggregate_hints(
                [all_hints[i] for i in ids], [scene.cameras[i] for i in ids], run.mode, run.filter
            )
            for key, val in stats.items():
                info[f"view.{name}.{key}"] = f"{val:.4f}" if isinstance(val, float) else val
            info[f"view.{name}.density_used"] = f"{hints.density:.4f}"
        t0 = time.perf_counter()
        est = run_coarse_to_fine(views, hints, cfg)
        info[f"view.{name}.seconds"] = f"{time.perf_counter() - t0:.2f}"
        info[f"view.{name}.c"] = f"{c:.6g}"
        dataio.write_depth(out / "depths" / f"{name}.pfm", est)
        dataio.write_pfm(out / "confidence" / f"{name}.pfm", est.confidence)
    return info


def cmd_reconstruct(args) -> int:
    run = RunConfig(
        dataset=Path(args.dataset),
        out=Path(args.out),
        mode=args.mode,
        stages=parse_stages(args.stages, args.guide_stages),
        k=args.k,
        c=args.c,
        filter=FilterParams(args.epsilon, args.radius),
        density=args.density,
        seed=args.seed,
        threads=threads_of(args),
    )
    refs = [int(r) for r in args.refs.split(",")] if args.refs else None
    info = reconstruct_scene(run, refs)
    with open(run.out / "report.txt", "w") as fh:
        report(info, fh)
    report(info)
    return 0


# --- evaluate -----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    taus = parse_floats(args.taus)
    est_files = {p.stem: p for p in dataio.list_depth_files(args.est)}
    gt_files = {p.stem: p for p in dataio.list_depth_files(args.gt)}
    if not est_files or set(est_files) != set(gt_files):
        missing = sorted(set(gt_files) ^ set(est_files))
        raise GuidedMVSError(f"estimate and ground-truth view sets differ: {missing[:5]}")
    rows = []
    for name in sorted(gt_files):
        est = dataio.read_depth(est_files[name])
        gt = dataio.read_depth(gt_files[name])
        rows.append((name, error_rates(est, gt, taus)))
    mean = np.mean([r for _, r in rows], axis=0)
    header = f"{'view':<12}" + "".join(f"{'>' + format(t, 'g'):>9}" for t in taus)
    lines = [f"taus = {','.join(format(t, 'g') for t in taus)}", header]
    lines += [f"{name:<12}" + "".join(f"{v:9.4f}" for v in r) for name, r in rows]
    lines.append(f"{'mean':<12}" + "".join(f"{v:9.4f}" for v in mean))
    lines += [f"mean.tau_{format(t, 'g')} = {v:.6f}" for t, v in zip(taus, mean)]
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


# --- fuse / evaluate-cloud -----------------------------------------------------


def cmd_fuse(args) -> int:
    scene = dataio.load_scene(args.dataset)
    depth_dir = Path(args.depths) if args.depths else Path(args.dataset) / "depths"
    depths = [dataio.read_depth(depth_dir / f"{n}.pfm") for n in scene.names]
    th = EvalThresholds(min_views=args.min_views, max_reproj=args.max_reproj, max_rel_depth=args.max_rel_depth)
    cloud = fuse(depths, scene.cameras, th, scene.images)
    dataio.write_ply(args.out, cloud.points, cloud.colors)
    if len(cloud) == 0:
        print("warning: fusion produced an empty cloud", file=sys.stderr)
    report({"points": len(cloud), "min_views": th.min_views, "out": args.out})
    return 0


def cmd_evaluate_cloud(args) -> int:
    pts, _ = dataio.read_ply(args.cloud)
    if args.gt_ply:
        gt_pts, _ = dataio.read_ply(args.gt_ply)
    else:
        scene = dataio.load_scene(args.dataset)
        if scene.depths is None:
            raise GuidedMVSError(f"{args.dataset} has no depths/ for a ground-truth cloud")
        gt_pts = np.concatenate([depth_to_cloud(d, c).points for d, c in zip(scene.depths, scene.cameras)])
    if pts.shape[0] == 0:
        print("warning: estimated cloud is empty; nothing to evaluate", file=sys.stderr)
        report({"points": 0})
        return 0
    acc, comp, avg = cloud_accuracy_completeness(PointCloud(pts), PointCloud(gt_pts), args.dist_cap)
    report(
        {
            "points": pts.shape[0],
            "gt_points": gt_pts.shape[0],
            "dist_cap": args.dist_cap,
            "accuracy": f"{acc:.6f}",
            "completeness": f"{comp:.6f}",
            "average": f"{avg:.6f}",
        }
    )
    return 0


# --- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    scene = None
    if args.config:
        try:
            scene = read_scene_config(args.config)
        except (OSError, configparser.Error, ValueError, KeyError) as exc:
            raise UsageError(f"invalid scene config: {exc}") from None
    cfg = AblationConfig(
        seeds=parse_seeds(args.seeds),
        family=args.family,
        density=args.density,
        k=args.k,
        c=args.c,
        taus=parse_floats(args.taus),
        filter=FilterParams(args.epsilon, args.radius),
        workers=threads_of(args),
        scene=scene,
    )
    if 1.0 not in cfg.taus:
        raise UsageError("--taus must include 1 for the ordering checks")
    parts = []
    t1 = strategy_study(cfg)
    parts += [t1.format(), format_checks(strategy_checks(t1))]
    t3 = stage_study(cfg, STAGE_VARIANTS)
    parts += [t3.format(), format_checks(stage_checks(t3))]
    text = "\n\n".join(parts)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidedmvs", description="Depth-hint guided plane-sweep stereo.")
    sub = p.add_subparsers(dest="command", required=True)

    def common_guidance(sp):
        sp.add_argument("--k", type=float, default=10.0, help="modulation amplitude")
        sp.add_argument("--c", type=float, default=None, help="Gaussian width; default is the first-stage plane spacing")
        sp.add_argument("--epsilon", type=float, default=3.0, help="depth gap of the occlusion filter")
        sp.add_argument("--radius", type=int, default=2, help="neighbourhood radius of the occlusion filter")
        sp.add_argument("--density", type=float, default=DEFAULT_DENSITY, help="hint density sampled from ground truth")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--threads", type=int, default=None, help="worker threads (env GUIDEDMVS_THREADS, else all cores)")

    g = sub.add_parser("generate", help="render a synthetic dataset")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--config", help="scene config file")
    src.add_argument("--family", choices=sorted(FAMILIES), default="standard")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--density", type=float, default=DEFAULT_DENSITY, help="hints written per view (0 to skip)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reconstruct", help="estimate depth maps for a dataset")
    r.add_argument("dataset")
    r.add_argument("--mode", choices=MODES, default="fmvg")
    r.add_argument("--stages", default="0.25:64,0.5:16:4,1:8:2", help="scale:planes[:half_width],...")
    r.add_argument("--guide-stages", default=None, help="per-stage guidance flags, e.g. 1,0,0")
    r.add_argument("--refs", default=None, help="reference view indices, default all")
    r.add_argument("--out", required=True)
    common_guidance(r)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="depth error rates against ground truth")
    e.add_argument("est")
    e.add_argument("gt")
    e.add_argument("--taus", default="1,2,3,4")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("fuse", help="fuse depth maps into a PLY cloud")
    f.add_argument("dataset")
    f.add_argument("--depths", default=None, help="directory of estimated depth PFMs")
    f.add_argument("--min-views", type=int, default=2)
    f.add_argument("--max-reproj", type=float, default=1.0)
    f.add_argument("--max-rel-depth", type=float, default=0.01)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    ec = sub.add_parser("evaluate-cloud", help="accuracy and completeness of a cloud")
    ec.add_argument("cloud")
    gsrc = ec.add_mutually_exclusive_group(required=True)
    gsrc.add_argument("--dataset", help="dataset whose depths/ define the ground-truth cloud")
    gsrc.add_argument("--gt-ply", help="ground-truth PLY")
    ec.add_argument("--dist-cap", type=float, default=20.0)
    ec.set_defaults(func=cmd_evaluate_cloud)

    a = sub.add_parser("ablate", help="guidance-strategy and per-stage ablations")
    asrc = a.add_mutually_exclusive_group()
    asrc.add_argument("--config", help="scene config file (texture reseeded per seed)")
    asrc.add_argument("--family", choices=sorted(FAMILIES), default="standard")
    a.add_argument("--seeds", default="20", help="count n (0..n-1), range a-b or list")
    a.add_argument("--taus", default="1,2,3,4")
    a.add_argument("--out", default=None)
    common_guidance(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GuidedMVSError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # config objects validate their own fields
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
