"""Guidance-strategy and per-stage-guidance ablations over seeded synthetic scenes.

Both studies share one unguided first-stage volume per scene, so variants differ only
in the hints they are given.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .aggregation import MODES, FilterParams, aggregate_hints, merge_hints, outlier_mask, project_hints
from .fusion import error_rates
from .guidance import GuidanceParams, SparseDepthMap
from .inference import Cascade, PipelineConfig, default_stages, plane_spacing, single_stage_config
from .synthetic import SceneConfig, generate_scene, sample_all_hints, standard_scene, two_plane_scene

FAMILIES: dict[str, Callable[[int], SceneConfig]] = {
    "standard": standard_scene,
    "two-plane": two_plane_scene,
}

STAGE_VARIANTS = {
    "none": (False, False, False),
    "stage1": (True, False, False),
    "stage2": (False, True, False),
    "stage3": (False, False, True),
    "all": (True, True, True),
}


@dataclass(frozen=True)
class AblationConfig:
    """Settings shared by both studies.

    ``c=None`` sets the Gaussian width to the plane spacing of the first sweep.
    The strategy study uses one full-resolution sweep of ``hypotheses`` linear planes;
    the stage study uses the default three-stage cascade.
    """

    seeds: tuple[int, ...] = tuple(range(20))
    family: str = "standard"
    density: float = 0.03
    k: float = 10.0
    c: float | None = None
    taus: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    filter: FilterParams = field(default_factory=FilterParams)
    hypotheses: int = 64
    spacing: str = "linear"
    workers: int = 1
    scene: SceneConfig | None = None  # overrides ``family`` when set

    def scene_config(self, seed: int) -> SceneConfig:
        if self.scene is not None:
            return replace(self.scene, texture_seed=seed)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scene family {self.family!r}; choose from {sorted(FAMILIES)}")
        return FAMILIES[self.family](seed)


@dataclass
class AblationTable:
    """Per-variant, per-seed error rates (``rates[name]`` has shape ``(seeds, taus)``)."""

    title: str
    taus: tuple[float, ...]
    seeds: tuple[int, ...]
    rates: dict[str, np.ndarray] = field(default_factory=dict)
    densities: dict[str, np.ndarray] = field(default_factory=dict)

    def mean(self, name: str) -> np.ndarray:
        return self.rates[name].mean(axis=0)

    def mean_at(self, name: str, tau: float = 1.0) -> float:
        return float(self.mean(name)[self.taus.index(tau)])

    def format(self) -> str:
        head = f"{'variant':<10}" + "".join(f"{'>' + format(t, 'g'):>9}" for t in self.taus)
        lines = [f"# {self.title} ({len(self.seeds)} scenes)", head]
        for name in self.rates:
            lines.append(f"{name:<10}" + "".join(f"{v:9.4f}" for v in self.mean(name)))
        for name, d in self.densities.items():
            lines.append(f"density.{name} = {d.mean():.4f}")
        return "\n".join(lines)


def _hints_for(gt, density: float, seed: int) -> list[SparseDepthMap]:
    if density == 0:
        h, w = gt.depths[0].depth.shape
        return [SparseDepthMap.empty(w, h) for _ in gt.depths]
    return sample_all_hints(gt, density, seed=seed)


def strategy_study(cfg: AblationConfig, modes=MODES) -> AblationTable:
    """Error rates of unguided / g / mvg / fmvg on a single full-range sweep."""
    table = AblationTable("guiding strategy", cfg.taus, cfg.seeds)
    for name in modes:
        table.rates[name] = np.zeros((len(cfg.seeds), len(cfg.taus)))
    dens = {"reference": [], "merged": [], "filtered": []}
    for n, seed in enumerate(cfg.seeds):
        views, gt = generate_scene(cfg.scene_config(seed), seed)
        pipe = single_stage_config(cfg.hypotheses, 1.0, cfg.spacing, None, views.depth_range, cfg.workers)
        c = cfg.c or plane_spacing(views.depth_range, pipe.stages[0])
        cascade = Cascade(views, replace(pipe, guidance=GuidanceParams(cfg.k, c)))
        base = cascade.first_volume()
        hints = _hints_for(gt, cfg.density, seed)
        for name in modes:
            h, stats = aggregate_hints(hints, gt.cameras, name, cfg.filter)
            est = cascade.output(cascade.run(h, base))
            table.rates[name][n] = error_rates(est, gt.depths[0], cfg.taus)
            if name == "fmvg":
                dens["reference"].append(stats["density_reference"])
                dens["merged"].append(stats["density_merged"])
                dens["filtered"].append(stats["density_filtered"])
    table.densities = {k: np.array(v) for k, v in dens.items() if v}
    return table


def stage_study(
    cfg: AblationConfig, variants: dict[str, tuple[bool, ...]] = STAGE_VARIANTS, density: float | None = None
) -> AblationTable:
    """Error rates of the three-stage cascade with guidance switched on per stage.

    Hints are the filtered multi-view set. ``density`` overrides ``cfg.density`` (used to
    run a configuration tuned for some density with a different one).
    """
    rho = cfg.density if density is None else density
    table = AblationTable("multi-stage guidance", cfg.taus, cfg.seeds)
    for name in variants:
        table.rates[name] = np.zeros((len(cfg.seeds), len(cfg.taus)))
    for n, seed in enumerate(cfg.seeds):
        views, gt = generate_scene(cfg.scene_config(seed), seed)
        stages = default_stages()
        c = cfg.c or plane_spacing(views.depth_range, stages[0])
        pipe = PipelineConfig(stages, GuidanceParams(cfg.k, c), views.depth_range, cfg.workers)
        hints = _hints_for(gt, rho, seed)
        h, _ = aggregate_hints(hints, gt.cameras, "fmvg", cfg.filter)
        shared = Cascade(views, pipe)
        base = shared.first_volume()
        for name, flags in variants.items():
            cascade = shared.reconfigured(pipe.with_guidance(flags))
            est = cascade.output(cascade.run(h if any(flags) else None, base))
            table.rates[name][n] = error_rates(est, gt.depths[0], cfg.taus)
    return table


@dataclass(frozen=True)
class FilterEfficacy:
    outliers: int
    inliers: int
    outliers_removed: int
    inliers_removed: int

    @property
    def outlier_recall(self) -> float:
        return self.outliers_removed / max(self.outliers, 1)

    @property
    def inlier_loss(self) -> float:
        return self.inliers_removed / max(self.inliers, 1)


def filter_efficacy(cfg: AblationConfig, outlier_gap: float = 2.0) -> FilterEfficacy:
    """Pooled over seeds: how many merged hints the occlusion filter removes.

    A merged hint is an outlier when it differs from the ray-cast reference depth at its
    pixel by more than ``outlier_gap``.
    """
    counts = np.zeros(4, dtype=int)
    for seed in cfg.seeds:
        _, gt = generate_scene(cfg.scene_config(seed), seed)
        hints = _hints_for(gt, cfg.density, seed)
        ref = gt.cameras[0]
        sets = [project_hints(h, c, ref) for h, c in zip(hints[1:], gt.cameras[1:])]
        merged = merge_hints(sets, hints[0], ref)
        truth = gt.depths[0].depth[merged.y.astype(int), merged.x.astype(int)]
        with np.errstate(invalid="ignore"):
            bad = ~(np.abs(merged.depth - truth) <= outlier_gap)
        removed = outlier_mask(merged, cfg.filter)
        counts += [bad.sum(), (~bad).sum(), (bad & removed).sum(), (~bad & removed).sum()]
    return FilterEfficacy(*(int(v) for v in counts))


def strategy_checks(table: AblationTable, tau: float = 1.0) -> dict[str, bool]:
    m = {name: table.mean_at(name, tau) for name in table.rates}
    out = {
        "unguided > g": m["unguided"] > m["g"],
        "g >= fmvg": m["g"] >= m["fmvg"],
        "fmvg <= mvg": m["fmvg"] <= m["mvg"],
    }
    if "filtered" in table.densities:
        out["fmvg density in [0.10, 0.15]"] = bool(0.10 <= table.densities["filtered"].mean() <= 0.15)
    return out


def stage_checks(table: AblationTable, tau: float = 1.0) -> dict[str, bool]:
    m = {name: table.mean_at(name, tau) for name in table.rates}
    return {
        "all <= stage1": m["all"] <= m["stage1"],
        "stage1 <= none": m["stage1"] <= m["none"],
    }


def format_checks(checks: dict[str, bool]) -> str:
    return "\n".join(f"check {name}: {'pass' if ok else 'FAIL'}" for name, ok in checks.items())
