"""Occlusion-filter sweep: outlier recall, inlier loss and the resulting depth error.

For each (epsilon, radius) pair the script reports how many merged hints are removed,
split by whether they agree with the ray-cast ground truth, and optionally the mean
>1 error of the filtered multi-view guidance next to the unfiltered one.

Example:
    python3 scripts/filter_efficacy.py --family two-plane --seeds 20 --eps 2,3,6 --radii 1,2
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

from guidedmvs.ablation import FAMILIES, AblationConfig, filter_efficacy, strategy_study
from guidedmvs.aggregation import FilterParams
from guidedmvs.cli import parse_floats, parse_seeds


@dataclass(frozen=True)
class SweepSettings:
    seeds: tuple[int, ...]
    family: str
    epsilons: tuple[float, ...]
    radii: tuple[int, ...]
    outlier_gap: float
    with_error: bool


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", default="20")
    p.add_argument("--family", choices=sorted(FAMILIES), default="two-plane")
    p.add_argument("--eps", default="3")
    p.add_argument("--radii", default="2")
    p.add_argument("--outlier-gap", type=float, default=2.0)
    p.add_argument("--with-error", action="store_true", help="also run the depth pipeline (slower)")
    a = p.parse_args(argv)
    s = SweepSettings(
        parse_seeds(a.seeds), a.family, parse_floats(a.eps),
        tuple(int(r) for r in a.radii.split(",")), a.outlier_gap, a.with_error,
    )

    head = f"{'eps':>6} {'radius':>6} {'outliers':>9} {'recall':>8} {'inl.loss':>9}"
    if s.with_error:
        base = strategy_study(AblationConfig(seeds=s.seeds, family=s.family), modes=("mvg",))
        print(f"mvg mean err>1 = {base.mean_at('mvg'):.4f}")
        head += f" {'fmvg>1':>8}"
    print(head)
    for eps in s.epsilons:
        for r in s.radii:
            cfg = AblationConfig(seeds=s.seeds, family=s.family, filter=FilterParams(eps, r))
            eff = filter_efficacy(cfg, s.outlier_gap)
            line = f"{eps:>6g} {r:>6d} {eff.outliers:>9d} {eff.outlier_recall:>8.4f} {eff.inlier_loss:>9.4f}"
            if s.with_error:
                line += f" {strategy_study(cfg, modes=('fmvg',)).mean_at('fmvg'):>8.4f}"
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
