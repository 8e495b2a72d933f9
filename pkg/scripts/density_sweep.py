"""Run a cascade tuned for one hint density at other densities.

The configuration (c and stage ranges) is fixed as for ``--tuned`` density; the hints fed
to it vary. A density of 0 must reproduce the unguided cascade exactly.

Example:
    python3 scripts/density_sweep.py --seeds 5 --densities 0,0.005,0.01,0.03,0.1
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from guidedmvs.ablation import FAMILIES, AblationConfig, stage_study
from guidedmvs.cli import parse_floats, parse_seeds


@dataclass(frozen=True)
class SweepSettings:
    seeds: tuple[int, ...]
    family: str
    tuned: float
    densities: tuple[float, ...]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", default="5")
    p.add_argument("--family", choices=sorted(FAMILIES), default="standard")
    p.add_argument("--tuned", type=float, default=0.03)
    p.add_argument("--densities", default="0,0.005,0.01,0.03,0.1")
    a = p.parse_args(argv)
    s = SweepSettings(parse_seeds(a.seeds), a.family, a.tuned, parse_floats(a.densities))

    cfg = AblationConfig(seeds=s.seeds, family=s.family, density=s.tuned)
    variants = {"none": (False, False, False), "all": (True, True, True)}
    print(f"{'density':>8} {'unguided>1':>11} {'guided>1':>9} {'identical':>10}")
    for rho in s.densities:
        t = stage_study(cfg, variants, density=rho)
        same = bool(np.array_equal(t.rates["none"], t.rates["all"]))
        print(f"{rho:>8g} {t.mean_at('none'):>11.4f} {t.mean_at('all'):>9.4f} {str(same):>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
