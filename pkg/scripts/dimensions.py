"""Kernel-sum dimension diagnostics on uniform samples and the toy and CdV trajectories.

Writes one ``dimension_<name>.csv`` per point set to the output directory.
"""
import argparse
from pathlib import Path

from stochastic_inertia.dynamics import SystemSpec
from stochastic_inertia.experiments import (cdv_regime, cdv_trajectory, regime_diagnostic,
                                            toy_base_trajectory, uniform_samples)
from stochastic_inertia.kernel import geometric_grid, kernel_sum_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--skip-cdv", action="store_true")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    grid = geometric_grid(1e-3, 1.0, 10)
    curves = {shape: kernel_sum_curve(uniform_samples(shape), grid) for shape in ("line", "plane", "ball")}
    curves["toy3d"] = kernel_sum_curve(toy_base_trajectory(SystemSpec.toy3d()), grid)
    if not args.skip_cdv:
        ds = cdv_trajectory()
        reg = cdv_regime(ds)
        cgrid = geometric_grid(1e-4, 1.0, 10)
        curves["cdv_regime"] = regime_diagnostic(ds, reg.mask, cgrid)
        curves["cdv_regime_cross"] = regime_diagnostic(ds, reg.mask, cgrid, cross=True)
        curves["cdv_all"] = kernel_sum_curve(ds.points[:-1], cgrid, ds.dt)
    for name, c in curves.items():
        c.to_csv(args.out / f"dimension_{name}.csv")
        lo, hi = c.plateau()
        print(f"{name:18s} d={c.d_est:.3f} sigma*={c.sigma_star:.3g} plateau=({lo:.3g}, {hi:.3g})")


if __name__ == "__main__":
    main()
