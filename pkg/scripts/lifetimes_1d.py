"""1D regime lifetimes from the chain, Monte Carlo and the analytic oracle.

Writes ``lifetimes_1d_eps{eps}.csv`` to the output directory.
"""
import argparse
from pathlib import Path

from stochastic_inertia.dynamics import SystemSpec
from stochastic_inertia.experiments import peak_sigma, toy_lifetime_comparison

GRID = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.1, 0.15]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--eps", type=float, nargs="+", default=[0.025, 0.05],
                    help="reinsertion standard deviations")
    ap.add_argument("--n-steps", type=int, default=20_000)
    ap.add_argument("--mc-steps", type=int, default=5_000_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for eps in args.eps:
        cmp = toy_lifetime_comparison(SystemSpec.toy1d(eps=eps), GRID, n_steps=args.n_steps,
                                      mc_steps=args.mc_steps, seed=args.seed)
        path = args.out / f"lifetimes_1d_eps{eps:g}.csv"
        cmp.to_csv(path)
        peaks = ", ".join(f"{r.method} {peak_sigma(r):g}" for r in (cmp.markov, cmp.montecarlo, cmp.analytic))
        print(f"eps={eps:g}: {cmp.n_entries} entries, peaks {peaks} -> {path}")


if __name__ == "__main__":
    main()
