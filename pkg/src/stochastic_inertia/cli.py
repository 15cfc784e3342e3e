"""Command-line front end: simulate, diagnose, cluster, escape, lifetimes, oracle, mc, compare.

Every command writes CSV output plus ``manifest_<command>.json`` (resolved
configuration, its hash, library versions and seeds) into ``--out``. Options can come from an INI file
(section ``[run]``) given with ``--config``; command-line flags override it.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain import entry_states, inertia_profile, markov_lifetimes
from .dynamics import KINDS, SystemSpec, TrajectoryDataset, sample_trajectory
from .errors import ConfigError, NumericalError
from .experiments import (CDV_X0, cdv_regime, spectral_regime, regime_diagnostic, toy1d_pointwise,
                          toy_lifetime_comparison)
from .kernel import geometric_grid, kernel_sum_curve
from .montecarlo import mc_lifetime_curve
from .oracle import analytic_escape_time, analytic_lifetimes
from .regimes import RegimeClassifier, RegimePartition

log = logging.getLogger("stochastic_inertia")

THREADS_ENV = "STOCHASTIC_INERTIA_THREADS"
COMMANDS = ("simulate", "diagnose", "cluster", "escape", "lifetimes", "oracle", "mc", "compare")

_SYSTEM_DEFAULTS = {
    # dt, x0, sigma_min, sigma_max
    "toy1d": (5e-2, (1e-4,), 5e-3, 1.5e-1),
    "toy3d": (1e-1, (5e-2,) * 3, 1e-3, 1e-1),
    "cdv": (10.0, CDV_X0, 1e-3, 1e-1),
}


@dataclass
class RunConfig:
    """Everything a command needs; ``None`` fields take the system's default."""

    system: str = "toy1d"
    seed: int = 0
    out: str = "out"
    # trajectory
    trajectory: str | None = None  # existing trajectory file instead of simulating
    n_steps: int = 20_000
    dt: float | None = None
    dt_star: float = 1e-3
    x0: tuple | None = None
    burn_in: int = 0
    reinsertion_scale: float | None = None
    # sigma grid
    sigma_min: float | None = None
    sigma_max: float | None = None
    sigma_per_decade: int = 5
    # regime
    regime: str = "auto"  # path to a regime CSV, or auto (toy ball / spectral clustering)
    cluster_sigma: float = 1e-2
    n_vecs: int = 4
    k_clusters: int = 2
    entry_mode: str = "uniform-entries"
    # solvers and reference methods
    solver: str = "auto"
    mc_steps: int = 5_000_000
    mc_dt_star: float = 1e-2
    targets: tuple = ()  # starting points for pointwise escape curves (toy1d)
    mc_realizations: int = 10_000
    n_workers: int = 1

    def __post_init__(self):
        if self.system not in KINDS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {KINDS}")
        dt, x0, lo, hi = _SYSTEM_DEFAULTS[self.system]
        self.dt = dt if self.dt is None else float(self.dt)
        self.x0 = tuple(x0 if self.x0 is None else (float(v) for v in self.x0))
        self.sigma_min = lo if self.sigma_min is None else float(self.sigma_min)
        self.sigma_max = hi if self.sigma_max is None else float(self.sigma_max)
        self.targets = tuple(float(v) for v in self.targets)
        if self.dt <= 0 or self.dt_star <= 0:
            raise ConfigError("dt and dt_star must be positive")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.sigma_per_decade < 1:
            raise ConfigError("sigma_per_decade must be positive")
        if self.entry_mode not in ("uniform-entries", "stationary"):
            raise ConfigError(f"unknown entry mode {self.entry_mode!r}")
        if len(self.x0) != len(x0):
            raise ConfigError(f"x0 needs {len(x0)} components")
        for name in ("trajectory", "regime"):
            path = getattr(self, name)
            if path and path != "auto" and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")

    @property
    def sigma_grid(self) -> np.ndarray:
        return geometric_grid(self.sigma_min, self.sigma_max, self.sigma_per_decade)

    def spec(self) -> SystemSpec:
        if self.system == "toy1d":
            return SystemSpec.toy1d(**_eps(self.reinsertion_scale))
        if self.system == "toy3d":
            return SystemSpec.toy3d(**_eps(self.reinsertion_scale))
        return SystemSpec.cdv()

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["x0"] = list(self.x0)
        d["targets"] = list(self.targets)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()


def _eps(value):
    return {} if value is None else {"eps": float(value)}


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if name in ("x0", "targets"):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if raw.lower() in ("none", ""):
        return None
    if kind.startswith("int"):
        return int(float(raw))
    if kind.startswith("float"):
        return float(raw)
    return raw


def load_config(path) -> dict:
    """Read ``[run]`` key = value pairs from an INI file."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"config file not found: {path}")
    if "run" not in parser:
        raise ConfigError(f"{path}: missing [run] section")
    out = {}
    for key, raw in parser["run"].items():
        name = key.replace("-", "_")
        if name not in _FIELD_TYPES:
            raise ConfigError(f"{path}: unknown option {key!r}")
        try:
            out[name] = _coerce(name, raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key!r}: {raw!r}") from exc
    return out


# ---------------------------------------------------------------------------
# shared steps


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {"stochastic_inertia": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(cfg: RunConfig, command: str, outputs: list, summary: dict | None = None) -> Path:
    out = Path(cfg.out)
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "config_sha256": cfg.digest(),
        "versions": _versions(),
        "seeds": {"master": cfg.seed},
        "outputs": [str(Path(p).name) for p in outputs],
        "summary": summary or {},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v)}")


def get_trajectory(cfg: RunConfig) -> TrajectoryDataset:
    if cfg.trajectory:
        return TrajectoryDataset.load(cfg.trajectory)
    spec = cfg.spec()
    return sample_trajectory(spec, np.asarray(cfg.x0), cfg.n_steps, cfg.dt,
                             dt_star=cfg.dt_star if spec.kind == "cdv" else None,
                             seed=cfg.seed, burn_in=cfg.burn_in)


def get_regime(cfg: RunConfig, dataset: TrajectoryDataset) -> RegimePartition:
    if cfg.regime and cfg.regime != "auto":
        part = RegimePartition.load(cfg.regime)
        if part.n != dataset.n:
            raise ConfigError(f"regime file has {part.n} states, trajectory has {dataset.n}")
        return part
    spec = cfg.spec()
    if spec.is_toy:
        return RegimePartition.from_mask(spec.in_regime(dataset.points[:-1]))
    return cdv_regime(dataset, cfg.cluster_sigma, cfg.n_vecs, cfg.k_clusters, cfg.seed, spec).partition


def _mc_lifetimes(cfg, dataset, part, grid):
    spec = cfg.spec()
    kw = {}
    if not spec.is_toy:
        kw = {"membership": RegimeClassifier(dataset.points[:-1], part.mask).inside_nn,
              "dt_star": cfg.mc_dt_star}
    return mc_lifetime_curve(spec, dataset.points[0], grid, dataset.dt, cfg.mc_steps, seed=cfg.seed, **kw)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig):
    ds = get_trajectory(cfg)
    path = Path(cfg.out) / "trajectory.csv"
    ds.save(path)
    return [path], {"n_points": len(ds.points), "reinsertions": len(ds.reinsertion_indices)}


def cmd_diagnose(cfg: RunConfig):
    ds = get_trajectory(cfg)
    grid = cfg.sigma_grid
    outputs, summary = [], {}
    sets = {"all": None, "regime": get_regime(cfg, ds).mask}
    for name, mask in sets.items():
        curve = kernel_sum_curve(ds, grid) if mask is None else regime_diagnostic(ds, mask, grid)
        path = Path(cfg.out) / f"diagnostic_{name}.csv"
        curve.to_csv(path)
        outputs.append(path)
        summary[name] = {"sigma_star": curve.sigma_star, "d": curve.d_est, "plateau": curve.plateau()}
        print(f"{name:>7}: d = {curve.d_est:.3f} at sigma* = {curve.sigma_star:.4g}, "
              f"plateau {curve.plateau()[0]:.3g} .. {curve.plateau()[1]:.3g}")
    return outputs, summary


def cmd_cluster(cfg: RunConfig):
    ds = get_trajectory(cfg)
    if cfg.system == "cdv":
        res = cdv_regime(ds, cfg.cluster_sigma, cfg.n_vecs, cfg.k_clusters, cfg.seed, cfg.spec())
        part, anchor, extra = res.partition, res.anchor, {"anchor_residual": res.anchor_residual}
        vals = res.eigenvalues
    else:  # toy systems: the regime is the cluster around the fixed point at the origin
        anchor = np.zeros(ds.points.shape[1])
        part, vals = spectral_regime(ds, anchor, cfg.cluster_sigma, cfg.n_vecs, cfg.k_clusters, cfg.seed)
        extra = {}
    path = Path(cfg.out) / "regime.csv"
    part.to_csv(path)
    print(f"regime: {len(part.indices)} of {part.n} states")
    return [path], {"regime_size": len(part.indices), "anchor": anchor.tolist(),
                    "eigenvalues": [str(v) for v in vals], **extra}


def cmd_escape(cfg: RunConfig):
    ds = get_trajectory(cfg)
    part = get_regime(cfg, ds)
    prof = inertia_profile(ds, part.indices, cfg.sigma_grid, method=cfg.solver, n_workers=cfg.n_workers)
    out = Path(cfg.out)
    prof.to_csv(out / "escape_profile.csv")
    prof.theta_to_csv(out / "theta.csv")
    ok = ~prof.flagged & np.isfinite(prof.r_max)
    return [out / "escape_profile.csv", out / "theta.csv"], {
        "n_states": len(prof.indices), "fraction_r_positive": float(np.mean(prof.r_max[ok] > 0)),
        "failed_sigma": prof.errors}


def cmd_lifetimes(cfg: RunConfig):
    ds = get_trajectory(cfg)
    part = get_regime(cfg, ds)
    rep = markov_lifetimes(ds, part.indices, cfg.sigma_grid, entry_mode=cfg.entry_mode,
                           method=cfg.solver, n_workers=cfg.n_workers)
    path = Path(cfg.out) / "lifetimes_markov.csv"
    rep.to_csv(path)
    return [path], {"lifetimes": rep.lifetimes}


def cmd_oracle(cfg: RunConfig):
    if cfg.system != "toy1d":
        raise ConfigError("the analytic oracle exists only for the 1D toy system")
    ds = get_trajectory(cfg)
    mask = cfg.spec().in_regime(ds.points[:-1])
    grid = np.concatenate([[0.0], cfg.sigma_grid])
    rep = analytic_lifetimes(grid, ds.points[entry_states(mask), 0])
    out = Path(cfg.out)
    rep.to_csv(out / "lifetimes_analytic.csv")
    outputs = [out / "lifetimes_analytic.csv"]
    if cfg.targets:
        rows = [(x, s, analytic_escape_time(x, s)) for x in cfg.targets for s in cfg.sigma_grid]
        np.savetxt(out / "escape_analytic.csv", np.array(rows), delimiter=",", comments="",
                   header="x0,sigma,escape_time", fmt="%.17g")
        outputs.append(out / "escape_analytic.csv")
    return outputs, {}


def cmd_mc(cfg: RunConfig):
    ds = get_trajectory(cfg)
    part = get_regime(cfg, ds)
    rep = _mc_lifetimes(cfg, ds, part, np.concatenate([[0.0], cfg.sigma_grid]))
    path = Path(cfg.out) / "lifetimes_montecarlo.csv"
    rep.to_csv(path)
    return [path], {"lifetimes": rep.lifetimes}


def cmd_compare(cfg: RunConfig):
    out = Path(cfg.out)
    spec = cfg.spec()
    if spec.is_toy:
        ds = get_trajectory(cfg)
        res = toy_lifetime_comparison(spec, cfg.sigma_grid, seed=cfg.seed, mc_steps=cfg.mc_steps,
                                      entry_mode=cfg.entry_mode, n_workers=cfg.n_workers, dataset=ds)
        res.to_csv(out / "compare.csv")
        outputs = [out / "compare.csv"]
        if cfg.system == "toy1d" and cfg.targets:
            pw = toy1d_pointwise(cfg.sigma_grid, cfg.targets, mc_realizations=cfg.mc_realizations,
                                 seed=cfg.seed, method=cfg.solver)
            pw.to_csv(out / "compare_pointwise.csv")
            outputs.append(out / "compare_pointwise.csv")
        return outputs, {"entries": res.n_entries, "reinsertions": res.n_reinsertions}
    ds = get_trajectory(cfg)
    part = get_regime(cfg, ds)
    markov = markov_lifetimes(ds, part.indices, cfg.sigma_grid, entry_mode=cfg.entry_mode,
                              method=cfg.solver, n_workers=cfg.n_workers)
    mc = _mc_lifetimes(cfg, ds, part, markov.sigma_grid)
    np.savetxt(out / "compare.csv", np.column_stack([markov.sigma_grid, markov.lifetimes, mc.lifetimes,
                                                     mc.stderr, mc.n_samples]),
               delimiter=",", comments="", fmt="%.17g",
               header="sigma,markov,montecarlo,montecarlo_stderr,montecarlo_n")
    return [out / "compare.csv"], {"regime_size": len(part.indices)}


_COMMANDS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors (exit 1)
        raise ConfigError(message)


def _common_options() -> argparse.ArgumentParser:
    # suppressed defaults, so a subcommand does not reset options given before it
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--system", choices=KINDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--trajectory", help="use this trajectory file instead of simulating")
    p.add_argument("--n-steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--dt-star", type=float)
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--sigma-max", type=float)
    p.add_argument("--sigma-per-decade", type=int)
    p.add_argument("--regime", help="regime CSV, or 'auto'")
    p.add_argument("--entry-mode", choices=("uniform-entries", "stationary"))
    p.add_argument("--solver", choices=("auto", "dense", "splu", "gmres", "dense-head"))
    p.add_argument("--mc-steps", type=int)
    p.add_argument("--targets", type=float, nargs="+", help="starting points for pointwise curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="stochastic-inertia", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "sample a trajectory",
        "diagnose": "kernel-sum dimension diagnostic",
        "cluster": "spectral clustering into regimes",
        "escape": "escape times and relative inertia of every regime point",
        "lifetimes": "Markov chain regime lifetimes",
        "oracle": "analytic 1D lifetimes and escape times",
        "mc": "Monte Carlo regime lifetimes",
        "compare": "Markov chain, Monte Carlo and analytic curves on one grid",
    }
    for name in COMMANDS:
        sub.add_parser(name, help=helps[name], parents=[common])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = getattr(args, "config", None)
    values = load_config(path) if path else {}
    for name in _FIELD_TYPES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            values["n_workers"] = max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return RunConfig(**values)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        outputs, summary = _COMMANDS[args.command](cfg)
        write_manifest(cfg, args.command, outputs, summary)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
