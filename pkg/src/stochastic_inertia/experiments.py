"""End-to-end pipelines for the toy systems and CdV, shared by the CLI, scripts and tests.

Each function takes explicit parameters (defaults are the reference setups) and
returns plain result objects with ``to_csv`` methods; nothing here writes files
unless asked to.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import (DiffusionChain, LifetimeReport, deterministic_escape_steps, entry_states,
                    inertia_profile, markov_lifetimes)
from .dynamics import SystemSpec, TrajectoryDataset, sample_trajectory
from .errors import ConfigError
from .kernel import DiagnosticCurve, kernel_sum_curve
from .montecarlo import mc_escape_time, mc_lifetime_curve
from .oracle import analytic_escape_time, analytic_lifetimes
from .regimes import (RegimeClassifier, RegimePartition, blocking_anchor, deterministic_lifetimes,
                      kmeans_partition, spectral_embed)

log = logging.getLogger(__name__)

CDV_X0 = (0.95, 0.0, 0.0, -0.76, 0.0, 0.0)


def _child_seeds(seed, n):
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def peak_sigma(report: LifetimeReport) -> float:
    """Grid value of ``sigma > 0`` at which the curve is largest."""
    pos = report.sigma_grid > 0
    k = int(np.nanargmax(np.where(pos, report.lifetimes, -np.inf)))
    return float(report.sigma_grid[k])


def has_interior_maximum(values) -> bool:
    """True if the maximum is strictly above both end values of the curve."""
    v = np.asarray(values, dtype=float)
    top = np.nanmax(v[1:-1]) if len(v) > 2 else -np.inf
    return bool(top > v[0] and top > v[-1])


# ---------------------------------------------------------------------------
# toy systems


def toy_base_trajectory(spec: SystemSpec, n_steps: int = 20_000, dt: float | None = None,
                        x0: float | None = None, seed: int = 0) -> TrajectoryDataset:
    """Noise-free base trajectory with reinsertions (reference setups by default)."""
    if not spec.is_toy:
        raise ConfigError("toy_base_trajectory needs a toy system")
    if dt is None:
        dt = 5e-2 if spec.dim == 1 else 1e-1
    if x0 is None:
        x0 = 1e-4 if spec.dim == 1 else 5e-2
    return sample_trajectory(spec, np.full(spec.dim, x0), n_steps, dt, seed=seed)


def toy_regime(dataset: TrajectoryDataset, spec: SystemSpec) -> np.ndarray:
    """Chain states inside the regime ball."""
    return np.flatnonzero(spec.in_regime(dataset.points[:-1]))


@dataclass
class LifetimeComparison:
    """Markov, Monte Carlo and (1D) analytic lifetime curves on one sigma grid.

    All curves start with ``sigma = 0``.
    """

    markov: LifetimeReport
    montecarlo: LifetimeReport | None
    analytic: LifetimeReport | None
    n_entries: int
    n_reinsertions: int
    entry_lifetimes: np.ndarray  # deterministic lifetimes of the base trajectory

    @property
    def sigma_grid(self) -> np.ndarray:
        return self.markov.sigma_grid

    def markov_noise_floor(self) -> float:
        """Relative standard error of the base trajectory's mean lifetime."""
        t = self.entry_lifetimes
        return float(t.std(ddof=1) / np.sqrt(len(t)) / t.mean())

    def montecarlo_noise_floor(self) -> float:
        """Largest relative standard error of the Monte Carlo curve."""
        mc = self.montecarlo
        return float(np.max(mc.stderr / mc.lifetimes))

    def to_csv(self, path):
        cols, names = [self.sigma_grid, self.markov.lifetimes], ["sigma", "markov"]
        if self.montecarlo is not None:
            cols += [self.montecarlo.lifetimes, self.montecarlo.stderr, self.montecarlo.n_samples]
            names += ["montecarlo", "montecarlo_stderr", "montecarlo_n"]
        if self.analytic is not None:
            cols.append(self.analytic.lifetimes)
            names.append("analytic")
        np.savetxt(path, np.column_stack(cols), delimiter=",", comments="", header=",".join(names),
                   fmt="%.17g")


def toy_lifetime_comparison(spec: SystemSpec, sigma_grid, n_steps: int = 20_000,
                            dt: float | None = None, x0: float | None = None, seed: int = 0,
                            mc_steps: int | None = 5_000_000, entry_mode: str = "uniform-entries",
                            n_workers: int = 1, dataset: TrajectoryDataset | None = None
                            ) -> LifetimeComparison:
    """Regime lifetimes of a toy system from the chain, Monte Carlo and the 1D oracle.

    The Monte Carlo run starts at the same ``x0`` with the same ``dt``; ``mc_steps=None``
    skips it. The analytic curve averages the exact escape time over the base
    trajectory's entry points (1D only).
    """
    traj_seed, mc_seed = _child_seeds(seed, 2)
    if dataset is None:
        dataset = toy_base_trajectory(spec, n_steps, dt, x0, traj_seed)
    idx = toy_regime(dataset, spec)
    grid = np.asarray(sigma_grid, dtype=float)
    grid = grid[grid > 0]
    markov = markov_lifetimes(dataset, idx, grid, entry_mode=entry_mode, n_workers=n_workers)
    full = markov.sigma_grid
    mask = spec.in_regime(dataset.points[:-1])
    entries = entry_states(mask)
    mc = None
    if mc_steps:
        start = dataset.points[0]
        mc = mc_lifetime_curve(spec, start, full, dataset.dt, int(mc_steps), seed=mc_seed)
    analytic = None
    if spec.dim == 1:
        analytic = analytic_lifetimes(full, dataset.points[entries, 0])
    return LifetimeComparison(markov, mc, analytic, len(entries), len(dataset.reinsertion_indices),
                              deterministic_lifetimes(mask, dataset.dt)[0])


@dataclass
class PointwiseComparison:
    """Escape-time curves at fixed starting points from the chain, the oracle and Monte Carlo."""

    sigma_grid: np.ndarray
    targets: np.ndarray
    states: np.ndarray  # chain indices of the nearest trajectory points
    x: np.ndarray  # their positions
    markov: np.ndarray  # (n_targets, n_sigma)
    analytic: np.ndarray
    montecarlo: np.ndarray | None = None
    montecarlo_stderr: np.ndarray | None = None
    methods: dict | None = None

    def to_csv(self, path):
        rows = []
        for a, t in enumerate(self.targets):
            for k, s in enumerate(self.sigma_grid):
                mc = (self.montecarlo[a, k], self.montecarlo_stderr[a, k]) if self.montecarlo is not None \
                    else (np.nan, np.nan)
                rows.append((t, self.x[a], s, self.markov[a, k], self.analytic[a, k], *mc))
        np.savetxt(path, np.array(rows), delimiter=",", comments="", fmt="%.17g",
                   header="target,x0,sigma,markov,analytic,montecarlo,montecarlo_stderr")


def fine_toy1d_trajectory(dt: float = 5e-4, x0: float = 1e-4, max_steps: int = 100_000,
                          seed: int = 0) -> TrajectoryDataset:
    """Densely sampled 1D trajectory from ``x0`` that stops on leaving the domain."""
    return sample_trajectory(SystemSpec.toy1d(), [x0], max_steps, dt, seed=seed, stop_on_exit=True)


def toy1d_pointwise(sigma_grid, targets=(1e-3, 1e-2, 5e-2, 1e-1), dataset=None,
                    mc_realizations: int | None = 10_000, mc_dt: float | None = None,
                    seed: int = 0, method: str = "auto") -> PointwiseComparison:
    """Escape times of the 1D toy at the trajectory points nearest to ``targets``.

    The chain uses the fine trajectory (``dataset``); Monte Carlo starts at the same
    points and monitors exits every ``mc_dt`` (default: the trajectory step).
    """
    spec = SystemSpec.toy1d()
    if dataset is None:
        dataset = fine_toy1d_trajectory(seed=seed)
    grid = np.asarray(sigma_grid, dtype=float)
    if np.any(grid <= 0):
        raise ConfigError("pointwise sigma grid must be positive")
    idx = toy_regime(dataset, spec)
    xs = dataset.points[idx, 0]
    pos = np.array([int(np.argmin(np.abs(xs - t))) for t in targets])
    prof = inertia_profile(dataset, idx, grid, method=method)
    markov = prof.theta[pos]
    x = xs[pos]
    analytic = np.array([[analytic_escape_time(xi, s) for s in grid] for xi in x])
    out = PointwiseComparison(grid, np.asarray(targets, dtype=float), idx[pos], x, markov, analytic,
                              methods=prof.methods)
    if mc_realizations:
        mc_dt = dataset.dt if mc_dt is None else mc_dt
        seeds = np.random.SeedSequence(seed).spawn(len(x))
        mean = np.empty_like(markov)
        err = np.empty_like(markov)
        for a, (xi, ss) in enumerate(zip(x, seeds)):
            for k, (s, sk) in enumerate(zip(grid, ss.spawn(len(grid)))):
                est = mc_escape_time(spec, [xi], s, mc_dt, mc_realizations, seed=sk)
                mean[a, k], err[a, k] = est.mean, est.stderr
        out.montecarlo, out.montecarlo_stderr = mean, err
    return out


# ---------------------------------------------------------------------------
# dimension diagnostics


def uniform_samples(shape: str, n: int = 5000, seed: int = 0) -> np.ndarray:
    """Uniform samples on the unit segment ``line``, unit square ``plane`` or unit ``ball`` in 3D."""
    rng = np.random.default_rng(seed)
    if shape == "line":
        return rng.random((n, 1))
    if shape == "plane":
        return rng.random((n, 2))
    if shape == "ball":
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * rng.random((n, 1)) ** (1.0 / 3.0)
    raise ConfigError(f"unknown sample shape {shape!r}")


def regime_diagnostic(dataset: TrajectoryDataset, mask, sigma_grid, cross: bool = False,
                      n_radii: int = 1000) -> DiagnosticCurve:
    """Kernel-sum diagnostic on the regime points.

    By default pairs are taken within the regime. With ``cross`` each regime point is
    paired with every trajectory point, which measures the local dimension at the
    regime without the artificial edge of the cut-out point set.
    """
    pts = dataset.points[:-1]
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigError("the regime is empty")
    return kernel_sum_curve(pts[mask], sigma_grid, dataset.dt, n_radii, others=pts if cross else None)


# ---------------------------------------------------------------------------
# CdV


def cdv_trajectory(n_steps: int = 20_000, dt: float = 10.0, dt_star: float = 1e-3,
                   x0=CDV_X0, burn_in: int = 200, seed: int = 0) -> TrajectoryDataset:
    """Deterministic CdV trajectory of ``n_steps + 1`` samples after a burn-in."""
    return sample_trajectory(SystemSpec.cdv(), np.asarray(x0, dtype=float), n_steps, dt,
                             dt_star=dt_star, seed=seed, burn_in=burn_in)


@dataclass
class CdVRegime:
    partition: RegimePartition
    anchor: np.ndarray  # blocking equilibrium (or its saddle-node remnant)
    anchor_residual: float
    eigenvalues: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.partition.mask


def cdv_regime(dataset: TrajectoryDataset, sigma: float = 1e-2, n_vecs: int = 4, k_clusters: int = 2,
               seed: int = 0, spec: SystemSpec | None = None) -> CdVRegime:
    """Blocking regime by spectral clustering of the chain at ``sigma``.

    The cluster nearest (in mean distance) to the blocking anchor is the regime.
    """
    spec = spec or SystemSpec.cdv()
    anchor, res = blocking_anchor(spec.cdv_params, dataset.points[:-1])
    part, vals = spectral_regime(dataset, anchor, sigma, n_vecs, k_clusters, seed)
    return CdVRegime(part, anchor, float(res), vals)


def spectral_regime(dataset: TrajectoryDataset, anchor, sigma: float = 1e-2, n_vecs: int = 4,
                    k_clusters: int = 2, seed: int = 0):
    """Spectral clustering of the chain at ``sigma``; the cluster nearest ``anchor`` is the regime.

    Returns ``(partition, eigenvalues)``.
    """
    pts = dataset.points[:-1]
    chain = DiffusionChain.from_dataset(dataset, sigma)
    emb, vals = spectral_embed(chain, n_vecs=n_vecs, seed=seed)
    del chain
    part = kmeans_partition(emb, k_clusters, seed=seed, blocking_anchor=np.asarray(anchor, dtype=float),
                            points=pts, source_sigma=sigma)
    return part, np.asarray(vals)


def center_points(dataset: TrajectoryDataset, mask, anchor, n: int = 10, min_steps: int = 6) -> np.ndarray:
    """The ``n`` regime states nearest to ``anchor`` that are at least ``min_steps``
    deterministic steps from escape."""
    mask = np.asarray(mask, dtype=bool)
    steps = deterministic_escape_steps(mask)
    idx = np.flatnonzero(mask)
    ok = idx[steps >= min_steps]
    d = np.linalg.norm(dataset.points[ok] - np.asarray(anchor), axis=1)
    return ok[np.argsort(d, kind="stable")[:n]]


@dataclass
class CdVPointwise:
    sigma_grid: np.ndarray  # leading 0
    states: np.ndarray
    markov: np.ndarray  # mean theta over the states, per sigma
    montecarlo: np.ndarray
    montecarlo_stderr: np.ndarray

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.sigma_grid, self.markov, self.montecarlo,
                                          self.montecarlo_stderr]),
                   delimiter=",", comments="", fmt="%.17g",
                   header="sigma,markov,montecarlo,montecarlo_stderr")


def cdv_pointwise(dataset: TrajectoryDataset, mask, states, sigma_grid, theta=None,
                  n_realizations: int = 100, dt_star: float = 1e-3, escape_radius: float = 0.1,
                  seed: int = 0, spec: SystemSpec | None = None) -> CdVPointwise:
    """Mean escape time over ``states`` from the chain and from Monte Carlo.

    A Monte Carlo path has escaped once no regime point lies within ``escape_radius``.
    ``theta`` (``len(states) x len(sigma_grid)``) can be passed from an existing
    :class:`EscapeProfile`; otherwise it is solved here.
    """
    spec = spec or SystemSpec.cdv()
    mask = np.asarray(mask, dtype=bool)
    grid = np.asarray(sigma_grid, dtype=float)
    grid = grid[grid > 0]
    if theta is None:
        prof = inertia_profile(dataset, np.flatnonzero(mask), grid)
        rows = np.searchsorted(prof.indices, states)
        theta, theta0 = prof.theta[rows], prof.theta0[rows]
    else:
        theta0 = dataset.dt * deterministic_escape_steps(mask)[np.searchsorted(np.flatnonzero(mask), states)]
    markov = np.concatenate([[np.mean(theta0)], np.nanmean(theta, axis=0)])
    clf = RegimeClassifier(dataset.points[:-1], mask)

    def inside(s):
        return ~clf.escaped(s, escape_radius)

    full = np.concatenate([[0.0], grid])
    means, errs = [], []
    for s, ss in zip(full, np.random.SeedSequence(seed).spawn(len(full))):
        samples = []
        for st, sst in zip(states, ss.spawn(len(states))):
            est = mc_escape_time(spec, dataset.points[st], s, dataset.dt, n_realizations, seed=sst,
                                 regime_test=inside, dt_star=dt_star, keep_samples=True)
            samples.append(est.samples)
        samples = np.concatenate(samples)
        means.append(samples.mean())
        errs.append(samples.std(ddof=1) / np.sqrt(len(samples)))
    return CdVPointwise(full, np.asarray(states), markov, np.array(means), np.array(errs))


def cdv_lifetimes(dataset: TrajectoryDataset, mask, sigma_grid, mc_steps: int | None = 200_000,
                  dt_star: float = 1e-2, seed: int = 0, entry_mode: str = "uniform-entries",
                  spec: SystemSpec | None = None) -> tuple[LifetimeReport, LifetimeReport | None]:
    """Blocking-regime lifetimes from the chain and from one long noisy run.

    Monte Carlo membership is the 10-nearest-neighbour majority vote against the
    deterministic trajectory.
    """
    spec = spec or SystemSpec.cdv()
    mask = np.asarray(mask, dtype=bool)
    grid = np.asarray(sigma_grid, dtype=float)
    grid = grid[grid > 0]
    markov = markov_lifetimes(dataset, np.flatnonzero(mask), grid, entry_mode=entry_mode)
    mc = None
    if mc_steps:
        clf = RegimeClassifier(dataset.points[:-1], mask)
        mc = mc_lifetime_curve(spec, dataset.points[0], markov.sigma_grid, dataset.dt, int(mc_steps),
                               seed=seed, membership=clf.inside_nn, dt_star=dt_star)
    return markov, mc


__all__ = [
    "CDV_X0", "CdVPointwise", "CdVRegime", "LifetimeComparison", "PointwiseComparison",
    "cdv_lifetimes", "cdv_pointwise", "cdv_regime", "cdv_trajectory", "center_points",
    "fine_toy1d_trajectory", "has_interior_maximum", "spectral_regime",
    "peak_sigma", "regime_diagnostic", "toy1d_pointwise", "toy_base_trajectory",
    "toy_lifetime_comparison", "toy_regime", "uniform_samples",
]
