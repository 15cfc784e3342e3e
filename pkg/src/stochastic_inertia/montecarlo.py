"""Monte Carlo reference estimates: pointwise escape times and regime lifetimes."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .dynamics import SystemSpec, cdv_advance, ou_noise_scale, sample_trajectory, substeps
from .errors import ConfigError, NumericalError
from .regimes import LifetimeAccumulator

MAX_STEPS = 10_000_000  # per-realization cap on sampled steps


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean of escape times or lifetimes with its standard error.

    Censored samples (still inside at the time cap) enter the mean at the cap, so a
    nonzero ``censored`` count means ``mean`` is biased low.
    """

    mean: float
    stderr: float
    n_samples: int
    sigma: float
    dt: float
    censored: int = 0
    samples: np.ndarray | None = None


def _estimate(sigma, dt, times, censored, keep):
    times = np.asarray(times, dtype=float)
    n = len(times)
    stderr = float(times.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(times.mean()), stderr, n, float(sigma), float(dt), int(censored),
                      times if keep else None)


def _batch_rngs(seed, n_total, batch_size):
    """Independent substreams, one per batch of realizations."""
    n_batches = max(1, math.ceil(n_total / batch_size))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_batches)
    sizes = [batch_size] * (n_batches - 1) + [n_total - batch_size * (n_batches - 1)]
    return [(np.random.default_rng(c), s) for c, s in zip(children, sizes)]


@numba.njit(cache=True)
def _toy_escape_kernel(x0, growth, noise, radius, max_steps, rng, out):
    """Steps until ``|x| >= radius`` for each realization; ``-1`` if censored."""
    dim = x0.shape[0]
    x = np.empty(dim)
    r2max = radius * radius
    for m in range(out.shape[0]):
        for k in range(dim):
            x[k] = x0[k]
        out[m] = -1
        for n in range(max_steps):
            r2 = 0.0
            for k in range(dim):
                x[k] = growth * x[k] + noise * rng.standard_normal()
                r2 += x[k] * x[k]
            if r2 >= r2max:
                out[m] = n + 1
                break


def mc_escape_time(spec: SystemSpec, x0, sigma: float, dt: float, n_realizations: int = 10_000,
                   seed=0, regime_test=None, dt_star: float = 1e-3, max_steps: int = MAX_STEPS,
                   batch_size: int = 10_000, keep_samples: bool = False) -> MCEstimate:
    """Mean first time a sampled path started at ``x0`` is found outside the regime.

    Paths are checked every ``dt``. ``regime_test`` maps an ``(n, dim)`` array to
    booleans (inside); the toys default to the open ball of radius ``regime_radius``
    (with a compiled fast path), CdV needs one, e.g. built from
    :meth:`RegimeClassifier.escaped`. Realizations still inside after ``max_steps``
    samples are censored there with a warning, biasing the mean low.
    """
    if n_realizations < 2:
        raise ConfigError("need at least 2 realizations")
    if dt <= 0 or sigma < 0:
        raise ConfigError("need dt > 0 and sigma >= 0")
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    if max_steps < 1:
        raise ConfigError("max_steps must be positive")
    if spec.is_toy and regime_test is None:
        regime_test = spec.in_regime
        fast = True
    else:
        fast = False
        if regime_test is None:
            raise ConfigError("CdV escape needs a regime_test")
    if not bool(np.asarray(regime_test(x0[None, :])).reshape(-1)[0]):
        raise ConfigError("x0 is not inside the regime")
    steps = []
    for rng, size in _batch_rngs(seed, n_realizations, batch_size):
        if fast:
            out = np.empty(size, dtype=np.int64)
            _toy_escape_kernel(x0, math.exp(dt), ou_noise_scale(sigma, dt), spec.regime_radius,
                               max_steps, rng, out)
            steps.append(out)
        else:
            steps.append(_ensemble_escape(spec, x0, sigma, dt, size, rng, max_steps, regime_test, dt_star))
    steps = np.concatenate(steps)
    censored = int(np.sum(steps < 0))
    if censored:
        warnings.warn(f"{censored} of {len(steps)} realizations censored after {max_steps} steps",
                      stacklevel=2)
        steps = np.where(steps < 0, max_steps, steps)
    return _estimate(sigma, dt, steps * dt, censored, keep_samples)


def _ensemble_escape(spec, x0, sigma, dt, size, rng, max_steps, regime_test, dt_star):
    n_sub = substeps(dt, dt_star) if not spec.is_toy else 1
    states = np.tile(x0, (size, 1))
    out = np.full(size, -1, dtype=np.int64)
    alive = np.arange(size)
    n = 0
    while len(alive) and n < max_steps:
        sub = states[alive]
        if spec.is_toy:
            sub = math.exp(dt) * sub + ou_noise_scale(sigma, dt) * rng.standard_normal(sub.shape)
        else:
            sub = cdv_advance(sub, spec.cdv_params, sigma, dt_star, n_sub, rng)
        states[alive] = sub
        n += 1
        gone = ~np.asarray(regime_test(sub), dtype=bool)
        out[alive[gone]] = n
        alive = alive[~gone]
    return out


def mc_escape_curve(spec, x0, sigma_grid, dt, n_realizations=10_000, seed=0, **kw):
    """:func:`mc_escape_time` over a sigma grid, one seed substream per sigma."""
    seeds = np.random.SeedSequence(seed).spawn(len(sigma_grid))
    return [mc_escape_time(spec, x0, s, dt, n_realizations, seed=ss, **kw)
            for s, ss in zip(sigma_grid, seeds)]


def mc_regime_lifetimes(spec: SystemSpec, x0, sigma: float, dt: float, n_steps: int,
                        seed: int = 0, membership=None, chunk: int = 1_000_000,
                        dt_star: float | None = None, min_visits: int = 10,
                        keep_samples: bool = False) -> MCEstimate:
    """Mean duration of completed regime visits along one long noisy trajectory.

    The trajectory is produced and classified in chunks, so ``n_steps`` is not
    limited by memory. ``membership`` maps an ``(n, dim)`` array to booleans and
    defaults to the toy regime ball. Warns if fewer than ``min_visits`` visits complete.
    """
    if n_steps < 2 or chunk < 1:
        raise ConfigError("need n_steps >= 2 and chunk >= 1")
    if membership is None:
        if not spec.is_toy:
            raise ConfigError("CdV lifetimes need a membership function")
        membership = spec.in_regime
    rng = np.random.default_rng(seed)
    acc = LifetimeAccumulator(dt)
    x = np.asarray(x0, dtype=float).reshape(spec.dim)
    acc.update(membership(x[None, :]))
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        traj = sample_trajectory(spec, x, k, dt, dt_star=dt_star if not spec.is_toy else None,
                                 sigma=sigma, seed=rng)
        acc.update(membership(traj.points[1:]))
        x = traj.points[-1]
        done += k
    if acc.n_visits == 0:
        raise NumericalError("no completed regime visit; increase n_steps")
    if acc.n_visits < min_visits:
        warnings.warn(f"only {acc.n_visits} completed visits; the estimate is noisy", stacklevel=2)
    return _estimate(sigma, dt, acc.lifetimes, 0, keep_samples)


def mc_lifetime_curve(spec, x0, sigma_grid, dt, n_steps, seed=0, **kw):
    """:class:`LifetimeReport` of :func:`mc_regime_lifetimes` over a sigma grid."""
    from .chain import LifetimeReport

    seeds = np.random.SeedSequence(seed).spawn(len(sigma_grid))
    ests = [mc_regime_lifetimes(spec, x0, s, dt, n_steps, seed=ss, **kw)
            for s, ss in zip(sigma_grid, seeds)]
    return LifetimeReport(np.asarray(sigma_grid, dtype=float), [e.mean for e in ests], "montecarlo",
                          np.array([e.stderr for e in ests]), np.array([e.n_samples for e in ests]),
                          np.array([e.censored for e in ests]))
