"""Benchmark systems, their stochastic integrators and trajectory sampling.

Three systems are supported: a one-dimensional and a three-dimensional
unstable fixed point with random reinsertion near the origin, and the
six-mode Charney--deVore (CdV) barotropic channel model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numba
import numpy as np

from ._io import read_tagged_csv
from .errors import BlowUpError, ConfigError

KINDS = ("toy1d", "toy3d", "cdv")
_DIMS = {"toy1d": 1, "toy3d": 3, "cdv": 6}


@dataclass(frozen=True)
class CdVParams:
    """Coefficients of the six-mode CdV model.

    Defaults come from the Crommelin (2004) configuration that is also used by
    Dorrington & Palmer (2023); see :meth:`crommelin` for the coefficient
    formulas.
    """

    C: float
    x1_star: float
    x4_star: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    delta1: float
    delta2: float
    gamma1: float
    gamma2: float
    gamma_tilde1: float
    gamma_tilde2: float
    eps_int: float

    def __post_init__(self):
        vals = np.array([getattr(self, f.name) for f in fields(self)], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("CdV parameters must be finite")
        if self.C <= 0:
            raise ConfigError(f"damping C must be positive, got {self.C}")

    @classmethod
    def crommelin(cls, b=0.5, beta=1.25, gamma=0.2, C=0.1, x1_star=0.95, x4_star=-0.76095):
        s2 = math.sqrt(2.0)

        def alpha(m):
            return 8 * s2 / math.pi * m**2 * (b**2 + m**2 - 1) / ((4 * m**2 - 1) * (b**2 + m**2))

        def beta_m(m):
            return beta * b**2 / (b**2 + m**2)

        def delta(m):
            return 64 * s2 / (15 * math.pi) * (b**2 - m**2 + 1) / (b**2 + m**2)

        def gamma_tilde(m):
            return gamma * 4 * m / (4 * m**2 - 1) * s2 * b / math.pi

        def gamma_m(m):
            return gamma * 4 * m**3 / (4 * m**2 - 1) * s2 * b / (math.pi * (b**2 + m**2))

        return cls(
            C=C, x1_star=x1_star, x4_star=x4_star,
            alpha1=alpha(1), alpha2=alpha(2),
            beta1=beta_m(1), beta2=beta_m(2),
            delta1=delta(1), delta2=delta(2),
            gamma1=gamma_m(1), gamma2=gamma_m(2),
            gamma_tilde1=gamma_tilde(1), gamma_tilde2=gamma_tilde(2),
            eps_int=16 * s2 / (5 * math.pi),
        )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)


@dataclass(frozen=True)
class SystemSpec:
    """Which system to integrate and its geometric parameters.

    ``reinsertion_scale`` is the standard deviation of each Gaussian component
    drawn at reinsertion (toys only). The regime of the toys is the open ball of
    radius ``regime_radius``; trajectories are reinserted once their norm reaches
    ``domain_radius``.
    """

    kind: str
    reinsertion_scale: float = 5e-2
    domain_radius: float = 2.0
    regime_radius: float = 1.0
    cdv_params: CdVParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown system kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "cdv":
            if self.cdv_params is None:
                object.__setattr__(self, "cdv_params", CdVParams.crommelin())
        else:
            if self.reinsertion_scale <= 0:
                raise ConfigError("reinsertion_scale must be positive")
            if not 0 < self.regime_radius < self.domain_radius:
                raise ConfigError("need 0 < regime_radius < domain_radius")

    @property
    def dim(self) -> int:
        return _DIMS[self.kind]

    @property
    def is_toy(self) -> bool:
        return self.kind != "cdv"

    @classmethod
    def toy1d(cls, eps=5e-2, **kw):
        return cls("toy1d", reinsertion_scale=eps, **kw)

    @classmethod
    def toy3d(cls, eps=5e-3, **kw):
        return cls("toy3d", reinsertion_scale=eps, **kw)

    @classmethod
    def cdv(cls, params: CdVParams | None = None):
        return cls("cdv", cdv_params=params or CdVParams.crommelin())

    def in_regime(self, states) -> np.ndarray:
        """Vectorised toy regime test ``|x| < regime_radius``."""
        if not self.is_toy:
            raise ConfigError("in_regime is only defined for the toy systems")
        x = np.asarray(states, dtype=float).reshape(-1, self.dim)
        return np.linalg.norm(x, axis=1) < self.regime_radius


@dataclass
class TrajectoryDataset:
    """Uniformly sampled trajectory ``X_1..X_{N+1}``, stored as an ``(N+1, dim)`` array."""

    points: np.ndarray
    dt: float
    base_sigma: float = 0.0
    seed: int | None = None
    reinsertion_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 2:
            raise ConfigError("a trajectory needs at least 2 points")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        self.points = pts
        self.reinsertion_indices = np.asarray(self.reinsertion_indices, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        """Number of chain states ``N`` (all points but the last)."""
        return self.points.shape[0] - 1

    def save(self, path):
        path = Path(path)
        if path.suffix == ".npz":
            np.savez_compressed(
                path, points=self.points, dt=self.dt, base_sigma=self.base_sigma,
                seed=-1 if self.seed is None else self.seed,
                reinsertion_indices=self.reinsertion_indices,
            )
            return path
        cols = ",".join(["step"] + [f"x{k + 1}" for k in range(self.dim)])
        header = [
            f"# dt={self.dt!r}",
            f"# dim={self.dim}",
            f"# seed={self.seed}",
            f"# sigma={self.base_sigma!r}",
            "# reinsertion_indices=" + ",".join(str(int(i)) for i in self.reinsertion_indices),
        ]
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n" + cols + "\n")
            steps = np.arange(len(self.points))
            for s, row in zip(steps, self.points):
                fh.write(f"{s}," + ",".join(repr(float(v)) for v in row) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".npz":
            z = np.load(path)
            seed = int(z["seed"])
            return cls(z["points"], float(z["dt"]), float(z["base_sigma"]),
                       None if seed < 0 else seed, z["reinsertion_indices"])
        meta, columns, data = read_tagged_csv(path)
        if columns[0] != "step" or len(columns) < 2 or data.shape[0] < 2:
            raise ConfigError(f"{path}: expected a step column and at least 2 samples")
        if "dt" not in meta:
            raise ConfigError(f"{path}: missing '# dt=' metadata")
        reins = meta.get("reinsertion_indices", "")
        seed = meta.get("seed", "None")
        return cls(
            data[:, 1:], float(meta["dt"]), float(meta.get("sigma", 0.0)),
            None if seed in ("None", "") else int(seed),
            np.array([int(v) for v in reins.split(",") if v], dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# toy systems


def ou_noise_scale(sigma: float, dt: float) -> float:
    """Standard deviation of the exact OU increment over ``dt`` for ``dx = x dt + sigma dW``."""
    return sigma * math.sqrt(math.expm1(2.0 * dt) / 2.0)


def draw_reinsertion(spec: SystemSpec, sign_or_unit=1.0, rng=None) -> np.ndarray:
    """Draw a reinsertion point near the origin.

    1D: ``sign * |c|`` with ``c`` a Gaussian 3-vector; 3D: the vector ``c`` itself.
    """
    if not spec.is_toy:
        raise ConfigError("reinsertion is only defined for the toy systems")
    rng = np.random.default_rng(rng)
    c = rng.normal(0.0, spec.reinsertion_scale, 3)
    if spec.kind == "toy1d":
        s = 1.0 if np.sign(np.ravel(sign_or_unit)[0]) >= 0 else -1.0
        return np.array([s * math.sqrt(float(c @ c))])
    return c


def ou_step(state, sigma: float, dt: float, spec: SystemSpec, rng=None) -> np.ndarray:
    """One step of the exact-variance scheme for the toy systems, reinsertion included."""
    if not spec.is_toy:
        raise ConfigError("ou_step is only defined for the toy systems")
    x = np.asarray(state, dtype=float).reshape(spec.dim)
    if not np.all(np.isfinite(x)):
        raise BlowUpError(f"non-finite toy state {x}")
    rng = np.random.default_rng(rng)
    if np.linalg.norm(x) >= spec.domain_radius:
        return draw_reinsertion(spec, x, rng)
    out = math.exp(dt) * x
    if sigma > 0:
        out = out + ou_noise_scale(sigma, dt) * rng.standard_normal(spec.dim)
    return out


@numba.njit(cache=True)
def _toy_kernel(x, n_steps, growth, noise, eps, domain_radius, is1d, rng, stop_on_exit, out, reins):
    dim = x.shape[0]
    out[0, :] = x
    n_re = 0
    for n in range(n_steps):
        r2 = 0.0
        for k in range(dim):
            r2 += x[k] * x[k]
        if r2 >= domain_radius * domain_radius:
            c1 = rng.normal(0.0, eps)
            c2 = rng.normal(0.0, eps)
            c3 = rng.normal(0.0, eps)
            if is1d:
                s = 1.0 if x[0] >= 0 else -1.0
                x[0] = s * math.sqrt(c1 * c1 + c2 * c2 + c3 * c3)
            else:
                x[0] = c1
                x[1] = c2
                x[2] = c3
            reins[n_re] = n + 1
            n_re += 1
        else:
            for k in range(dim):
                x[k] = growth * x[k]
                if noise > 0.0:
                    x[k] += noise * rng.standard_normal()
        for k in range(dim):
            if not math.isfinite(x[k]):
                return n + 1, n_re, True
        out[n + 1, :] = x
        if stop_on_exit:
            r2 = 0.0
            for k in range(dim):
                r2 += x[k] * x[k]
            if r2 >= domain_radius * domain_radius:
                return n + 1, n_re, False
    return n_steps, n_re, False


@numba.njit(cache=True)
def _cdv_rhs_nb(x, p, out):
    C, x1s, x4s = p[0], p[1], p[2]
    a1, a2, b1, b2, d1, d2 = p[3], p[4], p[5], p[6], p[7], p[8]
    g1, g2, gt1, gt2, e = p[9], p[10], p[11], p[12], p[13]
    out[0] = -C * (x[0] - x1s) + gt1 * x[2]
    out[1] = -C * x[1] + b1 * x[2] - a1 * x[0] * x[2] - d1 * x[3] * x[5]
    out[2] = -C * x[2] - b1 * x[1] + a1 * x[0] * x[1] + d1 * x[3] * x[4] - g1 * x[0]
    out[3] = -C * (x[3] - x4s) + e * (x[1] * x[5] - x[2] * x[4]) + gt2 * x[5]
    out[4] = -C * x[4] + b2 * x[5] - a2 * x[0] * x[5] - d2 * x[3] * x[2]
    out[5] = -C * x[5] - b2 * x[4] + a2 * x[0] * x[4] + d2 * x[3] * x[1] - g2 * x[3]


@numba.njit(cache=True)
def _cdv_rk2(z, p, sigma, h, n_sub, rng, k1, mid, k2):
    sq = sigma * math.sqrt(h)
    for _ in range(n_sub):
        _cdv_rhs_nb(z, p, k1)
        for k in range(6):
            mid[k] = z[k] + 0.5 * h * k1[k]
        _cdv_rhs_nb(mid, p, k2)
        for k in range(6):
            z[k] += h * k2[k]
        if sigma > 0.0:
            for k in range(6):
                z[k] += sq * rng.standard_normal()


@numba.njit(cache=True)
def _cdv_kernel(z, p, sigma, h, n_sub, n_steps, rng, out):
    k1 = np.empty(6)
    mid = np.empty(6)
    k2 = np.empty(6)
    out[0, :] = z
    for n in range(n_steps):
        _cdv_rk2(z, p, sigma, h, n_sub, rng, k1, mid, k2)
        for k in range(6):
            if not math.isfinite(z[k]):
                return n + 1
        out[n + 1, :] = z
    return n_steps


@numba.njit(cache=True)
def _cdv_ensemble(states, p, sigma, h, n_sub, rng):
    k1 = np.empty(6)
    mid = np.empty(6)
    k2 = np.empty(6)
    z = np.empty(6)
    for i in range(states.shape[0]):
        z[:] = states[i]
        _cdv_rk2(z, p, sigma, h, n_sub, rng, k1, mid, k2)
        states[i, :] = z


def cdv_rhs(state, params: CdVParams) -> np.ndarray:
    x = np.ascontiguousarray(state, dtype=np.float64).reshape(6)
    out = np.empty(6)
    _cdv_rhs_nb(x, params.as_array(), out)
    return out


def cdv_step(state, params: CdVParams, sigma: float, dt_star: float, rng=None) -> np.ndarray:
    """One explicit-midpoint (RK2) step plus an additive ``sigma * sqrt(dt_star)`` kick."""
    if dt_star <= 0:
        raise ConfigError("dt_star must be positive")
    rng = np.random.default_rng(rng)
    z = np.array(state, dtype=np.float64).reshape(6)
    k1 = dt_star * cdv_rhs(z, params)
    k2 = dt_star * cdv_rhs(z + 0.5 * k1, params)
    z = z + k2
    if sigma > 0:
        z = z + sigma * math.sqrt(dt_star) * rng.standard_normal(6)
    if not np.all(np.isfinite(z)):
        raise BlowUpError("CdV state became non-finite")
    return z


def substeps(dt: float, dt_star: float) -> int:
    n_sub = int(round(dt / dt_star))
    if n_sub < 1 or abs(n_sub * dt_star - dt) > 1e-9 * dt:
        raise ConfigError(f"dt={dt} is not an integer multiple of dt_star={dt_star}")
    return n_sub


def cdv_advance(states, params: CdVParams, sigma: float, dt_star: float, n_sub: int, rng) -> np.ndarray:
    """Advance an ensemble of CdV states by ``n_sub`` inner steps, in place."""
    states = np.ascontiguousarray(states, dtype=np.float64)
    _cdv_ensemble(states, params.as_array(), float(sigma), float(dt_star), int(n_sub), rng)
    if not np.all(np.isfinite(states)):
        raise BlowUpError("CdV ensemble became non-finite")
    return states


def toy_advance(states, sigma: float, dt: float, spec: SystemSpec, rng) -> np.ndarray:
    """Vectorised ``ou_step`` over an ``(n, dim)`` ensemble."""
    x = np.asarray(states, dtype=float).reshape(-1, spec.dim)
    out = math.exp(dt) * x
    if sigma > 0:
        out += ou_noise_scale(sigma, dt) * rng.standard_normal(x.shape)
    hit = np.linalg.norm(x, axis=1) >= spec.domain_radius
    if hit.any():
        c = rng.normal(0.0, spec.reinsertion_scale, (int(hit.sum()), 3))
        if spec.kind == "toy1d":
            s = np.where(x[hit, 0] >= 0, 1.0, -1.0)
            out[hit, 0] = s * np.linalg.norm(c, axis=1)
        else:
            out[hit] = c
    if not np.all(np.isfinite(out)):
        raise BlowUpError("toy ensemble became non-finite")
    return out


def sample_trajectory(
    spec: SystemSpec,
    x0,
    n_steps: int,
    dt: float,
    dt_star: float | None = None,
    sigma: float = 0.0,
    seed: int | None = 0,
    stop_on_exit: bool = False,
    burn_in: int = 0,
) -> TrajectoryDataset:
    """Integrate ``spec`` and return ``n_steps + 1`` points sampled every ``dt``.

    For the toys the exact-variance stepper is used directly at ``dt``. For CdV the
    RK2 scheme runs at ``dt_star`` (default ``1e-3``) and is subsampled. With
    ``stop_on_exit`` (toys only) integration ends at the first sample whose norm
    reaches the domain radius; ``n_steps`` is then a cap. ``burn_in`` sampling
    intervals are integrated and discarded before recording.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    if dt <= 0 or sigma < 0:
        raise ConfigError("need dt > 0 and sigma >= 0")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=np.float64).reshape(spec.dim)

    if spec.is_toy:
        if dt_star is not None and not math.isclose(dt_star, dt):
            raise ConfigError("the toy stepper is exact; dt_star must equal dt")
        growth, noise = math.exp(dt), ou_noise_scale(sigma, dt)
        if burn_in:
            tmp = np.empty((burn_in + 1, spec.dim))
            _toy_kernel(x, burn_in, growth, noise, spec.reinsertion_scale, spec.domain_radius,
                        spec.kind == "toy1d", rng, False, tmp, np.empty(burn_in, np.int64))
        out = np.empty((n_steps + 1, spec.dim))
        reins = np.empty(n_steps, dtype=np.int64)
        last, n_re, blew = _toy_kernel(
            x, n_steps, growth, noise, spec.reinsertion_scale, spec.domain_radius,
            spec.kind == "toy1d", rng, stop_on_exit, out, reins,
        )
        if blew:
            raise BlowUpError(f"toy trajectory became non-finite at step {last}")
        return TrajectoryDataset(out[: last + 1].copy(), dt, sigma, seed, reins[:n_re].copy())

    if stop_on_exit:
        raise ConfigError("stop_on_exit is only meaningful for the toy systems")
    dt_star = 1e-3 if dt_star is None else dt_star
    n_sub = substeps(dt, dt_star)
    p = spec.cdv_params.as_array()
    if burn_in:
        tmp = np.empty((burn_in + 1, 6))
        if _cdv_kernel(x, p, sigma, dt_star, n_sub, burn_in, rng, tmp) < burn_in or not np.all(np.isfinite(x)):
            raise BlowUpError("CdV trajectory blew up during burn-in")
    out = np.empty((n_steps + 1, 6))
    last = _cdv_kernel(x, p, sigma, dt_star, n_sub, n_steps, rng, out)
    if last < n_steps or not np.all(np.isfinite(out)):
        raise BlowUpError(f"CdV trajectory became non-finite at sample {last}")
    return TrajectoryDataset(out, dt, sigma, seed)
