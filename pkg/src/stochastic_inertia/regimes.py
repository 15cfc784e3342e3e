"""Regime identification, point classification and deterministic lifetime statistics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from ._io import read_tagged_csv
from .errors import ConfigError, ConvergenceError, NumericalError


@dataclass
class RegimePartition:
    """Cluster labels of the ``N`` chain states and the selected regime index set."""

    labels: np.ndarray
    indices: np.ndarray
    k_clusters: int = 2
    embedding_dim: int = 0
    source_sigma: float = float("nan")
    regime_label: int = 1

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        n = len(self.labels)
        if len(self.indices) == 0:
            raise ConfigError("the regime is empty")
        if len(self.indices) >= n:
            raise ConfigError("the regime must be a strict subset of the states")
        if self.indices[0] < 0 or self.indices[-1] >= n:
            raise ConfigError("regime indices out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.indices] = True
        return m

    @classmethod
    def from_mask(cls, mask, **kw):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.astype(np.int64), np.flatnonzero(mask), **kw)

    def to_csv(self, path):
        header = (f"# k_clusters={self.k_clusters}\n# embedding_dim={self.embedding_dim}\n"
                  f"# source_sigma={self.source_sigma!r}\n# regime_label={self.regime_label}\n"
                  "index,label,in_regime")
        data = np.column_stack([np.arange(self.n), self.labels, self.mask.astype(int)])
        np.savetxt(path, data, delimiter=",", fmt="%d", header=header, comments="")

    @classmethod
    def load(cls, path):
        meta, columns, data = read_tagged_csv(path, dtype=int)
        if columns != ["index", "label", "in_regime"]:
            raise ConfigError(f"{path}: expected columns index,label,in_regime")
        if data.shape[0] == 0:
            raise ConfigError(f"{path}: empty regime file")
        if not np.any(data[:, 2]):
            raise ConfigError(f"{path}: no point is marked in_regime")
        return cls(data[:, 1], np.flatnonzero(data[:, 2]),
                   k_clusters=int(meta.get("k_clusters", 2)),
                   embedding_dim=int(meta.get("embedding_dim", 0)),
                   source_sigma=float(meta.get("source_sigma", "nan")),
                   regime_label=int(meta.get("regime_label", 1)))

def _runs(membership):
    """Start/stop indices of maximal runs of True; ``stop`` is exclusive."""
    m = np.asarray(membership, dtype=bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], m, [0]]))
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def deterministic_lifetimes(membership, dt: float):
    """Lifetimes of completed visits in a sampled membership sequence.

    A visit entered at sample ``a`` and left at sample ``b`` lasts ``(b - a) dt``. A
    visit already in progress at the first sample or still open at the last sample is
    not counted. Returns ``(lifetimes, mean)``.
    """
    m = np.asarray(membership, dtype=bool)
    if len(m) < 2:
        raise ConfigError("membership sequence needs at least 2 samples")
    start, stop = _runs(m)
    keep = (start > 0) & (stop < len(m))
    life = (stop[keep] - start[keep]) * dt
    if len(life) == 0:
        raise NumericalError("no completed regime visit in the sequence")
    return life, float(life.mean())


class LifetimeAccumulator:
    """Streaming version of :func:`deterministic_lifetimes` over consecutive chunks."""

    def __init__(self, dt: float):
        self.dt = dt
        self.lifetimes: list[float] = []
        self._pos = 0
        self._run_start = None  # sample index of the current visit's entry
        self._prev = None

    def update(self, membership):
        m = np.asarray(membership, dtype=bool)
        if len(m) == 0:
            return
        prev = np.concatenate([[m[0] if self._prev is None else self._prev], m[:-1]])
        enter = np.flatnonzero(m & ~prev) + self._pos
        leave = np.flatnonzero(~m & prev) + self._pos
        events = sorted([(i, 1) for i in enter] + [(i, -1) for i in leave])
        for i, kind in events:
            if kind == 1:
                self._run_start = i
            elif self._run_start is not None:
                self.lifetimes.append((i - self._run_start) * self.dt)
                self._run_start = None
        self._prev = bool(m[-1])
        self._pos += len(m)

    @property
    def n_visits(self) -> int:
        return len(self.lifetimes)


def _sign_fix(v):
    k = np.argmax(np.abs(v), axis=0)
    s = np.sign(v[k, np.arange(v.shape[1])])
    s[s == 0] = 1
    return v * s


def spectral_embed(chain, n_vecs: int = 4, seed: int = 0, tol: float = 0.0):
    """Dominant left eigenvectors of ``P`` as embedding coordinates.

    Uses ARPACK on ``P^T``. Real parts are kept, each vector is scaled to unit norm
    and its largest-magnitude entry made positive. Returns ``(embedding, eigenvalues)``.
    """
    n = chain.n
    if not 1 <= n_vecs < n - 1:
        raise ConfigError("need 1 <= n_vecs < N - 1")
    PT = chain.P.T.tocsr().astype(np.float64)
    v0 = np.random.default_rng(seed).uniform(0.5, 1.5, n)
    try:
        vals, vecs = spla.eigs(PT, k=n_vecs, which="LM", v0=v0, tol=tol, maxiter=50 * n)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(-np.abs(vals), kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    imag = np.abs(vals.imag) > 1e-6 * np.abs(vals)
    if imag.any():
        warnings.warn(f"complex dominant eigenvalues {vals[imag]}; using real parts", stacklevel=2)
    emb = vecs.real
    emb = emb / np.linalg.norm(emb, axis=0)
    return _sign_fix(emb), vals


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        p = d2 / d2.sum() if d2.sum() > 0 else None
        centers.append(x[rng.choice(len(x), p=p)])
        d2 = np.minimum(d2, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def lloyd(x, k: int, rng, max_iter: int = 300) -> KMeansResult | None:
    """One k-means++ seeded Lloyd run; ``None`` if a cluster empties."""
    centers = _kmeanspp(x, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if np.bincount(labels, minlength=k).min() == 0:
            return None
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    d2 = ((x - centers[labels]) ** 2).sum(axis=1)
    return KMeansResult(labels, centers, float(d2.sum()), history)


def kmeans_partition(embedding, k_clusters: int = 2, seed: int = 0, blocking_anchor=None,
                     points=None, n_init: int = 10, source_sigma: float = float("nan")) -> RegimePartition:
    """k-means on embedding coordinates; the regime is the cluster nearest the anchor.

    ``points`` are the state-space coordinates of the embedded states; the cluster whose
    points have the smallest mean distance to ``blocking_anchor`` becomes the regime.
    Without an anchor, the smallest cluster is chosen.
    """
    x = np.asarray(embedding, dtype=float)
    if k_clusters < 2:
        raise ConfigError("k_clusters must be at least 2")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(x, k_clusters, rng)
        if res is not None and (best is None or res.inertia < best.inertia):
            best = res
    if best is None:
        raise NumericalError("every k-means restart produced an empty cluster")
    labels = best.labels
    if blocking_anchor is not None:
        if points is None:
            raise ConfigError("points are required to locate the blocking anchor")
        pts = np.asarray(points, dtype=float)[: len(x)]
        dist = np.linalg.norm(pts - np.asarray(blocking_anchor, dtype=float), axis=1)
        score = [dist[labels == c].mean() for c in range(k_clusters)]
    else:
        score = np.bincount(labels, minlength=k_clusters)
    chosen = int(np.argmin(score))
    return RegimePartition(labels, np.flatnonzero(labels == chosen), k_clusters, x.shape[1],
                           source_sigma, chosen)


class RegimeClassifier:
    """Inside/outside tests for arbitrary states against a regime given as trajectory points."""

    def __init__(self, states, mask):
        self.states = np.asarray(states, dtype=float)
        self.mask = np.asarray(mask, dtype=bool)
        if len(self.states) != len(self.mask):
            raise ConfigError("states and mask differ in length")
        if not self.mask.any():
            raise ConfigError("the regime is empty")
        self._tree = cKDTree(self.states)
        self._regime_tree = cKDTree(self.states[self.mask])

    def inside_nn(self, queries, k: int = 10) -> np.ndarray:
        """At least half of the ``k`` nearest states lie in the regime."""
        if not 1 <= k <= len(self.states):
            raise ConfigError("need 1 <= k <= number of states")
        q = np.asarray(queries, dtype=float).reshape(-1, self.states.shape[1])
        _, nn = self._tree.query(q, k=k)
        nn = nn.reshape(len(q), k)
        return self.mask[nn].sum(axis=1) >= math.ceil(k / 2)

    def distance_to_regime(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=float).reshape(-1, self.states.shape[1])
        return self._regime_tree.query(q, k=1)[0]

    def escaped(self, queries, r: float = 0.1) -> np.ndarray:
        """No regime state within distance ``r``."""
        return self.distance_to_regime(queries) > r


def classify_point_nn(query, states, mask, k: int = 10) -> bool:
    return bool(RegimeClassifier(states, mask).inside_nn(query, k)[0])


def escaped_by_distance(query, regime_points, r: float = 0.1) -> bool:
    pts = np.asarray(regime_points, dtype=float)
    if len(pts) == 0:
        raise ConfigError("the regime is empty")
    q = np.asarray(query, dtype=float).reshape(-1)
    return bool(np.min(np.linalg.norm(pts.reshape(len(pts), -1) - q, axis=1)) > r)


def _as_field(rhs):
    from .dynamics import CdVParams, SystemSpec, cdv_rhs

    if isinstance(rhs, SystemSpec):
        if rhs.kind != "cdv":
            raise ConfigError("fixed points are only searched for the CdV system")
        rhs = rhs.cdv_params
    if isinstance(rhs, CdVParams):
        params = rhs
        return lambda x: cdv_rhs(x, params)
    return rhs


def newton_fixed_point(rhs, x_init, tol: float = 1e-12, max_iter: int = 100, h: float = 1e-6):
    """Root of a vector field by Newton's method with a central-difference Jacobian.

    ``rhs`` is a :class:`SystemSpec` / :class:`CdVParams` for CdV or any callable.
    """
    f = _as_field(rhs)
    x = np.array(x_init, dtype=float)
    fx = np.asarray(f(x), dtype=float)
    for _ in range(max_iter):
        if np.max(np.abs(fx)) < tol:
            return x
        J = np.empty((len(x), len(x)))
        for k in range(len(x)):
            e = np.zeros(len(x))
            e[k] = h * max(1.0, abs(x[k]))
            J[:, k] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * e[k])
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian in Newton iteration") from exc
        # backtrack so the residual does not grow
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * step
            fn = np.asarray(f(xn), dtype=float)
            if np.max(np.abs(fn)) < np.max(np.abs(fx)) or lam <= 1e-3:
                break
            lam *= 0.5
        x, fx = xn, fn
        if not np.all(np.isfinite(x)):
            raise ConvergenceError("Newton iteration diverged")
    if np.max(np.abs(fx)) < tol:
        return x
    raise ConvergenceError("Newton iteration did not converge", float(np.max(np.abs(fx))))


def blocking_anchor(params, points, radius: float = 0.1):
    """Equilibrium, or near-equilibrium, that the trajectory slows down at.

    Starts from the slowest trajectory sample and minimises ``|f|^2`` locally, then
    polishes with Newton. If the Newton root lies within ``radius`` of that local
    minimiser it is returned; otherwise the minimiser itself (a saddle-node "ghost",
    where ``f`` is small but nonzero) is returned. Returns ``(x, residual)`` with
    ``residual = |f(x)|_inf``.
    """
    from scipy.optimize import least_squares

    from .dynamics import cdv_rhs

    pts = np.asarray(points, dtype=float)
    speed = np.array([np.linalg.norm(cdv_rhs(p, params)) for p in pts])
    start = pts[int(np.argmin(speed))]
    fit = least_squares(lambda x: cdv_rhs(x, params), start, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    x = fit.x
    try:
        root = newton_fixed_point(params, x)
        if np.linalg.norm(root - x) <= radius:
            x = root
    except ConvergenceError:
        pass
    return x, float(np.max(np.abs(cdv_rhs(x, params))))
