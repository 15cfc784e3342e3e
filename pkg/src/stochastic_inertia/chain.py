"""Markov chain ``P = T D`` on trajectory points: escape times, distributions, lifetimes.

``T`` is the unit index shift, so row ``i`` of ``P`` is row ``i + 1`` of ``D``;
``P`` is never formed explicitly.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.spatial import cKDTree

from .errors import (ConfigError, ConvergenceError, IrreducibilityError, NumericalError,
                     SingularChainError)
from .kernel import DiffusionMatrix, diffusion_matrix, kernel_row_blocks, similarity_matrix

log = logging.getLogger(__name__)

DENSE_MAX = 1000  # below this size the dense LAPACK solve is used directly
DENSE_FALLBACK_MAX = 12000  # dense fallback needs m^2 doubles
RESIDUAL_TOL = 1e-8
_BLOCK = 1000
FACTOR_NNZ_MAX = 4_000_000  # above this, sparse LU / ILU fill-in is too large
TAIL_NNZ_MAX = 20_000_000  # sparse part of the dense-head split
DENSE_HEAD_MAX = 12000  # rows factorised densely in the dense-head split
GMRES_RESTART = 100
GMRES_CYCLES = 200


@dataclass(frozen=True)
class DiffusionChain:
    D: DiffusionMatrix
    sigma: float
    dt: float

    @property
    def n(self) -> int:
        return self.D.n

    @property
    def P(self) -> sp.csr_matrix:
        """Transition matrix, i.e. ``D`` without its first row (a row slice, not a product)."""
        return self.D.matrix[1:]

    @classmethod
    def from_dataset(cls, dataset, sigma: float, tree: cKDTree | None = None, cutoff=3.0):
        D = diffusion_matrix(similarity_matrix(dataset, sigma, cutoff=cutoff, tree=tree), overwrite=True)
        return cls(D, sigma, dataset.dt)

    @classmethod
    def from_transition(cls, P, dt: float = 1.0, sigma: float = float("nan")):
        """Wrap a given ``N x N`` transition matrix (the first row of ``D`` is a dummy copy)."""
        P = sp.csr_matrix(P)
        D = sp.vstack([P[:1], P]).tocsr()
        return cls(DiffusionMatrix(D, sigma, dt), sigma, dt)


def _indices(regime, n=None) -> np.ndarray:
    idx = np.asarray(getattr(regime, "indices", regime), dtype=np.int64)
    if idx.ndim != 1 or len(idx) == 0:
        raise ConfigError("the regime index set is empty")
    if np.any(np.diff(idx) <= 0):
        idx = np.unique(idx)
    if n is not None and (idx[0] < 0 or idx[-1] >= n):
        raise ConfigError("regime indices out of range")
    return idx


def restricted_matrix(chain: DiffusionChain, regime) -> sp.csr_matrix:
    """``Q``: rows and columns of ``P`` restricted to the regime indices."""
    idx = _indices(regime, chain.n)
    M = chain.D.matrix
    new_col = np.full(chain.n, -1, dtype=np.int32)
    new_col[idx] = np.arange(len(idx), dtype=np.int32)
    blocks = [idx[lo:lo + _BLOCK] + 1 for lo in range(0, len(idx), _BLOCK)]
    # two passes over row blocks: count, then fill, so no full-size temporaries
    counts = np.zeros(len(idx), dtype=np.int64)
    for k, rows in enumerate(blocks):
        sub = M[rows]
        keep = (new_col[sub.indices] >= 0).astype(np.int64)
        counts[k * _BLOCK:k * _BLOCK + len(rows)] = np.add.reduceat(keep, sub.indptr[:-1]) * (np.diff(sub.indptr) > 0) if sub.nnz else 0
    indptr = np.concatenate([[0], np.cumsum(counts)])
    data = np.empty(indptr[-1])
    indices = np.empty(indptr[-1], dtype=np.int32)
    for k, rows in enumerate(blocks):
        sub = M[rows]
        mapped = new_col[sub.indices]
        keep = mapped >= 0
        a, b = indptr[k * _BLOCK], indptr[k * _BLOCK + len(rows)]
        data[a:b] = sub.data[keep]
        indices[a:b] = mapped[keep]
    if indptr[-1] < np.iinfo(np.int32).max:
        indptr = indptr.astype(np.int32)
    return sp.csr_matrix((data, indices, indptr), shape=(len(idx), len(idx)), copy=False)


def streamed_restricted_matrix(dataset, sigma: float, regime, tree: cKDTree | None = None,
                               cutoff: float = 3.0) -> sp.csr_matrix:
    """``Q`` for a dataset without forming ``K`` or ``D`` in full.

    One streamed pass over all kernel rows accumulates the column normalisers; a
    second pass over rows ``I + 1`` normalises them and keeps only regime columns.
    Memory scales with ``Q`` rather than with the whole kernel, which matters
    when ``sigma`` is large compared with the attractor.
    """
    n = dataset.n
    idx = _indices(regime, n)
    tree = cKDTree(dataset.points[:n]) if tree is None else tree
    colnorm = np.empty(n)
    for ids, block in kernel_row_blocks(dataset, sigma, np.arange(n), cutoff, tree):
        colnorm[ids] = np.asarray(block.sum(axis=1)).ravel()
    if np.any(colnorm <= 0):
        bad = int(np.flatnonzero(colnorm <= 0)[0])
        raise IrreducibilityError(f"point {bad} has no neighbours", [bad])
    new_col = np.full(n, -1, dtype=np.int64)
    new_col[idx] = np.arange(len(idx))
    rows = idx + 1
    data_parts, col_parts, counts = [], [], np.zeros(len(idx), dtype=np.int64)
    pos = 0
    for ids, block in kernel_row_blocks(dataset, sigma, rows, cutoff, tree):
        block.data /= colnorm[block.indices]
        rowsum = np.asarray(block.sum(axis=1)).ravel()
        if np.any(rowsum <= 0):
            bad = int(ids[np.flatnonzero(rowsum <= 0)[0]])
            raise IrreducibilityError(f"row {bad} of the kernel is empty (isolated point)", [bad])
        block = sp.diags(1.0 / rowsum) @ block
        block = block.tocsr()
        mapped = new_col[block.indices]
        keep = mapped >= 0
        row_of = np.repeat(np.arange(len(ids)), np.diff(block.indptr))
        counts[pos:pos + len(ids)] = np.bincount(row_of[keep], minlength=len(ids))
        data_parts.append(block.data[keep])
        col_parts.append(mapped[keep].astype(np.int32))
        pos += len(ids)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return sp.csr_matrix((np.concatenate(data_parts), np.concatenate(col_parts), indptr),
                         shape=(len(idx), len(idx)))


def _trapped_states(Q: sp.csr_matrix, tol: float = 1e-14) -> np.ndarray:
    """States of ``Q`` from which no leaking state is reachable."""
    m = Q.shape[0]
    leak = np.asarray(Q.sum(axis=1)).ravel() < 1.0 - tol
    # reverse graph plus a virtual source (index m) pointing at every leaking state
    src = sp.csr_matrix((np.ones(int(leak.sum())), (np.zeros(int(leak.sum()), dtype=np.int64),
                                                    np.flatnonzero(leak))), shape=(1, m + 1))
    G = sp.vstack([sp.hstack([(Q.T != 0).astype(float), sp.csr_matrix((m, 1))]), src]).tocsr()
    reached = breadth_first_order(G, m, directed=True, return_predecessors=False)
    seen = np.zeros(m + 1, dtype=bool)
    seen[reached] = True
    return np.flatnonzero(~seen[:m])


def _raise_if_trapped(Q):
    trapped = _trapped_states(Q)
    if len(trapped):
        raise SingularChainError(
            f"Q has an invariant subset of {len(trapped)} states (spectral radius 1), "
            f"e.g. local indices {trapped[:10].tolist()}"
        )


@dataclass
class SolveInfo:
    method: str
    residual: float
    attempts: list = field(default_factory=list)


def _residual(Q, x):
    return float(np.max(np.abs(x - Q @ x - 1.0)))


def _id_minus(Q):
    return (sp.identity(Q.shape[0], format="csr") - Q).tocsr()


def _solve_dense(Q):
    return scipy.linalg.solve(_id_minus(Q).toarray(), np.ones(Q.shape[0]))


def _solve_splu(Q):
    return spla.splu(_id_minus(Q).tocsc()).solve(np.ones(Q.shape[0]))


def _plain_gmres(Q, b, max_cycles: int = GMRES_CYCLES):
    """Restarted GMRES that gives up once a restart cycle stops paying off."""
    m = Q.shape[0]
    A = spla.LinearOperator((m, m), matvec=lambda v: v - Q @ v, dtype=float)
    x = np.zeros(m)
    prev = np.linalg.norm(b)
    for _ in range(max_cycles):
        x, info = spla.gmres(A, b, x0=x, rtol=1e-10, atol=0.0, restart=GMRES_RESTART, maxiter=1)
        if info == 0 or not np.all(np.isfinite(x)):
            break
        res = np.linalg.norm(b - A @ x)
        if res > 0.1 * prev:  # stagnating; slow chains need a direct method
            break
        prev = res
    return x


def _solve_gmres(Q, precondition: bool = True):
    m = Q.shape[0]
    b = np.ones(m)
    # fast-mixing chains converge without a preconditioner; try that first
    x = _plain_gmres(Q, b)
    if np.all(np.isfinite(x)) and _residual(Q, x) < RESIDUAL_TOL:
        return x
    last = ConvergenceError("unpreconditioned GMRES did not converge", _residual(Q, x))
    if not precondition:
        raise last
    A = spla.LinearOperator((m, m), matvec=lambda v: v - Q @ v, dtype=float)
    Acsc = _id_minus(Q).tocsc()
    for drop_tol, fill in ((1e-4, 10), (1e-6, 20), (1e-8, 40)):
        try:
            ilu = spla.spilu(Acsc, drop_tol=drop_tol, fill_factor=fill)
        except RuntimeError as exc:
            last = exc
            continue
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, b, M=M, rtol=1e-10, atol=0.0, restart=100, maxiter=10_000)
        if info == 0 and np.all(np.isfinite(x)):
            return x
        last = ConvergenceError("GMRES did not converge", _residual(Q, x))
    raise last


def _dense_head(Q, tail_nnz: float | None = None) -> np.ndarray:
    """Indices of the densest rows, just enough that the rest fit ``tail_nnz``
    (default ``TAIL_NNZ_MAX``)."""
    tail_nnz = TAIL_NNZ_MAX if tail_nnz is None else tail_nnz
    row_nnz = np.diff(Q.indptr) + 1  # + identity
    order = np.argsort(row_nnz, kind="stable")
    k = int(np.searchsorted(np.cumsum(row_nnz[order]), tail_nnz, side="right"))
    return np.sort(order[k:])


def _solve_dense_head(Q):
    """Schur-complement solve with the densest rows factorised by LAPACK.

    With ``H`` the dense rows and ``T`` the rest, ``A = Id - Q`` is split into
    blocks; ``A_HH`` gets a dense LU, the Schur complement
    ``A_TT - A_TH A_HH^-1 A_HT`` a sparse one. The correction is dense only on the
    rows of ``A_TH`` and columns of ``A_HT`` that are nonzero, which is small when
    the dense rows form a cluster (e.g. a densely sampled stretch of trajectory).
    """
    m = Q.shape[0]
    H = _dense_head(Q)
    h = len(H)
    if h == 0:
        return _solve_splu(Q)
    if h > DENSE_HEAD_MAX:
        raise MemoryError(f"dense head of {h} rows exceeds {DENSE_HEAD_MAX}")
    is_head = np.zeros(m, dtype=bool)
    is_head[H] = True
    T = np.flatnonzero(~is_head)
    A_HH = np.empty((h, h))
    hts = []
    for lo in range(0, h, _BLOCK):
        rows = Q[H[lo:lo + _BLOCK]]
        A_HH[lo:lo + _BLOCK] = -rows[:, H].toarray()
        hts.append(-rows[:, T])
    A_HH[np.arange(h), np.arange(h)] += 1.0
    A_HT = sp.vstack(hts, format="csc")
    del hts
    Q_T = Q[T]
    A_TH = (-Q_T[:, H]).tocsr()
    A_TT = (sp.identity(len(T), format="csr") - Q_T[:, T]).tocsc()
    del Q_T
    C = np.flatnonzero(np.diff(A_HT.indptr))
    R = np.flatnonzero(np.diff(A_TH.indptr))
    rhs = np.empty((h, len(C) + 1), order="F")
    rhs[:, 0] = 1.0
    rhs[:, 1:] = A_HT[:, C].toarray()
    del A_HT
    # the transpose of a C-ordered array is Fortran-ordered, so LAPACK factorises in place
    lu = scipy.linalg.lu_factor(A_HH.T, overwrite_a=True, check_finite=False)
    W = scipy.linalg.lu_solve(lu, rhs, trans=1, overwrite_b=True, check_finite=False)
    del lu, A_HH, rhs
    Z, Y = W[:, 0], W[:, 1:]
    corr = A_TH[R] @ Y
    S = A_TT - sp.csc_matrix((corr.ravel(), (np.repeat(R, len(C)), np.tile(C, len(R)))),
                             shape=A_TT.shape)
    del corr, A_TT
    x_T = spla.splu(S).solve(np.ones(len(T)) - A_TH @ Z)
    x = np.empty(m)
    x[T] = x_T
    x[H] = Z - Y @ x_T[C]
    return x


_SOLVERS = {"dense": _solve_dense, "splu": _solve_splu, "gmres": _solve_gmres,
            "dense-head": _solve_dense_head}


def solve_escape_system(Q, method: str = "auto"):
    """Solve ``(Id - Q) x = 1``; returns ``(x, SolveInfo)``.

    ``auto`` uses LAPACK for small systems, else sparse LU, then GMRES (plain, then
    ILU-preconditioned), then (below ``DENSE_FALLBACK_MAX`` states) a dense solve.
    Factorisations are skipped when ``Q`` has more than ``FACTOR_NNZ_MAX`` nonzeros:
    their fill-in would not fit in memory. Such systems get plain GMRES and then a
    dense-head Schur-complement solve.
    """
    Q = sp.csr_matrix(Q)
    m = Q.shape[0]
    factorise = Q.nnz <= FACTOR_NNZ_MAX
    # a trapped set makes Id - Q singular with 1 outside its range, so no solver can
    # pass the residual check; for large Q the graph search runs only on failure
    if factorise:
        _raise_if_trapped(Q)
    info = SolveInfo(method="", residual=np.inf)
    if method == "auto":
        if m <= DENSE_MAX:
            order = ["dense"]
        else:
            order = (["splu", "gmres"] if factorise else ["gmres", "dense-head"])
            order += ["dense"] if m <= DENSE_FALLBACK_MAX else []
            if not factorise:
                info.attempts.append(("splu", f"skipped: {Q.nnz} nonzeros"))
    elif method in _SOLVERS:
        order = [method]
    else:
        raise ConfigError(f"unknown solver {method!r}")
    for name in order:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                if name == "gmres":
                    x = _solve_gmres(Q, precondition=factorise or method == "gmres")
                else:
                    x = _SOLVERS[name](Q)
        except (RuntimeError, np.linalg.LinAlgError, scipy.linalg.LinAlgWarning, MemoryError) as exc:
            info.attempts.append((name, repr(exc)))
            log.debug("escape solve via %s failed: %s", name, exc)
            continue
        res = _residual(Q, x) if np.all(np.isfinite(x)) else np.inf
        info.attempts.append((name, res))
        if res < RESIDUAL_TOL:
            info.method, info.residual = name, res
            return x, info
    if not factorise:
        _raise_if_trapped(Q)
    raise ConvergenceError(f"all escape-time solvers failed: {info.attempts}",
                           min((a[1] for a in info.attempts if isinstance(a[1], float)), default=None))


def escape_times(chain: DiffusionChain, regime, method: str = "auto", return_info: bool = False):
    """Expected escape times ``theta = dt (Id - Q)^{-1} 1`` over the regime indices."""
    x, info = solve_escape_system(restricted_matrix(chain, regime), method)
    theta = chain.dt * x
    return (theta, info) if return_info else theta


def deterministic_escape_steps(mask) -> np.ndarray:
    """Steps until the base trajectory first leaves the regime, for every index in it.

    ``mask`` flags regime membership of the ``N`` chain states; index ``N`` (the last
    trajectory point) always counts as outside.
    """
    mask = np.asarray(mask, dtype=bool)
    n = len(mask)
    steps = np.zeros(n, dtype=np.int64)
    nxt = 1
    for i in range(n - 1, -1, -1):
        if mask[i]:
            steps[i] = nxt
            nxt += 1
        else:
            nxt = 1
    return steps[mask]


def _regime_mask(regime, n):
    mask = np.zeros(n, dtype=bool)
    mask[_indices(regime, n)] = True
    return mask


def check_irreducible(chain: DiffusionChain, strict: bool = False):
    """Check the communicating-class structure of ``P``'s sparsity pattern.

    Raises :class:`IrreducibilityError` naming the smallest trapped (closed) class when
    there is more than one closed class, or when ``strict`` and ``P`` is reducible at
    all. Returns the number of strongly connected components.
    """
    P = chain.P
    ncomp, labels = connected_components(P, directed=True, connection="strong")
    if ncomp == 1:
        return 1
    coo = P.tocoo()
    cross = labels[coo.row] != labels[coo.col]
    has_exit = np.zeros(ncomp, dtype=bool)
    has_exit[labels[coo.row[cross]]] = True
    closed = np.flatnonzero(~has_exit)
    if len(closed) > 1 or strict:
        sizes = np.bincount(labels, minlength=ncomp)
        target = closed[np.argmin(sizes[closed])] if len(closed) else np.argmin(sizes)
        members = np.flatnonzero(labels == target)
        raise IrreducibilityError(
            f"chain is reducible: {len(closed)} closed classes; smallest trapped set has "
            f"{len(members)} states, e.g. {members[:10].tolist()}", members)
    log.info("chain has %d transient classes outside its single closed class", ncomp - 1)
    return ncomp


def stationary_distribution(chain: DiffusionChain, tol: float = 1e-10, max_iter: int = 1_000_000,
                            method: str = "power") -> np.ndarray:
    """Left fixed probability vector ``mu P = mu``.

    ``power`` iterates the lazy chain ``(Id + P) / 2`` from the uniform vector (same
    fixed point, but aperiodic), renormalising every step, until ``|mu P - mu|_1 < tol``.
    ``direct`` solves the singular system with one equation replaced by ``sum = 1``.
    """
    PT = chain.P.T.tocsr()
    n = chain.n
    if method == "direct":
        A = (PT - sp.identity(n, format="csr")).tolil()
        A[0, :] = np.ones(n)
        b = np.zeros(n)
        b[0] = 1.0
        mu = spla.spsolve(A.tocsc(), b)
        mu = np.clip(mu, 0.0, None)
        mu /= mu.sum()
        res = float(np.abs(PT @ mu - mu).sum())
        if not res < tol:
            raise ConvergenceError("direct stationary solve inaccurate", res)
        return mu
    if method != "power":
        raise ConfigError(f"unknown method {method!r}")
    mu = np.full(n, 1.0 / n)
    res = np.inf
    for it in range(max_iter):
        nxt = PT @ mu
        res = float(np.abs(nxt - mu).sum())
        if res < tol:
            return nxt / nxt.sum()
        mu = 0.5 * (mu + nxt)
        if it % 64 == 0:
            mu /= mu.sum()
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", res)


def entry_states(mask) -> np.ndarray:
    """Indices ``i`` in the regime whose predecessor ``i - 1`` is outside it."""
    mask = np.asarray(mask, dtype=bool)
    prev = np.concatenate([[True], mask[:-1]])
    return np.flatnonzero(mask & ~prev)


def entry_distribution(chain: DiffusionChain, regime, mode: str = "stationary", mu=None) -> np.ndarray:
    """Entry probabilities ``nu`` over the regime indices (same order as ``theta``).

    ``stationary``: push the stationary law restricted to the complement one step and
    renormalise on the regime. ``uniform-entries``: uniform over base-trajectory entry
    points.
    """
    idx = _indices(regime, chain.n)
    mask = _regime_mask(idx, chain.n)
    if mode == "uniform-entries":
        return _uniform_entry_weights(idx, mask)
    if mode != "stationary":
        raise ConfigError(f"unknown entry mode {mode!r}")
    if mask.all():
        raise NumericalError("the regime covers every state; its complement is empty")
    if mu is None:
        mu = stationary_distribution(chain)
    mu_out = np.where(mask, 0.0, np.asarray(mu, dtype=float))
    V = (chain.P.T @ mu_out)[idx]
    total = V.sum()
    if not total > 0:
        raise NumericalError("the regime is unreachable in one step from its complement")
    return V / total


def expected_lifetime(nu, theta) -> float:
    nu = np.asarray(nu, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if nu.shape != theta.shape:
        raise ConfigError(f"index mismatch: nu {nu.shape} vs theta {theta.shape}")
    if abs(nu.sum() - 1.0) > 1e-9:
        raise ConfigError("nu must sum to 1")
    return float(nu @ theta)


@dataclass
class EscapeProfile:
    """Escape times of every regime point over a sigma grid."""

    indices: np.ndarray
    sigma_grid: np.ndarray
    theta: np.ndarray  # (len(indices), len(sigma_grid)); NaN where the solve failed
    theta0: np.ndarray
    r_max: np.ndarray
    sigma_max: np.ndarray
    flagged: np.ndarray
    dt: float
    base_sigma: float = 0.0
    errors: dict = field(default_factory=dict)
    methods: dict = field(default_factory=dict)

    @property
    def effective_sigma(self) -> np.ndarray:
        """Total noise emulated at each grid point given the base trajectory's own noise."""
        return np.sqrt(self.sigma_grid**2 + self.base_sigma**2)

    def to_csv(self, path):
        data = np.column_stack([self.indices, self.theta0, self.r_max, self.sigma_max,
                                self.flagged.astype(int)])
        np.savetxt(path, data, delimiter=",", comments="", fmt=["%d", "%.17g", "%.17g", "%.17g", "%d"],
                   header="index,theta0,r_max,sigma_max,flagged")

    def theta_to_csv(self, path):
        header = "index," + ",".join(f"theta_sigma={s:.6g}" for s in self.sigma_grid)
        np.savetxt(path, np.column_stack([self.indices, self.theta]), delimiter=",",
                   comments="", header=header, fmt="%.17g")


@dataclass
class LifetimeReport:
    sigma_grid: np.ndarray
    lifetimes: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    n_samples: np.ndarray | None = None
    censored: np.ndarray | None = None

    def __post_init__(self):
        self.sigma_grid = np.asarray(self.sigma_grid, dtype=float)
        self.lifetimes = np.asarray(self.lifetimes, dtype=float)
        if self.method not in ("markov", "montecarlo", "analytic"):
            raise ConfigError(f"unknown method tag {self.method!r}")

    def to_csv(self, path):
        cols, names = [self.sigma_grid, self.lifetimes], ["sigma", "value"]
        for name in ("stderr", "n_samples", "censored"):
            v = getattr(self, name)
            if v is not None:
                cols.append(np.asarray(v, dtype=float))
                names.append({"n_samples": "n", "censored": "censored_count"}.get(name, name))
        np.savetxt(path, np.column_stack(cols), delimiter=",", comments="", header=",".join(names),
                   fmt="%.17g")


def _solve_one(dataset, sigma, idx, tree, method):
    x, info = solve_escape_system(streamed_restricted_matrix(dataset, sigma, idx, tree), method)
    return dataset.dt * x, info


def escape_time_grid(dataset, regime, sigma_grid, method: str = "auto", n_workers: int = 1):
    """Solve ``theta`` for each sigma. Returns ``(theta, errors, methods)``; failures become NaN."""
    idx = _indices(regime, dataset.n)
    grid = np.asarray(sigma_grid, dtype=float)
    theta = np.full((len(idx), len(grid)), np.nan)
    errors, methods = {}, {}
    tree = cKDTree(dataset.points[:-1])

    def work(k):
        return k, _solve_one(dataset, grid[k], idx, tree, method)

    def run(k):
        try:
            return work(k)
        except (NumericalError, MemoryError) as exc:
            return k, exc

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(run, range(len(grid))))
    else:
        results = [run(k) for k in range(len(grid))]
    for k, res in results:
        if isinstance(res, Exception):
            errors[float(grid[k])] = repr(res)
            log.warning("sigma=%g failed: %s", grid[k], res)
        else:
            theta[:, k] = res[0]
            methods[float(grid[k])] = res[1].method
    return theta, errors, methods


def inertia_profile(dataset, regime, sigma_grid, plateau=None, clip_steps: int = 1,
                    method: str = "auto", n_workers: int = 1) -> EscapeProfile:
    """Escape times over a sigma grid, with the maximal relative increase per point.

    ``R_i = max_sigma theta_i(sigma) / theta0_i - 1`` where ``theta0`` counts the
    deterministic steps to escape. Points within ``clip_steps`` deterministic steps of
    escape are flagged (kept in ``theta``). A ``plateau`` ``(lo, hi)`` only triggers a
    warning for grid points outside it.
    """
    grid = np.asarray(sigma_grid, dtype=float)
    if plateau is not None and (grid.min() < plateau[0] or grid.max() > plateau[1]):
        warnings.warn(f"sigma grid extends beyond the diagnostic plateau {plateau}", stacklevel=2)
    idx = _indices(regime, dataset.n)
    mask = _regime_mask(idx, dataset.n)
    theta0 = dataset.dt * deterministic_escape_steps(mask)
    theta, errors, methods = escape_time_grid(dataset, idx, grid, method, n_workers)
    valid = ~np.all(np.isnan(theta), axis=1)
    r_max = np.full(len(idx), np.nan)
    s_max = np.full(len(idx), np.nan)
    if valid.any():
        k = np.nanargmax(np.where(np.isnan(theta[valid]), -np.inf, theta[valid]), axis=1)
        best = theta[valid][np.arange(valid.sum()), k]
        r_max[valid] = best / theta0[valid] - 1.0
        s_max[valid] = grid[k]
    flagged = theta0 <= clip_steps * dataset.dt
    return EscapeProfile(idx, grid, theta, theta0, r_max, s_max, flagged, dataset.dt,
                         dataset.base_sigma, errors, methods)


def markov_lifetimes(dataset, regime, sigma_grid, entry_mode: str = "uniform-entries",
                     method: str = "auto", include_zero: bool = True, n_workers: int = 1) -> LifetimeReport:
    """Expected regime lifetimes ``<nu, theta>`` over a sigma grid.

    With ``include_zero`` a leading ``sigma = 0`` entry is the deterministic value from
    step counting with ``nu`` uniform over the entry points.
    """
    idx = _indices(regime, dataset.n)
    mask = _regime_mask(idx, dataset.n)
    grid = np.asarray(sigma_grid, dtype=float)
    theta, errors, _ = escape_time_grid(dataset, idx, grid, method, n_workers)
    values = np.full(len(grid), np.nan)
    tree = cKDTree(dataset.points[:-1]) if entry_mode == "stationary" else None
    nu_unif = None
    for k, s in enumerate(grid):
        if np.isnan(theta[0, k]):
            continue
        if entry_mode == "stationary":
            chain = DiffusionChain.from_dataset(dataset, s, tree=tree)
            nu = entry_distribution(chain, idx, "stationary")
        else:
            if nu_unif is None:
                nu_unif = _uniform_entry_weights(idx, mask)
            nu = nu_unif
        values[k] = expected_lifetime(nu, theta[:, k])
    if include_zero:
        theta0 = dataset.dt * deterministic_escape_steps(mask)
        grid = np.concatenate([[0.0], grid])
        values = np.concatenate([[expected_lifetime(_uniform_entry_weights(idx, mask), theta0)], values])
    return LifetimeReport(grid, values, "markov")


def _uniform_entry_weights(idx, mask):
    ent = entry_states(mask)
    if len(ent) == 0:
        raise NumericalError("the base trajectory never enters the regime")
    nu = np.isin(idx, ent).astype(float)
    return nu / nu.sum()
