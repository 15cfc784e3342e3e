"""Gaussian similarity kernel, density-corrected diffusion matrix, dimension diagnostic."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ConfigError, IrreducibilityError

CUTOFF = 3.0  # cutoff radius in units of the kernel bandwidth sqrt(2 sigma^2 dt)
ROW_BLOCK = 1000
PAIR_BUDGET = 4_000_000  # pairs materialised per streamed block


def bandwidth(sigma: float, dt: float) -> float:
    """``sqrt(2 sigma^2 dt)``: the length scale of one noise kick."""
    return math.sqrt(2.0 * sigma * sigma * dt)


def neighbor_pairs(points, radius: float, tree: cKDTree | None = None):
    """All unordered pairs ``(i, j)``, ``i <= j``, at Euclidean distance ``<= radius``.

    Self pairs ``(i, i)`` with distance 0 are included. Returns ``(i, j, d)``
    arrays sorted lexicographically by ``(i, j)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ConfigError("empty point set")
    if not radius > 0:
        raise ConfigError("radius must be positive")
    tree = cKDTree(pts) if tree is None else tree
    pq = tree.query_pairs(radius, output_type="ndarray")
    n = len(pts)
    i = np.concatenate([np.arange(n), pq[:, 0]]).astype(np.int64)
    j = np.concatenate([np.arange(n), pq[:, 1]]).astype(np.int64)
    d = np.concatenate([np.zeros(n), np.linalg.norm(pts[pq[:, 0]] - pts[pq[:, 1]], axis=1)])
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


@dataclass(frozen=True)
class SparseKernel:
    """``K_ij = exp(-|X_i - X_j|^2 / (2 sigma^2 dt))`` for ``i <= N``, ``j < N`` (0-based)."""

    matrix: sp.csr_matrix
    sigma: float
    dt: float
    cutoff_radius: float
    extended_radius: float | None = None

    @property
    def shape(self):
        return self.matrix.shape


def _block_rows(tree: cKDTree, pts, radius: float, n_rows: int, seed: int = 0) -> int:
    """Rows per block so one block holds about ``PAIR_BUDGET`` pairs."""
    rng = np.random.default_rng(seed)
    sample = pts[rng.choice(n_rows, size=min(200, n_rows), replace=False)]
    avg = max(1.0, cKDTree(sample).count_neighbors(tree, radius) / len(sample))
    return int(np.clip(PAIR_BUDGET / avg, 1, ROW_BLOCK))


def last_row(pts, n: int, scale: float, radius: float, tree: cKDTree):
    """Columns and weights of row ``N`` with the loop-avoiding extension.

    Returns ``(cols, weights, extended_radius)``; the radius is ``None`` when no
    extension was needed. An extended row gets equal weights.
    """
    cols = np.sort(np.asarray(tree.query_ball_point(pts[n], radius), dtype=np.int64))
    extended = None
    if n >= 2 and np.all(cols == n - 1):
        dist2, _ = tree.query(pts[n], k=2)
        extended = float(dist2[1])
        cols = np.flatnonzero(np.linalg.norm(pts[:n] - pts[n], axis=1) <= extended * (1 + 1e-12))
    if extended is not None:
        # beyond the cutoff the Gaussian weights of X_N and the new neighbour differ by
        # orders of magnitude (or underflow), which would keep the loop; use a flat kernel
        return cols, np.ones(len(cols)), extended
    dd2 = np.sum((pts[cols] - pts[n]) ** 2, axis=1)
    return cols, np.exp(-dd2 / scale), extended


def kernel_row_blocks(dataset, sigma: float, rows=None, cutoff: float = CUTOFF,
                      tree: cKDTree | None = None):
    """Yield ``(row_ids, csr_block)`` pieces of the sparse similarity matrix.

    ``rows`` (sorted, default all ``0..N``) selects which rows to produce. Blocks
    are sized to hold a bounded number of pairs, so any subset of rows can be
    streamed without forming the whole matrix. Row ``N`` is always its own block
    and includes the loop-avoiding extension.
    """
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    pts = dataset.points
    n = dataset.n
    scale = 2.0 * sigma * sigma * dataset.dt
    radius = cutoff * math.sqrt(scale)
    tree = cKDTree(pts[:n]) if tree is None or tree.n != n else tree
    rows = np.arange(n + 1) if rows is None else np.asarray(rows, dtype=np.int64)
    body = rows[rows < n]
    step = _block_rows(tree, pts, radius, n)
    for lo in range(0, len(body), step):
        ids = body[lo:lo + step]
        pairs = cKDTree(pts[ids]).sparse_distance_matrix(tree, radius, output_type="ndarray")
        block = sp.csr_matrix((np.exp(-(pairs["v"] ** 2) / scale),
                               (pairs["i"].astype(np.int32), pairs["j"].astype(np.int32))),
                              shape=(len(ids), n))
        del pairs
        yield ids, block
    if len(rows) and rows[-1] == n:
        cols, w, _ = last_row(pts, n, scale, radius, tree)
        yield np.array([n]), sp.csr_matrix((w, cols, [0, len(cols)]), shape=(1, n))


def similarity_matrix(dataset, sigma: float, cutoff: float | None = CUTOFF,
                      tree: cKDTree | None = None) -> SparseKernel:
    """Sparse similarity matrix of a trajectory, shape ``(N+1, N)``.

    Entries beyond ``cutoff * sqrt(2 sigma^2 dt)`` are dropped (``cutoff=None``
    keeps every pair). ``tree`` indexes the first N points. If the last point would
    only see ``X_N`` (or nothing), its radius is widened to reach the second-nearest
    of the first ``N`` points, with equal weights, so the chain has no closed
    single-node loop.
    """
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    pts = dataset.points
    n = dataset.n
    scale = 2.0 * sigma * sigma * dataset.dt
    if cutoff is None:
        diff = pts[:, None, :] - pts[None, :n, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        return SparseKernel(sp.csr_matrix(np.exp(-d2 / scale)), sigma, dataset.dt, math.inf)

    radius = cutoff * math.sqrt(scale)
    tree = cKDTree(pts[:n]) if tree is None or tree.n != n else tree
    # written into arrays sized by one dual-tree count
    cap = int(tree.count_neighbors(tree, radius)) + n + 1
    data = np.empty(cap)
    indices = np.empty(cap, dtype=np.int32)
    indptr = np.zeros(n + 2, dtype=np.int64)
    pos = 0
    for ids, block in kernel_row_blocks(dataset, sigma, cutoff=cutoff, tree=tree):
        if pos + block.nnz > cap:  # rounding at the radius boundary
            cap = pos + block.nnz + n
            data.resize(cap, refcheck=False)
            indices.resize(cap, refcheck=False)
        data[pos:pos + block.nnz] = block.data
        indices[pos:pos + block.nnz] = block.indices
        indptr[ids[0] + 1:ids[-1] + 2] = pos + block.indptr[1:]
        pos += block.nnz
        del block
    data.resize(pos, refcheck=False)
    indices.resize(pos, refcheck=False)
    if pos < np.iinfo(np.int32).max:
        indptr = indptr.astype(np.int32)
    K = sp.csr_matrix((data, indices, indptr), shape=(n + 1, n), copy=False)
    extended = last_row(pts, n, scale, radius, tree)[2]
    return SparseKernel(K, sigma, dataset.dt, radius, extended)


@dataclass(frozen=True)
class DiffusionMatrix:
    """Row-stochastic diffusion matrix ``D``, shape ``(N+1, N)``."""

    matrix: sp.csr_matrix
    sigma: float
    dt: float

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def diffusion_matrix(K: SparseKernel, overwrite: bool = False) -> DiffusionMatrix:
    """Density-correct the kernel by column and row-normalise it.

    The column normaliser of column ``j`` is the sum of row ``j`` of the square
    top block of ``K``. With ``overwrite`` the kernel's storage is reused.
    """
    M = K.matrix.tocsr()
    n = M.shape[1]
    colnorm = (M @ np.ones(n))[:n]
    if np.any(colnorm <= 0):
        bad = int(np.flatnonzero(colnorm <= 0)[0])
        raise IrreducibilityError(f"point {bad} has no neighbours", [bad])
    D = M if overwrite and M is K.matrix else M.copy()
    for lo in range(0, D.nnz, ROW_BLOCK * 1000):
        D.data[lo:lo + ROW_BLOCK * 1000] /= colnorm[D.indices[lo:lo + ROW_BLOCK * 1000]]
    rowsum = D @ np.ones(n)
    if np.any(rowsum <= 0):
        bad = int(np.flatnonzero(rowsum <= 0)[0])
        raise IrreducibilityError(f"row {bad} of the kernel is empty (isolated point)", [bad])
    for lo in range(0, D.shape[0], ROW_BLOCK):
        hi = min(lo + ROW_BLOCK, D.shape[0])
        a, b = D.indptr[lo], D.indptr[hi]
        D.data[a:b] /= np.repeat(rowsum[lo:hi], np.diff(D.indptr[lo:hi + 1]))
    return DiffusionMatrix(D, K.sigma, K.dt)


@dataclass(frozen=True)
class DiagnosticCurve:
    """Normalised kernel sum ``S(sigma)`` on a grid and its log-log slopes."""

    sigma_grid: np.ndarray
    normalized_sums: np.ndarray
    local_slopes: np.ndarray
    sigma_star: float
    d_est: float

    @property
    def log_sums(self) -> np.ndarray:
        return np.log(self.normalized_sums)

    def plateau(self, fraction: float = 0.8) -> tuple[float, float]:
        """Contiguous sigma range around ``sigma_star`` where the slope is ``>= fraction * d_est``."""
        k = int(np.argmax(self.local_slopes))
        ok = self.local_slopes >= fraction * self.d_est
        lo = hi = k
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        while hi < len(ok) - 1 and ok[hi + 1]:
            hi += 1
        return float(self.sigma_grid[lo]), float(self.sigma_grid[hi])

    def to_csv(self, path):
        data = np.column_stack([self.sigma_grid, np.log(self.sigma_grid), self.normalized_sums,
                                self.log_sums, self.local_slopes])
        np.savetxt(path, data, delimiter=",", comments="",
                   header="sigma,log_sigma,normalized_sum,log_sum,local_slope")


def geometric_grid(lo: float, hi: float, per_decade: int = 20) -> np.ndarray:
    if not 0 < lo < hi:
        raise ConfigError("need 0 < lo < hi for a geometric grid")
    n = max(int(round(per_decade * math.log10(hi / lo))) + 1, 2)
    return np.geomspace(lo, hi, n)


def kernel_sums(points, sigma_grid, dt: float = 1.0, n_radii: int = 1000, others=None) -> np.ndarray:
    """``sum_ij exp(-|X_i-X_j|^2 / (2 sigma^2 dt)) / n^2`` for each sigma, all ordered pairs.

    Pair distances are binned with one dual-tree count on a fine geometric
    radius grid; within a bin pairs are taken as uniform in squared distance, so
    the Gaussian weight is averaged exactly over the bin. Pairs beyond five
    bandwidths of the largest sigma are ignored. With ``others`` the sum runs over
    pairs ``(points[i], others[j])`` instead, normalised by ``n * len(others)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    sig = np.asarray(sigma_grid, dtype=float)
    n = len(pts)
    tree = cKDTree(pts)
    if others is None:
        other_tree, n_other = tree, n
    else:
        oth = np.asarray(others, dtype=float).reshape(-1, pts.shape[1])
        other_tree, n_other = cKDTree(oth), len(oth)
    r_hi = 5.0 * bandwidth(sig.max(), dt)
    r_lo = 1e-3 * bandwidth(sig.min(), dt)
    radii = np.concatenate([[0.0], np.geomspace(r_lo, r_hi, n_radii)])
    counts = tree.count_neighbors(other_tree, radii).astype(np.float64)
    per_bin = np.diff(counts)  # pairs with r_{k-1} < d <= r_k
    a = radii[:-1] ** 2
    b = radii[1:] ** 2
    out = np.empty(len(sig))
    for m, s in enumerate(sig):
        scale = 2.0 * s * s * dt
        # mean of exp(-u/scale) for u uniform on [a, b]
        avg = scale * (np.exp(-a / scale) - np.exp(-b / scale)) / (b - a)
        out[m] = (counts[0] + per_bin @ avg) / (n * n_other)
    return out


def kernel_sum_curve(points, sigma_grid, dt: float = 1.0, n_radii: int = 1000,
                     others=None) -> DiagnosticCurve:
    """Log-log slope diagnostic of the kernel sum against sigma.

    ``points`` may be a :class:`TrajectoryDataset`, in which case its ``dt`` is used.
    Slopes are central differences in ``(log sigma, log S)``; the maximum slope
    estimates the local dimension and its location is ``sigma_star``. ``others``
    (see :func:`kernel_sums`) gives the local dimension at ``points`` within a
    larger cloud.
    """
    if hasattr(points, "points"):
        dt = points.dt
        points = points.points
    sig = np.asarray(sigma_grid, dtype=float)
    if len(sig) < 3:
        raise ConfigError("the sigma grid needs at least 3 points")
    if np.any(sig <= 0) or np.any(np.diff(sig) <= 0):
        raise ConfigError("the sigma grid must be positive and strictly increasing")
    sums = kernel_sums(points, sig, dt, n_radii, others)
    slopes = np.gradient(np.log(sums), np.log(sig))
    k = int(np.argmax(slopes))
    return DiagnosticCurve(sig, sums, slopes, float(sig[k]), float(slopes[k]))
