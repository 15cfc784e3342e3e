import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stochastic_inertia.chain import DiffusionChain
from stochastic_inertia.dynamics import TrajectoryDataset
from stochastic_inertia.errors import ConfigError
from stochastic_inertia.experiments import uniform_samples
from stochastic_inertia.kernel import (bandwidth, diffusion_matrix, geometric_grid, kernel_row_blocks,
                                       kernel_sum_curve, kernel_sums, neighbor_pairs, similarity_matrix)

clouds = st.integers(1, 3).flatmap(
    lambda d: arrays(np.float64, st.tuples(st.integers(2, 60), st.just(d)),
                     elements=st.floats(-1, 1, allow_subnormal=False)))


def _brute_pairs(pts, r):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    i, j = np.nonzero(np.triu(d <= r))
    return i, j, d[i, j]


@given(pts=clouds, r=st.floats(0.01, 1.5))
def test_neighbor_pairs_match_brute_force(pts, r):
    # skip pairs whose distance sits on the radius within rounding
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    if np.any(np.abs(d - r) < 1e-9):
        return
    i, j, dist = neighbor_pairs(pts, r)
    bi, bj, bd = _brute_pairs(pts, r)
    np.testing.assert_array_equal(i, bi)
    np.testing.assert_array_equal(j, bj)
    np.testing.assert_allclose(dist, bd, atol=1e-12)


def test_neighbor_pairs_rejects_bad_input():
    with pytest.raises(ConfigError):
        neighbor_pairs(np.zeros((0, 2)), 1.0)
    with pytest.raises(ConfigError):
        neighbor_pairs(np.zeros((3, 2)), 0.0)


def _dataset(rng, n=300, dim=2, dt=0.1):
    walk = np.cumsum(rng.normal(0, 0.05, (n + 1, dim)), axis=0)
    return TrajectoryDataset(walk, dt)


@given(seed=st.integers(0, 10_000), sigma=st.floats(0.05, 1.0))
def test_diffusion_matrix_rows_stochastic(seed, sigma):
    ds = _dataset(np.random.default_rng(seed))
    D = diffusion_matrix(similarity_matrix(ds, sigma)).matrix
    assert D.shape == (ds.n + 1, ds.n)
    np.testing.assert_allclose(np.asarray(D.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert D.data.min() >= 0
    P = DiffusionChain.from_dataset(ds, sigma).P
    assert P.shape == (ds.n, ds.n)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_kernel_matches_truncated_dense(rng):
    """The sparse kernel is the dense one with beyond-cutoff pairs removed."""
    ds = _dataset(rng, 400, 3)
    sigma = 0.3
    sparse = similarity_matrix(ds, sigma)
    assert sparse.extended_radius is None
    dense = similarity_matrix(ds, sigma, cutoff=None).matrix.toarray()
    d = np.linalg.norm(ds.points[:, None] - ds.points[None, :ds.n], axis=2)
    truncated = np.where(d <= sparse.cutoff_radius, dense, 0.0)
    np.testing.assert_allclose(sparse.matrix.toarray(), truncated, atol=1e-12)
    # the largest discarded weight is the kernel at the cutoff, exp(-9)
    assert dense[d > sparse.cutoff_radius].max(initial=0) <= math.exp(-9) + 1e-15


def test_density_correction_by_top_block_row_sums(rng):
    ds = _dataset(rng, 120, 1)
    K = similarity_matrix(ds, 0.4, cutoff=None).matrix.toarray()
    col = K[: ds.n].sum(axis=1)
    ref = K / col[None, :]
    ref /= ref.sum(axis=1, keepdims=True)
    D = diffusion_matrix(similarity_matrix(ds, 0.4, cutoff=None)).matrix.toarray()
    np.testing.assert_allclose(D, ref, rtol=1e-12)


def test_row_blocks_reassemble_kernel(rng):
    ds = _dataset(rng, 250, 2)
    K = similarity_matrix(ds, 0.2).matrix
    rows = np.array([0, 3, 17, 100, 249, 250])
    got = {int(i): blk.getrow(k).toarray() for ids, blk in kernel_row_blocks(ds, 0.2, rows)
           for k, i in enumerate(ids)}
    for i in rows:
        np.testing.assert_allclose(got[int(i)], K.getrow(i).toarray(), rtol=1e-12)


@pytest.mark.parametrize("gap", [0.0, 50.0])
def test_last_row_never_closes_a_loop(gap):
    """X_{N+1} near only X_N, or isolated, gets the two nearest points with equal weight."""
    pts = np.concatenate([np.linspace(0, 1, 201), [1.0 + 1e-3 + gap]])[:, None]
    ds = TrajectoryDataset(pts, 1.0)
    sigma = 0.001 / (3 * math.sqrt(2))  # cutoff radius 1e-3: X_N is the only neighbour
    K = similarity_matrix(ds, sigma)
    assert K.extended_radius is not None
    last = K.matrix.getrow(ds.n)
    assert set(last.indices) >= {ds.n - 1, ds.n - 2}
    np.testing.assert_allclose(last.data, last.data[0])
    D = diffusion_matrix(K).matrix
    assert D[ds.n, ds.n - 1] < 1.0


def test_geometric_grid():
    g = geometric_grid(1e-3, 1e-1, 10)
    assert len(g) == 21 and g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(1e-1)
    with pytest.raises(ConfigError):
        geometric_grid(1.0, 0.1)


def test_kernel_sums_match_direct_sum(rng):
    pts = rng.uniform(0, 1, (300, 2))
    grid = np.array([0.01, 0.05, 0.2])
    d2 = np.sum((pts[:, None] - pts[None]) ** 2, axis=2)
    direct = [np.exp(-d2 / (2 * s * s)).sum() / len(pts) ** 2 for s in grid]
    np.testing.assert_allclose(kernel_sums(pts, grid, 1.0, n_radii=4000), direct, rtol=2e-3)
    sub = pts[:50]
    cross = [np.exp(-d2[:50] / (2 * s * s)).sum() / (50 * 300) for s in grid]
    np.testing.assert_allclose(kernel_sums(sub, grid, 1.0, 4000, others=pts), cross, rtol=2e-3)


@pytest.mark.parametrize("shape,dim", [("line", 1), ("plane", 2), ("ball", 3)])
def test_dimension_of_uniform_samples(shape, dim):
    curve = kernel_sum_curve(uniform_samples(shape, 5000, seed=1), geometric_grid(1e-3, 1, 10))
    assert abs(curve.d_est - dim) <= 0.3
    lo, hi = curve.plateau()
    assert lo <= curve.sigma_star <= hi


def test_diagnostic_grid_validation():
    with pytest.raises(ConfigError):
        kernel_sum_curve(np.zeros((5, 1)), [0.1, 0.2])
    with pytest.raises(ConfigError):
        kernel_sum_curve(np.zeros((5, 1)), [0.3, 0.2, 0.1])


def test_diagnostic_csv(tmp_path):
    curve = kernel_sum_curve(uniform_samples("line", 500, seed=2), geometric_grid(1e-2, 1, 5))
    curve.to_csv(tmp_path / "d.csv")
    data = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 0], curve.sigma_grid)
    np.testing.assert_allclose(data[:, 4], curve.local_slopes)


def test_bandwidth():
    assert bandwidth(0.1, 2.0) == pytest.approx(math.sqrt(0.04))
