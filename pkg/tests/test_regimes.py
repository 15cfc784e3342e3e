import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochastic_inertia.chain import DiffusionChain
from stochastic_inertia.dynamics import CdVParams, cdv_rhs
from stochastic_inertia.errors import ConfigError, ConvergenceError, NumericalError
from stochastic_inertia.regimes import (LifetimeAccumulator, RegimeClassifier, RegimePartition,
                                        blocking_anchor, classify_point_nn, deterministic_lifetimes,
                                        escaped_by_distance, kmeans_partition, lloyd, newton_fixed_point,
                                        spectral_embed)


def _brute_lifetimes(m, dt):
    out, start = [], None
    for i in range(1, len(m)):
        if m[i] and not m[i - 1]:
            start = i
        elif not m[i] and m[i - 1] and start is not None:
            out.append((i - start) * dt)
            start = None
    return out


@given(m=st.lists(st.booleans(), min_size=2, max_size=200))
def test_deterministic_lifetimes_brute_force(m):
    ref = _brute_lifetimes(m, 0.1)
    if not ref:
        with pytest.raises(NumericalError):
            deterministic_lifetimes(m, 0.1)
        return
    life, mean = deterministic_lifetimes(m, 0.1)
    np.testing.assert_allclose(life, ref)
    assert mean == pytest.approx(np.mean(ref))


@given(m=st.lists(st.booleans(), min_size=2, max_size=200), cuts=st.lists(st.integers(0, 200), max_size=6))
def test_streaming_lifetimes_equal_batch(m, cuts):
    acc = LifetimeAccumulator(0.1)
    edges = [0] + sorted(c for c in cuts if c < len(m)) + [len(m)]
    for a, b in zip(edges[:-1], edges[1:]):
        acc.update(m[a:b])
    np.testing.assert_allclose(acc.lifetimes, _brute_lifetimes(m, 0.1))


@given(seed=st.integers(0, 10_000), k=st.integers(2, 4))
def test_lloyd_objective_non_increasing(seed, k):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(c, 0.3, (40, 2)) for c in range(k)])
    res = lloyd(x, k, rng)
    if res is None:
        return
    assert np.all(np.diff(res.history) <= 1e-9 * max(res.history))
    assert res.inertia <= res.history[-1] + 1e-9


def _two_block_chain(n=60, leak=0.01, seed=0):
    rng = np.random.default_rng(seed)
    P = np.zeros((2 * n, 2 * n))
    for b in range(2):
        blk = rng.uniform(0, 1, (n, n))
        P[b * n:(b + 1) * n, b * n:(b + 1) * n] = blk / blk.sum(axis=1, keepdims=True) * (1 - leak)
        P[b * n:(b + 1) * n, (1 - b) * n:(2 - b) * n] = leak / n
    return DiffusionChain.from_transition(P)


def test_spectral_embedding_finds_almost_invariant_sets():
    ch = _two_block_chain()
    emb, vals = spectral_embed(ch, n_vecs=2)
    assert abs(vals[0]) == pytest.approx(1.0, abs=1e-10)
    assert abs(vals[1]) > 0.9
    pts = np.concatenate([np.zeros((60, 1)), np.ones((60, 1))])
    part = kmeans_partition(emb, 2, seed=0, blocking_anchor=[1.0], points=pts)
    np.testing.assert_array_equal(part.indices, np.arange(60, 120))
    # deterministic in the seed
    emb2, _ = spectral_embed(ch, n_vecs=2)
    np.testing.assert_allclose(emb2, emb)


def test_kmeans_without_anchor_picks_smallest_cluster(rng):
    x = np.concatenate([rng.normal(0, 0.1, (50, 1)), rng.normal(5, 0.1, (20, 1))])
    part = kmeans_partition(x, 2, seed=1)
    np.testing.assert_array_equal(part.indices, np.arange(50, 70))
    with pytest.raises(ConfigError):
        kmeans_partition(x, 1)
    with pytest.raises(ConfigError):
        kmeans_partition(x, 2, blocking_anchor=[0.0])


def test_spectral_embed_validation():
    with pytest.raises(ConfigError):
        spectral_embed(_two_block_chain(3), n_vecs=5)


def test_partition_csv_round_trip(tmp_path):
    part = RegimePartition(np.array([0, 1, 1, 0, 1]), np.array([1, 2, 4]), 2, 4, 0.01, 1)
    part.to_csv(tmp_path / "r.csv")
    back = RegimePartition.load(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.labels, part.labels)
    np.testing.assert_array_equal(back.indices, part.indices)
    assert (back.k_clusters, back.embedding_dim, back.source_sigma, back.regime_label) == (2, 4, 0.01, 1)
    np.testing.assert_array_equal(back.mask, [False, True, True, False, True])


@pytest.mark.parametrize("text", [
    "index,label,in_regime\n",
    "index,label,in_regime\n0,0,0\n1,0,0\n",
    "index,label\n0,1\n",
    "index,label,in_regime\n0,x,1\n",
])
def test_partition_load_rejects_bad_files(tmp_path, text):
    (tmp_path / "r.csv").write_text(text)
    with pytest.raises(ConfigError):
        RegimePartition.load(tmp_path / "r.csv")


def test_classifier(rng):
    states = rng.uniform(-1, 1, (500, 2))
    mask = states[:, 0] > 0
    clf = RegimeClassifier(states, mask)
    q = np.array([[0.8, 0.0], [-0.8, 0.0]])
    np.testing.assert_array_equal(clf.inside_nn(q), [True, False])
    assert classify_point_nn(q[0], states, mask)
    far = np.array([[5.0, 0.0], [0.5, 0.5]])
    np.testing.assert_array_equal(clf.escaped(far, 0.1), [True, False])
    assert escaped_by_distance(far[0], states[mask], 0.1)
    assert not escaped_by_distance(states[mask][0], states[mask], 0.1)
    with pytest.raises(ConfigError):
        RegimeClassifier(states, np.zeros(500, bool))


def test_newton_on_linear_field():
    A = np.array([[2.0, 1.0], [0.5, 3.0]])
    b = np.array([1.0, -2.0])
    x = newton_fixed_point(lambda x: A @ x - b, [10.0, 10.0])
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-12)
    with pytest.raises(ConvergenceError):
        newton_fixed_point(lambda x: x * x + 1.0, [1.0], max_iter=20)


def test_two_cdv_equilibria_when_both_exist():
    """For a slightly weaker x4* forcing the blocking root exists next to the zonal one."""
    params = CdVParams.crommelin(x4_star=-0.72)
    zonal = newton_fixed_point(params, [0.94, 0.1, 0.0, -0.7, -0.17, 0.04])
    blocking = newton_fixed_point(params, [0.75, 0.15, -0.35, -0.35, -0.08, 0.33])
    for x in (zonal, blocking):
        assert np.max(np.abs(cdv_rhs(x, params))) < 1e-12
    assert np.linalg.norm(zonal - blocking) > 0.1
    assert zonal[0] > blocking[0]


def test_blocking_anchor_is_a_slow_point():
    """On the default parameters the anchor is a near-equilibrium (saddle-node ghost)."""
    params = CdVParams.crommelin()
    pts = np.array([[0.72853, 0.15657, -0.36811, -0.32854, -0.08005, 0.34314]]) + 0.02
    x, res = blocking_anchor(params, pts)
    assert res < 1e-3
    assert np.linalg.norm(x - pts[0]) < 0.2
