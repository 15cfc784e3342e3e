import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochastic_inertia.dynamics import (CdVParams, SystemSpec, TrajectoryDataset, cdv_rhs, cdv_step,
                                         draw_reinsertion, ou_noise_scale, ou_step, sample_trajectory,
                                         substeps, toy_advance)
from stochastic_inertia.errors import BlowUpError, ConfigError


def test_spec_validation():
    with pytest.raises(ConfigError):
        SystemSpec("toy2d")
    with pytest.raises(ConfigError):
        SystemSpec.toy1d(eps=-1.0)
    with pytest.raises(ConfigError):
        SystemSpec("toy1d", regime_radius=3.0)
    with pytest.raises(ConfigError):
        CdVParams.crommelin(C=0.0)
    assert SystemSpec.cdv().dim == 6 and SystemSpec.toy3d().dim == 3


def test_n_steps_one_gives_two_points():
    ds = sample_trajectory(SystemSpec.toy1d(), [1e-4], 1, 0.05)
    assert ds.points.shape == (2, 1)
    assert ds.n == 1


@given(x0=st.floats(1e-6, 0.5), n=st.integers(1, 60))
def test_noise_free_toy_is_exponential_growth(x0, n):
    dt = 0.05
    ds = sample_trajectory(SystemSpec.toy1d(), [x0], n, dt, sigma=0.0)
    k = np.arange(n + 1)
    stop = ds.reinsertion_indices[0] - 1 if len(ds.reinsertion_indices) else n + 1
    np.testing.assert_allclose(ds.points[:stop, 0], x0 * np.exp(k[:stop] * dt), rtol=1e-12)


def test_same_seed_same_trajectory():
    a = sample_trajectory(SystemSpec.toy3d(), [0.05, 0, 0], 3000, 0.1, seed=7)
    b = sample_trajectory(SystemSpec.toy3d(), [0.05, 0, 0], 3000, 0.1, seed=7)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.reinsertion_indices, b.reinsertion_indices)


def test_reinsertion_follows_domain_exit_and_keeps_sign():
    ds = sample_trajectory(SystemSpec.toy1d(), [-1e-3], 2000, 0.05, seed=1)
    assert len(ds.reinsertion_indices) > 5
    for i in ds.reinsertion_indices:
        assert abs(ds.points[i - 1, 0]) >= 2.0
        assert abs(ds.points[i, 0]) < 0.5
        assert np.sign(ds.points[i, 0]) == np.sign(ds.points[i - 1, 0])
    between = np.setdiff1d(np.arange(1, ds.n + 1), ds.reinsertion_indices)
    np.testing.assert_allclose(ds.points[between, 0], math.exp(0.05) * ds.points[between - 1, 0], rtol=1e-12)


def test_draw_reinsertion_scale(rng):
    spec = SystemSpec.toy3d(eps=0.01)
    c = np.array([draw_reinsertion(spec, rng=rng) for _ in range(4000)])
    assert abs(c.std() / 0.01 - 1) < 0.05
    r = np.array([draw_reinsertion(SystemSpec.toy1d(eps=0.01), -1.0, rng)[0] for _ in range(100)])
    assert np.all(r < 0)


def test_ou_step_exact_variance(rng):
    """One-step variance matches sigma^2 (e^{2dt} - 1) / 2 (chi-square bound)."""
    spec = SystemSpec.toy3d()
    sigma, dt, n = 0.3, 0.2, 20000
    x = np.full((n, 3), 0.1)
    out = toy_advance(x, sigma, dt, spec, rng)
    var = out.var(axis=0, ddof=1)
    target = sigma**2 * math.expm1(2 * dt) / 2
    # relative std of a sample variance is sqrt(2 / (n - 1))
    assert np.all(np.abs(var / target - 1) < 5 * math.sqrt(2 / (n - 1)))
    np.testing.assert_allclose(out.mean(axis=0), 0.1 * math.exp(dt), atol=5 * math.sqrt(target / n))
    single = np.array([ou_step([0.1], sigma, dt, SystemSpec.toy1d(), rng)[0] for _ in range(5000)])
    assert abs(single.var(ddof=1) / target - 1) < 5 * math.sqrt(2 / 4999)


def test_ou_noise_scale_small_dt_limit():
    assert ou_noise_scale(1.0, 1e-8) == pytest.approx(math.sqrt(1e-8), rel=1e-7)
    assert ou_noise_scale(0.0, 0.1) == 0.0


def test_ou_step_rejects_nonfinite():
    with pytest.raises(BlowUpError):
        ou_step([np.nan], 0.1, 0.1, SystemSpec.toy1d())
    with pytest.raises(ConfigError):
        ou_step([0.0] * 6, 0.1, 0.1, SystemSpec.cdv())


def _cdv_flow(x, params, h, t_end):
    for _ in range(int(round(t_end / h))):
        x = cdv_step(x, params, 0.0, h)
    return x


def test_cdv_step_second_order():
    params = CdVParams.crommelin()
    x0 = np.array([0.95, 0.1, -0.2, -0.76, 0.05, 0.1])
    ref = _cdv_flow(x0, params, 1e-3, 1.0)
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    err = [np.linalg.norm(_cdv_flow(x0, params, h, 1.0) - ref) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(err), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_cdv_compiled_path_matches_python_step():
    spec = SystemSpec.cdv()
    x0 = np.array([0.95, 0.1, -0.2, -0.76, 0.05, 0.1])
    ds = sample_trajectory(spec, x0, 3, 0.5, dt_star=0.01)
    x = x0.copy()
    for k in range(1, 4):
        x = _cdv_flow(x, spec.cdv_params, 0.01, 0.5)
        np.testing.assert_allclose(ds.points[k], x, rtol=1e-12, atol=1e-14)


def test_cdv_rhs_vanishes_at_zonal_equilibrium():
    from stochastic_inertia.regimes import newton_fixed_point
    params = CdVParams.crommelin()
    x = newton_fixed_point(params, [0.94, 0.1, 0.0, -0.7, -0.17, 0.04])
    assert np.max(np.abs(cdv_rhs(x, params))) < 1e-12
    np.testing.assert_allclose(x, [0.94485, 0.10715, -0.00858, -0.71095, -0.17207, 0.03996], atol=1e-4)


def test_substeps_requires_integer_ratio():
    assert substeps(10.0, 1e-3) == 10000
    with pytest.raises(ConfigError):
        substeps(1.0, 0.3)


def test_invalid_trajectory_arguments():
    with pytest.raises(ConfigError):
        sample_trajectory(SystemSpec.toy1d(), [0.0], 0, 0.1)
    with pytest.raises(ConfigError):
        sample_trajectory(SystemSpec.toy1d(), [0.0], 5, -0.1)
    with pytest.raises(ConfigError):
        sample_trajectory(SystemSpec.toy1d(), [0.0], 5, 0.1, dt_star=0.01)
    with pytest.raises(ConfigError):
        TrajectoryDataset(np.zeros((1, 2)), 0.1)


@given(pts=st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=20),
       seed=st.one_of(st.none(), st.integers(0, 2**31)))
def test_csv_round_trip(tmp_path_factory, pts, seed):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    ds = TrajectoryDataset(np.array(pts), 0.05, 0.01, seed, np.array([1], dtype=np.int64))
    ds.save(path)
    back = TrajectoryDataset.load(path)
    np.testing.assert_array_equal(back.points, ds.points)
    assert back.dt == ds.dt and back.base_sigma == ds.base_sigma and back.seed == seed
    np.testing.assert_array_equal(back.reinsertion_indices, [1])


def test_npz_round_trip(tmp_path, toy3d_small):
    toy3d_small.save(tmp_path / "t.npz")
    back = TrajectoryDataset.load(tmp_path / "t.npz")
    np.testing.assert_array_equal(back.points, toy3d_small.points)
    np.testing.assert_array_equal(back.reinsertion_indices, toy3d_small.reinsertion_indices)


def test_malformed_csv(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# dt=0.1\nstep,x1\n0,abc\n1,2\n")
    with pytest.raises(ConfigError):
        TrajectoryDataset.load(p)
    p.write_text("step,x1\n0,1\n1,2\n")
    with pytest.raises(ConfigError, match="dt"):
        TrajectoryDataset.load(p)
