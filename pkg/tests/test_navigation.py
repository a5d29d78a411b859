import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import model_consistent_nav
from singsmooth.errors import DimensionError, ModelError, ParameterError
from singsmooth.navigation import (ImuStream, NavConfig, UsblStream, build_problem,
                                   discretize_F, fix_velocity, gamma_factor, rotation,
                                   snap_fixes, subsample_usbl)
from singsmooth.penalties import Penalty
from singsmooth.solver import SolverConfig, solve

angles = st.floats(-np.pi, np.pi, allow_nan=False)
periods = st.floats(0.01, 5.0)


def test_transition_at_unit_period():
    F = discretize_F(1.0)
    I = np.eye(3)
    np.testing.assert_array_equal(F[:3, 3:6], I)
    np.testing.assert_array_equal(F[:3, 6:], 0.5 * I)
    np.testing.assert_array_equal(F[3:6, 6:], I)
    np.testing.assert_array_equal(F[6:, :6], 0)


@given(periods, periods)
def test_transition_semigroup(a, b):
    np.testing.assert_allclose(discretize_F(a) @ discretize_F(b), discretize_F(a + b),
                               rtol=1e-12, atol=1e-12)


def test_zero_period():
    np.testing.assert_array_equal(discretize_F(0.0), np.eye(9))
    assert not np.any(gamma_factor(0.0))


@pytest.mark.parametrize("T", [0.2, 1.0, 3.0])
def test_noise_factor_blocks_and_rank(T):
    Gam = gamma_factor(T)
    assert Gam.shape == (9, 3)
    np.testing.assert_allclose(Gam[:3], T ** 3 / 6 * np.eye(3))
    np.testing.assert_allclose(Gam[3:6], T ** 2 / 2 * np.eye(3))
    np.testing.assert_allclose(Gam[6:], T * np.eye(3))
    assert np.linalg.matrix_rank(Gam @ Gam.T) == 3


@given(angles, angles, angles)
@settings(max_examples=50)
def test_rotation_is_orthogonal(h, p, r):
    R = rotation(h, p, r)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_rotation_quarter_heading():
    np.testing.assert_allclose(rotation(np.pi / 2, 0, 0),
                               [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_array_equal(rotation(0, 0, 0), np.eye(3))


def _streams(N=6, T=0.5, fixes=(0, 3)):
    t = T * np.arange(N)
    imu = ImuStream(t, np.zeros((N, 3)), np.zeros((N, 3)))
    pos = np.arange(3 * len(fixes), dtype=float).reshape(-1, 3)
    return imu, UsblStream(t[list(fixes)], pos)


def test_measurement_rows_with_and_without_fix():
    imu, usbl = _streams()
    p = build_problem(imu, usbl, NavConfig(estimate_bias=False))
    assert [st.m for st in p.steps] == [6, 3, 3, 6, 3, 3]
    st0 = p.steps[0]
    np.testing.assert_array_equal(st0.H[:3, :3], np.eye(3))
    np.testing.assert_array_equal(st0.H[3:, 6:], np.eye(3))
    np.testing.assert_array_equal(p.x0, [0, 1, 2, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(p.steps[1].G, discretize_F(0.5))


def test_bias_augmentation_maps_to_accel_rows():
    imu, usbl = _streams()
    p = build_problem(imu, usbl, NavConfig())
    assert p.n == 12
    np.testing.assert_array_equal(p.steps[0].H[:3, 9:], 0)
    np.testing.assert_array_equal(p.steps[0].H[3:, 9:], np.eye(3))
    np.testing.assert_array_equal(p.steps[1].H[:, 9:], np.eye(3))


def test_exact_accelerometer_has_no_noise_columns():
    imu, usbl = _streams()
    p = build_problem(imu, usbl, NavConfig(r_s=0.0, estimate_bias=False))
    assert p.steps[1].S.shape == (3, 0)
    assert p.steps[0].S.shape == (6, 3)


def test_level_attitude_observes_world_acceleration():
    rng = np.random.default_rng(0)
    imu, usbl, X, b = model_consistent_nav(rng, N=12, fixes=(0,))
    imu.attitude[:] = 0.0
    imu.accel[:] = X[:, 6:9]
    cfg = NavConfig(r_s=0.0, U_diag=0.0, bias_prior="free", process_penalty=Penalty.quadratic())
    r = solve(build_problem(imu, usbl, cfg), SolverConfig(tol_rel=1e-13))
    np.testing.assert_allclose(r.states[:, :9], X, atol=1e-7)
    np.testing.assert_allclose(r.states[:, 9:], 0.0, atol=1e-9)


def test_second_exact_fix_makes_rows_dependent():
    # six exact rows at the first step against a rank-3 noise factor
    rng = np.random.default_rng(0)
    imu, usbl, _, _ = model_consistent_nav(rng, N=8, fixes=(0, 7))
    cfg = NavConfig(r_s=0.0, U_diag=0.0, estimate_bias=False, process_penalty=Penalty.quadratic())
    with pytest.raises(ModelError):
        solve(build_problem(imu, usbl, cfg))


def test_noiseless_recovery_with_bias():
    rng = np.random.default_rng(1)
    imu, usbl, X, b = model_consistent_nav(rng, N=15, fixes=(0,))
    cfg = NavConfig(r_s=0.0, U_diag=0.0, bias_prior="free", process_penalty=Penalty.quadratic())
    r = solve(build_problem(imu, usbl, cfg), SolverConfig(tol_rel=1e-13))
    np.testing.assert_allclose(r.states[:, :9], X, atol=1e-6)
    np.testing.assert_allclose(r.states[0, 9:], b, atol=1e-8)


def test_subsample_counts():
    fixes = UsblStream(np.arange(0.0, 20.0, 2.0), np.zeros((10, 3)))
    assert len(subsample_usbl(fixes, 0.0)) == 10
    assert len(subsample_usbl(fixes, 4.0)) == 5
    assert len(subsample_usbl(fixes, 5.0)) == 4
    assert len(subsample_usbl(fixes, 100.0)) == 1
    with pytest.raises(ParameterError):
        subsample_usbl(fixes, -1.0)


def test_snap_to_nearest_and_drop_duplicates():
    imu, _ = _streams(N=5, T=1.0)
    fixes = UsblStream([0.1, 1.6, 1.9, 4.2], np.zeros((4, 3)))
    idx, which = snap_fixes(imu, fixes)
    np.testing.assert_array_equal(idx, [0, 2, 4])
    np.testing.assert_array_equal(which, [0, 1, 3])


def test_fix_outside_imu_range():
    imu, _ = _streams(N=5, T=1.0)
    with pytest.raises(ModelError):
        snap_fixes(imu, UsblStream([7.0], np.zeros((1, 3))))


def test_stream_errors():
    with pytest.raises(DimensionError):
        ImuStream([0, 1], np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(ModelError):
        ImuStream([0, 0], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ModelError):
        ImuStream([0, 1, 3], np.zeros((3, 3)), np.zeros((3, 3))).period()
    imu, usbl = _streams()
    with pytest.raises(ModelError):
        build_problem(imu, UsblStream(np.zeros(0), np.zeros((0, 3))), NavConfig())


@pytest.mark.parametrize("bad", [dict(T=0.0), dict(r_s=-1.0), dict(hub_kappa=0.0),
                                 dict(deadzone_epsilon=-0.1), dict(process_scale=0.0),
                                 dict(bias_prior="flat"), dict(damping=2.0)])
def test_nav_config_validation(bad):
    with pytest.raises(ParameterError):
        NavConfig(**bad)


def test_nav_config_round_trip():
    cfg = NavConfig(accel_penalty=Penalty.huber(2.0), U_diag=0.5)
    back = NavConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ParameterError):
        NavConfig.from_dict({"kappa": 1.0})


def test_hubnik_parameters_are_whitened():
    pen = NavConfig(r_s=0.04, deadzone_epsilon=0.1, hub_kappa=1.0).measurement_penalty()
    assert pen.kind == "hubnik"
    assert pen.epsilon == pytest.approx(0.5)
    assert pen.kappa == pytest.approx(5.0)


def test_fix_velocity():
    assert not np.any(fix_velocity(UsblStream([0.0], np.ones((1, 3)))))
    v = fix_velocity(UsblStream([0.0, 2.0], [[0, 0, 0], [2, 4, -2]]))
    np.testing.assert_allclose(v, [1, 2, -1])
