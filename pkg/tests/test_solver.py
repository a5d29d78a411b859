import csv

import numpy as np
import pytest

from _models import random_gaussian, random_singular
from singsmooth.blocklinalg import AffineProjector
from singsmooth.errors import DimensionError, ParameterError
from singsmooth.model import Problem, TimeStep, objective
from singsmooth.penalties import Penalty
from singsmooth.reference import dense_equality_ls, kalman_rts
from singsmooth.solver import SolverConfig, column_scale, kkt_certificate, solve, warm_start

TIGHT = SolverConfig(tol_rel=1e-12)


def test_zero_penalty_is_pure_projection():
    # with box(-inf, inf) everywhere any feasible point is optimal; DRS stays at P(init)
    free = Penalty.box(-np.inf, np.inf)
    st = TimeStep(G=[[1.0]], C=[[1.0]], H=[[1.0]], S=[[1.0]], y=[2.0], rho_p=free, rho_m=free)
    p = Problem([0.0], [st, st])
    proj = AffineProjector(p)
    init = np.array([1.0, -3.0, 4.0, 0.5, 2.0, -1.0])
    r = solve(p, TIGHT, init=init)
    np.testing.assert_allclose(r.z.data, proj(init), atol=1e-12)
    assert r.iterations <= 2


@pytest.mark.parametrize("seed", range(3))
def test_matches_kalman_smoother(seed):
    p = random_gaussian(np.random.default_rng(seed), N=20)
    r = solve(p, TIGHT)
    assert r.converged
    np.testing.assert_allclose(r.states, kalman_rts(p).means, atol=1e-8)


@pytest.mark.parametrize("scale", [(1, 1, 1), (2, 0.5, 10), (1, 3, 30)])
def test_block_scale_does_not_move_the_minimiser(scale):
    p = random_singular(np.random.default_rng(1), N=10)
    ref = dense_equality_ls(p).states
    r = solve(p, SolverConfig(tol_rel=1e-13, block_scale=scale))
    np.testing.assert_allclose(r.states, ref, atol=1e-8)


def test_column_scale_layout():
    p = random_gaussian(np.random.default_rng(0), N=2, n=3, m=1)
    c = column_scale(p, (1.0, 2.0, 3.0))
    lay = p.layout
    assert set(c[lay.u_slice(1)]) == {1.0}
    assert set(c[lay.t_slice(1)]) == {2.0}
    assert set(c[lay.x_slice(0)]) == {3.0}


def test_kkt_certificate_robust_problem():
    p = random_singular(np.random.default_rng(2), N=12)
    p = Problem(p.x0, [p.replace_step(k, rho_m=Penalty.huber(0.5), rho_p=Penalty.l1()).steps[k]
                       for k in range(p.N)])
    r = solve(p, SolverConfig(tol_rel=1e-12))
    cert = kkt_certificate(p, r, tol=1e-6)
    assert cert["feas_residual"] < 1e-9
    assert cert["stationarity"] < 1e-5
    assert cert["range_residual"] < 1e-6


def test_kkt_certificate_flags_a_wrong_dual():
    p = random_gaussian(np.random.default_rng(3), N=5)
    r = solve(p, TIGHT)
    r.zeta = r.zeta + 1.0
    assert kkt_certificate(p, r)["stationarity"] > 0.5


def test_box_constraint_is_respected():
    st = TimeStep(G=[[1.0]], C=[[1.0]], H=[[1.0]], S=[[1.0]], y=[5.0], rho_s=Penalty.box(-1.0, 1.0))
    r = solve(Problem([0.0], [st] * 4), TIGHT)
    assert np.all(r.states <= 1.0 + 1e-9)
    np.testing.assert_allclose(r.states[-1], 1.0, atol=1e-8)


@pytest.mark.parametrize("bad", [dict(tau=0), dict(tau=2.0, sigma=1.0), dict(tol_rel=0),
                                 dict(block_scale=(1, 1)), dict(block_scale=(1, -1, 1)),
                                 dict(max_iter=0)])
def test_config_validation(bad):
    with pytest.raises(ParameterError):
        SolverConfig(**bad)


def test_config_dict_round_trip_and_unknown_keys():
    cfg = SolverConfig(tau=0.5, sigma=2.0, block_scale=(1, 3, 30))
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ParameterError):
        SolverConfig.from_dict({"tol": 1e-3})


def test_projector_scale_mismatch():
    p = random_gaussian(np.random.default_rng(4), N=3)
    with pytest.raises(ParameterError):
        solve(p, SolverConfig(block_scale=(1, 1, 10)), projector=AffineProjector(p))


def test_bad_initial_point_length():
    p = random_gaussian(np.random.default_rng(4), N=3)
    with pytest.raises(DimensionError):
        solve(p, init=np.zeros(3))


def test_max_iter_reports_non_convergence():
    p = random_singular(np.random.default_rng(5), N=10)
    r = solve(p, SolverConfig(max_iter=3))
    assert not r.converged and r.iterations == 3


def test_warm_start_does_not_change_the_answer():
    p = random_gaussian(np.random.default_rng(6), N=15, n=9, m=3)
    r0 = solve(p, TIGHT)
    z = warm_start(p, np.ones(3), np.array([0.5, 0.0, -0.5]), 0.5, dt=0.2)
    r1 = solve(p, TIGHT, init=z)
    np.testing.assert_allclose(r1.states, r0.states, atol=1e-8)


@pytest.mark.parametrize("damping", [0.0, 1.0])
def test_warm_start_damping_extremes(damping):
    p = random_gaussian(np.random.default_rng(7), N=4, n=9, m=3)
    v = np.array([1.0, 2.0, 3.0])
    z = warm_start(p, np.zeros(3), v, damping, dt=0.5)
    X = z.states
    np.testing.assert_allclose(X[:, 3:6], np.tile(damping * v, (4, 1)))
    np.testing.assert_allclose(X[3, :3], damping * v * 1.5)
    assert not np.any(X[:, 6:9])
    with pytest.raises(ParameterError):
        warm_start(p, np.zeros(3), v, 1.5)


def test_diagnostics_csv(tmp_path):
    p = random_gaussian(np.random.default_rng(8), N=5)
    r = solve(p, SolverConfig(tol_rel=1e-10, log_every=5))
    path = tmp_path / "diag.csv"
    r.write_diagnostics(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "objective", "feas_residual", "step_change"]
    assert int(rows[-1][0]) == r.iterations
    assert float(rows[-1][1]) == pytest.approx(r.objective)


def test_final_objective_matches_dense_optimum():
    p = random_gaussian(np.random.default_rng(9), N=10)
    r = solve(p, SolverConfig(tol_rel=1e-12, log_every=1))
    assert r.objective == pytest.approx(objective(p, dense_equality_ls(p)), rel=1e-8)
