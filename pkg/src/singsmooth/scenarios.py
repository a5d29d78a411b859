"""Synthetic data sets standing in for field data.

``fig1_*``: a 1-D position/velocity track where position is the exact
integral of a random-walk velocity, observed directly with a fraction of the
measurements replaced by large outliers.

``nav_*``: a slowly drifting 3-D track observed by an accelerometer (rotated
into the instrument frame, biased, noisy, quantized) and by sparse USBL fixes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Problem, TimeStep
from .navigation import ImuStream, UsblStream, rotation
from .penalties import Penalty


@dataclass
class Fig1Scenario:
    t: np.ndarray
    truth: np.ndarray          # (N, 2): position, velocity
    y: np.ndarray              # (N,)
    outliers: np.ndarray       # bool mask
    x0: np.ndarray
    T: float
    vel_std: float
    meas_std: float


def fig1_scenario(seed=0, N=100, T=1.0, vel_std=0.1, meas_std=1.0,
                  outlier_fraction=0.1, outlier_scale=10.0, v0=0.5):
    rng = np.random.default_rng(seed)
    G = np.array([[1.0, T], [0.0, 1.0]])
    x0 = np.array([0.0, v0])
    truth = np.zeros((N, 2))
    prev = x0
    for k in range(N):
        base = prev if k == 0 else G @ prev
        truth[k] = base + np.array([0.0, vel_std * rng.standard_normal()])
        prev = truth[k]
    y = truth[:, 0] + meas_std * rng.standard_normal(N)
    n_out = int(round(outlier_fraction * N))
    outliers = np.zeros(N, bool)
    if n_out:
        idx = rng.choice(N, size=n_out, replace=False)
        outliers[idx] = True
        y[idx] = truth[idx, 0] + outlier_scale * meas_std * rng.standard_normal(n_out)
    return Fig1Scenario(T * np.arange(N), truth, y, outliers, x0, T, vel_std, meas_std)


def fig1_problem(scn, loss="huber", kappa=1.0):
    """Singular model: position is the deterministic integral of velocity."""
    G = np.array([[1.0, scn.T], [0.0, 1.0]])
    C = np.array([[0.0], [scn.vel_std]])
    H = np.array([[1.0, 0.0]])
    S = np.array([[scn.meas_std]])
    rho_m = Penalty.huber(kappa) if loss == "huber" else Penalty.quadratic()
    steps = [TimeStep(G=np.eye(2) if k == 0 else G, C=C, H=H, S=S, y=[scn.y[k]],
                      rho_p=Penalty.quadratic(), rho_m=rho_m)
             for k in range(len(scn.y))]
    return Problem(scn.x0, steps)


@dataclass
class NavScenario:
    imu: ImuStream
    usbl: UsblStream
    truth_t: np.ndarray
    truth_pos: np.ndarray
    truth_vel: np.ndarray
    truth_acc: np.ndarray
    bias: np.ndarray


def _trajectory(t, rng, speed, period):
    """Smooth drift that starts at rest: v = V (1 - cos w t), a = V w sin w t."""
    V = rng.uniform(*speed, 3) * rng.choice([-1.0, 1.0], 3)
    V[2] *= 0.3
    w = 2 * np.pi / rng.uniform(*period, 3)
    tt = t[:, None]
    pos = V * (tt - np.sin(w * tt) / w)
    vel = V * (1.0 - np.cos(w * tt))
    acc = V * w * np.sin(w * tt)
    return pos, vel, acc


def nav_scenario(seed=0, duration=120.0, imu_rate=5.0, fix_period=2.0,
                 accel_std=0.05, quantization=0.05, U_diag=(0.25, 0.25, 0.25),
                 bias=(0.08, -0.05, 0.12), accel_outlier_fraction=0.03,
                 accel_outlier_std=3.0, attitude_wobble=0.05, speed=(0.05, 0.25),
                 period=(40.0, 120.0)):
    """Simulate IMU and USBL streams over ``duration`` seconds.

    Measured acceleration is ``R(attitude) a_world + bias + noise``, with a
    small fraction of samples replaced by spikes, then rounded to the
    quantization grid (skipped when ``quantization`` is 0).  Positions, true
    and measured, are relative to the first fix.
    """
    rng = np.random.default_rng(seed)
    T = 1.0 / imu_rate
    N = int(round(duration * imu_rate)) + 1
    t = T * np.arange(N)
    pos, vel, acc = _trajectory(t, rng, speed, period)
    h0 = rng.uniform(-np.pi, np.pi)
    phase = rng.uniform(0, 2 * np.pi, 3)
    heading = h0 + 0.3 * np.sin(2 * np.pi * t / 150.0 + phase[0])
    pitch = attitude_wobble * np.sin(2 * np.pi * t / 7.0 + phase[1])
    roll = attitude_wobble * np.sin(2 * np.pi * t / 5.0 + phase[2])
    att = np.column_stack([heading, pitch, roll])
    bias = np.asarray(bias, dtype=float)
    meas = np.array([rotation(*att[k]) @ acc[k] for k in range(N)]) + bias
    meas = meas + accel_std * rng.standard_normal((N, 3))
    if accel_outlier_fraction > 0:
        spikes = rng.random(N) < accel_outlier_fraction
        meas[spikes] += accel_outlier_std * rng.standard_normal((int(spikes.sum()), 3))
    if quantization > 0:
        meas = quantization * np.round(meas / quantization)
    step = max(int(round(fix_period * imu_rate)), 1)
    fix_idx = np.arange(0, N, step)
    u_sd = np.sqrt(np.broadcast_to(np.asarray(U_diag, dtype=float), (3,)))
    fixes = pos[fix_idx] + u_sd * rng.standard_normal((len(fix_idx), 3))
    # positions are reported relative to the first fix
    origin = fixes[0].copy()
    fixes -= origin
    pos = pos - origin
    return NavScenario(ImuStream(t, meas, att), UsblStream(t[fix_idx], fixes),
                       t, pos, vel, acc, bias)


def rmse(est, truth):
    """Root mean squared Euclidean error between two ``(N, d)`` tracks."""
    d = np.asarray(est) - np.asarray(truth)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))
