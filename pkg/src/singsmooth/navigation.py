"""IMU + USBL navigation model.

State ``(x, y, z, vx, vy, vz, ax, ay, az)`` in the local-level frame,
optionally followed by an accelerometer bias ``(b1, b2, b3)``.  The process
is the exact Taylor discretization of a constant-acceleration model with a
rank-3 noise factor; accelerometer rows map world-frame acceleration into the
instrument frame with the attitude rotation, and USBL rows observe position.
Steps without a fix simply have no position rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DimensionError, ModelError, ParameterError
from .model import Problem, SeparablePenalty, TimeStep, augment_bias
from .penalties import Penalty

I3 = np.eye(3)
Z3 = np.zeros((3, 3))


def discretize_F(T):
    """Transition ``[[I, T I, T^2/2 I], [0, I, T I], [0, 0, I]]``."""
    return np.block([[I3, T * I3, 0.5 * T * T * I3],
                     [Z3, I3, T * I3],
                     [Z3, Z3, I3]])


def gamma_factor(T):
    """9 x 3 process noise factor with blocks ``T^3/6 I, T^2/2 I, T I``."""
    return np.vstack([T ** 3 / 6.0 * I3, T * T / 2.0 * I3, T * I3])


def rotation(heading, pitch, roll):
    """``R_h^T R_p^T R_r^T`` from heading, pitch and roll in radians."""
    ch, sh = np.cos(heading), np.sin(heading)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Rh = np.array([[ch, sh, 0.0], [-sh, ch, 0.0], [0.0, 0.0, 1.0]])
    Rp = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    Rr = np.array([[1.0, 0.0, 0.0], [0.0, cr, sr], [0.0, -sr, cr]])
    return Rh.T @ Rp.T @ Rr.T


@dataclass
class NavConfig:
    """Navigation model settings.

    Variances are per axis: ``r_s`` for the accelerometer (m^2/s^4),
    ``U_diag`` for USBL position (m^2).  ``deadzone_epsilon`` and
    ``hub_kappa`` are in m/s^2 and are whitened by ``sqrt(r_s)`` before
    building the hubnik loss.  ``process_scale`` multiplies the noise factor.
    ``bias_prior`` is ``"identity"`` (unit covariance on the initial bias) or
    ``"free"`` (unpenalised).
    """

    T: float | None = None
    r_s: float = 0.05 ** 2
    U_diag: tuple = (0.25, 0.25, 0.25)
    deadzone_epsilon: float = 0.05
    hub_kappa: float = 1.0
    process_scale: float = 1.0
    process_penalty: Penalty = field(default_factory=Penalty.l1)
    usbl_penalty: Penalty = field(default_factory=Penalty.quadratic)
    accel_penalty: Penalty | None = None
    estimate_bias: bool = True
    bias_prior: str = "identity"
    damping: float = 0.1

    def __post_init__(self):
        if self.T is not None and not self.T > 0:
            raise ParameterError("sample period T must be positive")
        self.U_diag = tuple(float(u) for u in np.broadcast_to(self.U_diag, (3,)))
        if self.r_s < 0 or min(self.U_diag) < 0:
            raise ParameterError("variances must be nonnegative")
        if self.deadzone_epsilon < 0 or not self.hub_kappa > 0:
            raise ParameterError("need epsilon >= 0 and kappa > 0")
        if not self.process_scale > 0:
            raise ParameterError("process_scale must be positive")
        if self.bias_prior not in ("identity", "free"):
            raise ParameterError("bias_prior must be 'identity' or 'free'")
        if not 0 <= self.damping <= 1:
            raise ParameterError("damping must lie in [0, 1]")
        for name in ("process_penalty", "usbl_penalty", "accel_penalty"):
            v = getattr(self, name)
            if isinstance(v, dict):
                setattr(self, name, Penalty.from_dict(v))

    def measurement_penalty(self):
        """Loss on whitened accelerometer residuals (hubnik unless overridden)."""
        if self.accel_penalty is not None:
            return self.accel_penalty
        sd = np.sqrt(self.r_s) if self.r_s > 0 else 1.0
        return Penalty.hubnik(self.deadzone_epsilon / sd, self.hub_kappa / sd)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ParameterError(f"unknown navigation options: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if isinstance(v, Penalty) else (list(v) if isinstance(v, tuple) else v)
        return out


@dataclass
class ImuStream:
    """Uniformly sampled IMU data: times (N,), accel (N, 3), attitude (N, 3) = heading, pitch, roll."""

    t: np.ndarray
    accel: np.ndarray
    attitude: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        self.attitude = np.asarray(self.attitude, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.accel) == len(self.attitude)):
            raise DimensionError("IMU columns have different lengths")
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise ModelError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def period(self, rtol=1e-6):
        if len(self.t) < 2:
            raise ModelError("need at least two IMU samples to infer the sample period")
        d = np.diff(self.t)
        T = float(np.median(d))
        if np.max(np.abs(d - T)) > rtol * max(T, 1.0):
            raise ModelError("IMU stream is not uniformly sampled; resample it first")
        return T


@dataclass
class UsblStream:
    """Position fixes: times (M,), positions (M, 3) relative to the first fix."""

    t: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.pos = np.asarray(self.pos, dtype=float).reshape(-1, 3)
        if len(self.t) != len(self.pos):
            raise DimensionError("USBL columns have different lengths")

    def __len__(self):
        return len(self.t)


def subsample_usbl(fixes, gap_seconds):
    """Keep the first fix and every fix at least ``gap_seconds`` after the last kept one."""
    if gap_seconds < 0:
        raise ParameterError("gap must be nonnegative")
    keep = []
    last = -np.inf
    for i, t in enumerate(fixes.t):
        if not keep or t - last >= gap_seconds - 1e-9:
            keep.append(i)
            last = t
    keep = np.array(keep, dtype=int)
    return UsblStream(fixes.t[keep], fixes.pos[keep])


def snap_fixes(imu, fixes):
    """Index of the nearest IMU sample for each fix; duplicates keep the first fix."""
    if len(fixes) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    T = imu.period() if len(imu) > 1 else 0.0
    lo, hi = imu.t[0] - T / 2, imu.t[-1] + T / 2
    bad = (fixes.t < lo - 1e-9) | (fixes.t > hi + 1e-9)
    if np.any(bad):
        raise ModelError(f"USBL fix at t={fixes.t[bad][0]:g} lies outside the IMU time range")
    idx = np.clip(np.searchsorted(imu.t, fixes.t), 1, max(len(imu) - 1, 1))
    if len(imu) > 1:
        left = imu.t[idx - 1]
        idx = np.where(np.abs(fixes.t - left) <= np.abs(imu.t[idx] - fixes.t), idx - 1, idx)
    else:
        idx = np.zeros(len(fixes), dtype=int)
    _, first = np.unique(idx, return_index=True)
    first = np.sort(first)
    return idx[first], first


def build_problem(imu, usbl, cfg):
    """One time step per IMU sample.

    Process: ``G = F(T)``, ``C = process_scale * Gamma(T)``, loss
    ``cfg.process_penalty``.  Accelerometer rows ``[0, 0, R(attitude)]`` with
    ``S = sqrt(r_s) I`` (no columns when ``r_s == 0``) and the hubnik loss;
    at fix times three USBL rows ``[I, 0, 0]`` come first with
    ``S = diag(sqrt(U))``.  With ``estimate_bias`` the state is augmented
    with an instrument-frame additive accelerometer bias.
    """
    if len(imu) == 0:
        raise ModelError("empty IMU stream")
    if len(usbl) == 0:
        raise ModelError("need at least one USBL fix to anchor the track")
    T = cfg.T or imu.period()
    idx, which = snap_fixes(imu, usbl)
    fix_at = dict(zip(idx.tolist(), which.tolist()))

    F = discretize_F(T)
    C = cfg.process_scale * gamma_factor(T)
    acc_sd = np.sqrt(cfg.r_s)
    S_acc = acc_sd * I3 if cfg.r_s > 0 else np.zeros((3, 0))
    u_sd = np.sqrt(np.array(cfg.U_diag))
    S_pos = np.diag(u_sd)[:, u_sd > 0]
    acc_pen = cfg.measurement_penalty()
    steps = []
    for k in range(len(imu)):
        R = rotation(*imu.attitude[k])
        H_acc = np.hstack([np.zeros((3, 6)), R])
        if k in fix_at:
            H = np.vstack([np.hstack([I3, np.zeros((3, 6))]), H_acc])
            S = np.block([[S_pos, np.zeros((3, S_acc.shape[1]))],
                          [np.zeros((3, S_pos.shape[1])), S_acc]])
            y = np.concatenate([usbl.pos[fix_at[k]], imu.accel[k]])
            terms = []
            if S_pos.shape[1]:
                terms.append((0, S_pos.shape[1], cfg.usbl_penalty))
            if S_acc.shape[1]:
                terms.append((S_pos.shape[1], 3, acc_pen))
            rho_m = SeparablePenalty(tuple(terms), S.shape[1])
        else:
            H, S, y = H_acc, S_acc, imu.accel[k]
            rho_m = acc_pen
        steps.append(TimeStep(G=np.eye(9) if k == 0 else F, C=C, H=H, S=S, y=y,
                              rho_p=cfg.process_penalty, rho_m=rho_m))
    x0 = np.concatenate([usbl.pos[which[0]] if len(idx) else np.zeros(3), np.zeros(6)])
    p = Problem(x0, steps)
    if cfg.estimate_bias:
        maps = [np.vstack([np.zeros((st.m - 3, 3)), I3]) for st in p.steps]
        p = augment_bias(p, 3, maps, free_bias=cfg.bias_prior == "free",
                         bias_penalty=Penalty.quadratic())
    return p


def fix_velocity(usbl):
    """Velocity implied by the first two fixes (zero with fewer than two)."""
    if len(usbl) < 2:
        return np.zeros(3)
    return (usbl.pos[1] - usbl.pos[0]) / (usbl.t[1] - usbl.t[0])
