"""Independent oracles used to check the smoother.

None of these share code paths with the DRS solver beyond the problem
description: the Kalman/RTS pair and the dense KKT solve are classical
Gaussian smoothers, ``prox_oracle`` minimises the prox objective by
golden-section search, and ``pinv_huber_smoother`` is the naive robust
smoother that replaces ``Q^{-1/2}`` by a pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .blocklinalg import assemble
from .errors import OracleError, ParameterError
from .model import StackedVector, internal_penalty
from .penalties import Penalty, values

PINV_RTOL = 1e-12
MAX_KALMAN_STEPS = 1000
MAX_DENSE_SIZE = 4000


@dataclass
class GaussianEstimate:
    means: np.ndarray
    covariances: np.ndarray


def _pinv_sym(P, rtol=PINV_RTOL):
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    top = np.max(np.abs(w), initial=0.0)
    keep = w > rtol * top if top > 0 else np.zeros(w.shape, bool)
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def _quadratic_weight(rho, name):
    if isinstance(rho, Penalty) and rho.kind == "quadratic":
        return rho.scale
    raise OracleError(f"{name}: the Gaussian oracles need plain quadratic penalties")


def kalman_rts(p):
    """Covariance-form Kalman filter plus RTS smoother.

    Penalties must be ``Penalty.quadratic(scale)``; the scale acts as an
    inverse variance multiplier.  Singular ``Q``/``R`` are fine: only the
    innovation covariance is inverted, and the RTS gain uses a symmetric
    pseudo-inverse of the predicted covariance.
    """
    if p.N > MAX_KALMAN_STEPS:
        raise OracleError(f"kalman_rts is limited to N <= {MAX_KALMAN_STEPS}")
    n, N = p.n, p.N
    xp = np.zeros((N, n))
    Pp = np.zeros((N, n, n))
    xf = np.zeros((N, n))
    Pf = np.zeros((N, n, n))
    for k, st in enumerate(p.steps):
        if st.rho_s is not None:
            raise OracleError("kalman_rts does not handle state constraints")
        Q = st.C @ st.C.T / _quadratic_weight(st.rho_p, "rho_p")
        if k == 0:
            xp[k], Pp[k] = p.x0, Q
        else:
            xp[k] = st.G @ xf[k - 1]
            Pp[k] = st.G @ Pf[k - 1] @ st.G.T + Q
        if st.m == 0:
            xf[k], Pf[k] = xp[k], Pp[k]
            continue
        R = st.S @ st.S.T / (_quadratic_weight(st.rho_m, "rho_m") if st.s else 1.0)
        H = st.H
        Sinn = H @ Pp[k] @ H.T + R
        Sinn = 0.5 * (Sinn + Sinn.T)
        try:
            Lc = np.linalg.cholesky(Sinn)
        except np.linalg.LinAlgError:
            raise OracleError(f"step {k}: innovation covariance is not positive definite") from None
        if np.min(np.diag(Lc)) ** 2 <= 1e-13 * np.max(np.diag(Sinn)):
            raise OracleError(f"step {k}: innovation covariance is numerically singular")
        K = np.linalg.solve(Sinn, H @ Pp[k]).T
        xf[k] = xp[k] + K @ (st.y - H @ xp[k])
        IKH = np.eye(n) - K @ H
        Pf[k] = IKH @ Pp[k] @ IKH.T + K @ R @ K.T
    xs = xf.copy()
    Ps = Pf.copy()
    for k in range(N - 2, -1, -1):
        G = p.steps[k + 1].G
        J = Pf[k] @ G.T @ _pinv_sym(Pp[k + 1])
        xs[k] = xf[k] + J @ (xs[k + 1] - xp[k + 1])
        Ps[k] = Pf[k] + J @ (Ps[k + 1] - Pp[k + 1]) @ J.T
        Ps[k] = 0.5 * (Ps[k] + Ps[k].T)
    return GaussianEstimate(xs, Ps)


def dense_equality_ls(p):
    """Solve the quadratic-penalty problem by one dense KKT factorization.

    Every penalty term must be quadratic (any scale); uncovered coordinates
    and all state coordinates carry zero weight.  Returns a StackedVector.
    """
    lay = p.layout
    if lay.size + lay.rows > MAX_DENSE_SIZE:
        raise OracleError(f"dense oracle limited to {MAX_DENSE_SIZE} unknowns")
    weight = np.zeros(lay.size)
    for idx, pen in internal_penalty(p).groups:
        if pen.kind != "quadratic":
            raise OracleError("dense_equality_ls needs quadratic penalties")
        weight[idx] = pen.scale
    A, w_hat = assemble(p)
    Ad = A.to_dense()
    m, nz = Ad.shape
    K = np.zeros((nz + m, nz + m))
    K[:nz, :nz] = np.diag(weight)
    K[:nz, nz:] = Ad.T
    K[nz:, :nz] = Ad
    rhs = np.concatenate([np.zeros(nz), w_hat])
    if np.linalg.matrix_rank(K) < K.shape[0]:
        raise OracleError("KKT matrix is singular (rank-deficient A or unbounded problem)")
    sol = np.linalg.solve(K, rhs)
    return StackedVector(sol[:nz], lay)


def prox_oracle(p, alpha, z, iters=90):
    """Prox of ``alpha * p`` at scalar(s) ``z`` by golden-section search.

    Works elementwise on arrays.  The search runs in extended precision on a
    bracket that must contain the minimiser: for the PLQ kinds the prox lies
    between 0 (a minimiser of the penalty) and ``z``; boxes clip the bracket.
    """
    if np.any(np.asarray(alpha) <= 0):
        raise ParameterError("alpha must be positive")
    z = np.asarray(z, dtype=np.longdouble)
    alpha = np.asarray(alpha, dtype=np.longdouble)
    z, alpha = np.broadcast_arrays(z, alpha)
    a = np.minimum(z, 0) - 1
    b = np.maximum(z, 0) + 1
    if p.kind == "box":
        lo = np.broadcast_to(np.asarray(p.lower, dtype=np.longdouble), z.shape)
        hi = np.broadcast_to(np.asarray(p.upper, dtype=np.longdouble), z.shape)
        a = np.clip(a, lo, hi)
        b = np.clip(b, lo, hi)
        pb = Penalty.box(np.broadcast_to(p.lower, z.shape), np.broadcast_to(p.upper, z.shape))
    else:
        pb = p

    def F(x):
        return (x - z) ** 2 / (2 * alpha) + values(pb, x)

    g = (np.sqrt(np.longdouble(5)) - 1) / 2
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = F(c), F(d)
    for _ in range(iters):
        left = fc <= fd
        # left: keep [a, d], old c becomes the new d; else keep [c, b], old d becomes c
        a, b = np.where(left, a, c), np.where(left, d, b)
        c, d, fc, fd = (np.where(left, b - g * (b - a), d), np.where(left, c, a + g * (b - a)),
                        np.where(left, fc, fd), np.where(left, fc, fd))
        fnew = F(np.where(left, c, d))
        fc = np.where(left, fnew, fc)
        fd = np.where(left, fd, fnew)
        if np.all(b - a <= 1e-13 * (1 + np.abs(z))):
            break
    return np.asarray(0.5 * (a + b), dtype=float)


def _inv_sqrt_psd(M, rtol=PINV_RTOL):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    top = np.max(np.abs(w), initial=0.0)
    keep = w > rtol * top if top > 0 else np.zeros(w.shape, bool)
    return (V[:, keep] / np.sqrt(w[keep])) @ V[:, keep].T


def pinv_huber_smoother(p, kappa=1.0, gtol=1e-8, max_iter=20000):
    """Huber smoother that whitens with pseudo-inverse square roots.

    Minimises ``sum_k h(Q_k^{+1/2}(x_k - G_k x_{k-1})) + h(R_k^{+1/2}(H_k x_k - y_k))``
    over the state trajectory with L-BFGS.  Directions in the null space of a
    singular ``Q_k`` are simply unpenalised, which is the failure mode this
    baseline exists to show.  Returns ``(states, info)``.
    """
    n, N = p.n, p.N
    Wp = [_inv_sqrt_psd(st.C @ st.C.T) for st in p.steps]
    Wm = [_inv_sqrt_psd(st.S @ st.S.T) if st.m else np.zeros((0, 0)) for st in p.steps]

    def hub(r):
        a = np.abs(r)
        return np.where(a <= kappa, 0.5 * r * r, kappa * a - 0.5 * kappa * kappa), np.clip(r, -kappa, kappa)

    def fg(flat):
        X = flat.reshape(N, n)
        f = 0.0
        g = np.zeros_like(X)
        for k, st in enumerate(p.steps):
            prev = p.x0 if k == 0 else st.G @ X[k - 1]
            r = Wp[k] @ (X[k] - prev)
            v, d = hub(r)
            f += v.sum()
            gk = Wp[k].T @ d
            g[k] += gk
            if k > 0:
                g[k - 1] -= st.G.T @ gk
            if st.m:
                r = Wm[k] @ (st.H @ X[k] - st.y)
                v, d = hub(r)
                f += v.sum()
                g[k] += st.H.T @ (Wm[k].T @ d)
        return f, g.ravel()

    x_init = np.tile(p.x0, N)
    res = minimize(fg, x_init, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": max_iter, "maxcor": 30})
    info = {"converged": bool(res.success), "iterations": int(res.nit),
            "grad_norm": float(np.max(np.abs(res.jac))), "message": str(res.message)}
    return res.x.reshape(N, n), info
