"""State-space smoothing problems with possibly singular covariances.

A :class:`Problem` describes::

    x_1 = x0 + w_1,    x_k = G_k x_{k-1} + w_k,    y_k = H_k x_k + v_k,

with ``cov(w_k) = C_k C_k^T`` and ``cov(v_k) = S_k S_k^T``.  Only the
square-root factors are ever stored; a factor with fewer columns than rows
encodes a rank-deficient covariance and a zero-width factor encodes an exact
(noiseless) relation.

The smoother minimises ``sum_k rho_p(u_k) + rho_m(t_k) + rho_s(x_k)`` over the
stacked vector ``z = (u_1, t_1, x_1, ..., u_N, t_N, x_N)`` subject to::

    C_k u_k + x_k - G_k x_{k-1} = (x0 if k == 1 else 0)
    S_k t_k + H_k x_k           = y_k

so ``S_k t_k = v_k`` and ``C_k u_k = -w_k``.  Penalties given on a
:class:`TimeStep` always refer to the user-facing residuals ``w_k`` and
``v_k``; the sign flip on ``u_k`` is applied in :func:`internal_penalty`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import DimensionError, ModelError, ParameterError, RankDeficiencyError
from .penalties import Penalty, SeparablePenalty, evaluate, separable_evaluate


def _mat(a, rows=None, cols=None, name="matrix"):
    a = np.array(a, dtype=float)
    if a.ndim == 1 and a.size == 0 and rows is not None and cols is not None:
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeStep:
    """One time slice of the model.

    ``G`` is ignored at the first step (the transition from ``x0`` is the
    identity).  ``rho_p`` acts on the whitened innovation, ``rho_m`` on the
    whitened measurement residual, ``rho_s`` (optional) on the state.  Each may
    be a :class:`Penalty` applied elementwise or a :class:`SeparablePenalty`
    with offsets local to its block.
    """

    G: np.ndarray
    C: np.ndarray
    H: np.ndarray | None = None
    S: np.ndarray | None = None
    y: np.ndarray | None = None
    rho_p: Penalty | SeparablePenalty = field(default_factory=Penalty.quadratic)
    rho_m: Penalty | SeparablePenalty = field(default_factory=Penalty.quadratic)
    rho_s: Penalty | SeparablePenalty | None = None

    def __post_init__(self):
        G = _mat(self.G, name="G")
        n = G.shape[0]
        C = _mat(self.C, n, 0, name="C")
        H = _mat(np.zeros((0, n)) if self.H is None else self.H, 0, n, name="H")
        m = H.shape[0]
        S = _mat(np.zeros((m, 0)) if self.S is None else self.S, m, 0, name="S")
        y = np.array(np.zeros(m) if self.y is None else self.y, dtype=float).reshape(-1)
        y.setflags(write=False)
        for name, val in (("G", G), ("C", C), ("H", H), ("S", S), ("y", y)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.G.shape[0]

    @property
    def r(self):
        return self.C.shape[1]

    @property
    def m(self):
        return self.H.shape[0]

    @property
    def s(self):
        return self.S.shape[1]


@dataclass(frozen=True, eq=False)
class Problem:
    x0: np.ndarray
    steps: tuple

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) < 1:
            raise ModelError("a problem needs at least one time step")

    @property
    def n(self):
        return self.x0.size

    @property
    def N(self):
        return len(self.steps)

    @property
    def layout(self):
        return Layout.from_problem(self)

    def replace_step(self, k, **changes):
        steps = list(self.steps)
        steps[k] = replace(steps[k], **changes)
        return Problem(self.x0, steps)

    # -- JSON ---------------------------------------------------------------
    def to_dict(self):
        return {
            "x0": self.x0.tolist(),
            "steps": [
                {
                    "G": st.G.tolist(), "C": st.C.tolist(), "H": st.H.tolist(),
                    "S": st.S.tolist(), "y": st.y.tolist(),
                    "rho_p": _penalty_to_json(st.rho_p),
                    "rho_m": _penalty_to_json(st.rho_m),
                    "rho_s": _penalty_to_json(st.rho_s),
                }
                for st in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, d):
        x0 = np.asarray(d["x0"], dtype=float)
        n = x0.size
        steps = []
        for sd in d["steps"]:
            H = np.asarray(sd.get("H", []), dtype=float).reshape(-1, n)
            m = H.shape[0]
            steps.append(TimeStep(
                G=sd.get("G", np.eye(n)),
                C=np.asarray(sd.get("C", []), dtype=float).reshape(n, -1),
                H=H,
                S=np.asarray(sd.get("S", []), dtype=float).reshape(m, -1),
                y=sd.get("y", []),
                rho_p=_penalty_from_json(sd.get("rho_p", {"kind": "quadratic"})),
                rho_m=_penalty_from_json(sd.get("rho_m", {"kind": "quadratic"})),
                rho_s=_penalty_from_json(sd.get("rho_s")),
            ))
        return cls(x0, steps)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _penalty_to_json(p):
    if p is None:
        return None
    if isinstance(p, SeparablePenalty):
        return {"terms": [[o, n, q.to_dict()] for o, n, q in p.terms]}
    return p.to_dict()


def _penalty_from_json(d):
    if d is None:
        return None
    if "terms" in d:
        return SeparablePenalty(tuple((o, n, Penalty.from_dict(q)) for o, n, q in d["terms"]))
    return Penalty.from_dict(d)


@dataclass(frozen=True)
class Layout:
    """Offsets of the ``(u_k, t_k, x_k)`` column blocks and the row blocks of ``A``."""

    n: int
    r: tuple
    s: tuple
    m: tuple

    @classmethod
    def from_problem(cls, p):
        return cls(p.n, tuple(st.r for st in p.steps), tuple(st.s for st in p.steps),
                   tuple(st.m for st in p.steps))

    @property
    def N(self):
        return len(self.r)

    @cached_property
    def col_sizes(self):
        return np.array([r + s + self.n for r, s in zip(self.r, self.s)])

    @cached_property
    def row_sizes(self):
        return np.array([self.n + m for m in self.m])

    @cached_property
    def col_offsets(self):
        return np.concatenate([[0], np.cumsum(self.col_sizes)])

    @cached_property
    def row_offsets(self):
        return np.concatenate([[0], np.cumsum(self.row_sizes)])

    @cached_property
    def size(self):
        return int(self.col_sizes.sum())

    @cached_property
    def rows(self):
        return int(self.row_sizes.sum())

    def u_slice(self, k):
        o = self.col_offsets[k]
        return slice(o, o + self.r[k])

    def t_slice(self, k):
        o = self.col_offsets[k] + self.r[k]
        return slice(o, o + self.s[k])

    def x_slice(self, k):
        o = self.col_offsets[k] + self.r[k] + self.s[k]
        return slice(o, o + self.n)

    def x_indices(self):
        starts = self.col_offsets[:-1] + np.array(self.r) + np.array(self.s)
        return (starts[:, None] + np.arange(self.n)[None, :]).ravel()


@dataclass
class StackedVector:
    """Flat decision vector ``z`` together with its block layout."""

    data: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.layout.size,):
            raise DimensionError(
                f"stacked vector needs length {self.layout.size}, got {self.data.shape}")

    @classmethod
    def zeros(cls, layout):
        return cls(np.zeros(layout.size), layout)

    @classmethod
    def from_blocks(cls, layout, u, t, x):
        z = np.zeros(layout.size)
        for k in range(layout.N):
            z[layout.u_slice(k)] = u[k]
            z[layout.t_slice(k)] = t[k]
            z[layout.x_slice(k)] = x[k]
        return cls(z, layout)

    def u(self, k):
        return self.data[self.layout.u_slice(k)]

    def t(self, k):
        return self.data[self.layout.t_slice(k)]

    def x(self, k):
        return self.data[self.layout.x_slice(k)]

    @property
    def states(self):
        """The ``N x n`` state trajectory."""
        return self.data[self.layout.x_indices()].reshape(self.layout.N, self.layout.n)


def _block_penalty(p, length, offset):
    if p is None or length == 0:
        return ()
    if isinstance(p, SeparablePenalty):
        for o, n, _ in p.terms:
            if o + n > length:
                raise DimensionError("separable penalty terms exceed their block")
        return p.shifted(offset).terms
    return ((offset, length, p),)


def internal_penalty(p):
    """Penalty on the full stacked ``z`` as seen by the solver.

    ``u_k`` carries the negated innovation, so ``rho_p`` is reflected
    (``tau -> 1 - tau`` for the asymmetric kinds).
    """
    lay = p.layout
    terms = []
    for k, st in enumerate(p.steps):
        rho_p = st.rho_p.reflected()
        terms += _block_penalty(rho_p, lay.r[k], lay.u_slice(k).start)
        terms += _block_penalty(st.rho_m, lay.s[k], lay.t_slice(k).start)
        terms += _block_penalty(st.rho_s, lay.n, lay.x_slice(k).start)
    return SeparablePenalty(tuple(terms), lay.size)


def objective(p, z):
    """``sum_k rho_p(u_k) + rho_m(t_k) + rho_s(x_k)``; ``inf`` outside a box."""
    data = z.data if isinstance(z, StackedVector) else np.asarray(z, dtype=float)
    return separable_evaluate(internal_penalty(p), data)


def validate(p, feas_tol=1e-9, rank_tol=1e-10):
    """Check dimensions, observation feasibility and per-step row rank.

    Raises :class:`DimensionError`, :class:`ModelError` (infeasible
    observation) or :class:`RankDeficiencyError`.  Returns ``True`` otherwise.
    """
    n = p.n
    for k, st in enumerate(p.steps):
        if st.G.shape != (n, n):
            raise DimensionError(f"step {k}: G has shape {st.G.shape}, expected {(n, n)}")
        if st.C.shape[0] != n:
            raise DimensionError(f"step {k}: C must have {n} rows")
        if st.H.shape[1] != n:
            raise DimensionError(f"step {k}: H must have {n} columns")
        if st.S.shape[0] != st.m or st.y.size != st.m:
            raise DimensionError(f"step {k}: S and y must have {st.m} rows")
        if not (np.all(np.isfinite(st.G)) and np.all(np.isfinite(st.C))
                and np.all(np.isfinite(st.H)) and np.all(np.isfinite(st.S))
                and np.all(np.isfinite(st.y))):
            raise ModelError(f"step {k}: non-finite model entries", step=k)
        if st.rho_s is not None:
            ps = st.rho_s
            if isinstance(ps, Penalty) and ps.kind == "box":
                if np.broadcast_to(ps.lower, (n,)).shape != (n,):
                    raise DimensionError(f"step {k}: box bounds must have length {n}")
        if st.m == 0:
            continue
        SH = np.hstack([st.S, st.H])
        resid = st.y - SH @ np.linalg.lstsq(SH, st.y, rcond=None)[0]
        if np.linalg.norm(resid) > feas_tol * (1.0 + np.linalg.norm(st.y)):
            raise ModelError(
                f"step {k}: observation is not in the range of [S H] (residual "
                f"{np.linalg.norm(resid):.3g}); exact rows conflict", step=k)
        # eliminating x_k with the process rows leaves [-H C, S, H G] (no G at the first step)
        blocks = [st.H @ st.C, st.S] + ([st.H @ st.G] if k > 0 else [])
        M = np.hstack(blocks)
        sv = np.linalg.svd(M, compute_uv=False)
        scale = max(1.0, np.linalg.norm(st.H, 2), np.linalg.norm(st.S, 2) if st.s else 0.0)
        if sv.size < st.m or sv[st.m - 1] <= rank_tol * scale:
            raise RankDeficiencyError(
                f"step {k}: measurement rows are linearly dependent given the process "
                f"noise; the constraint matrix lacks full row rank", step=k)
    return True


def factor_from_covariance(Q, rel_tol=1e-12):
    """Rectangular square-root factor ``C`` with ``C C^T = Q``.

    Eigenvalues below ``rel_tol`` times the largest are dropped, so the
    factor has exactly ``rank(Q)`` columns.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionError("covariance must be square")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ParameterError("covariance must be symmetric")
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    top = w.max(initial=0.0)
    if np.any(w < -1e-10 * max(top, 1e-300)):
        raise ParameterError("covariance must be positive semidefinite")
    keep = w > rel_tol * top if top > 0 else np.zeros(w.shape, bool)
    return V[:, keep][:, ::-1] * np.sqrt(w[keep][::-1])


# -- builders ----------------------------------------------------------------

def _per_step(value, N, name):
    if callable(value):
        return [value(k) for k in range(N)]
    if isinstance(value, (list, tuple)):
        if len(value) != N:
            raise DimensionError(f"{name}: need one entry per time step")
        return list(value)
    return [value] * N


def _extend_penalty(rho, old_len, extra_len, extra):
    """Penalty over ``old_len + extra_len`` comps; ``extra=None`` leaves the tail free."""
    if isinstance(rho, Penalty) and extra is not None and extra == rho:
        return rho
    head = rho.terms if isinstance(rho, SeparablePenalty) else ((0, old_len, rho),)
    tail = () if extra is None else ((old_len, extra_len, extra),)
    return SeparablePenalty(head + tail, old_len + extra_len)


def augment_bias(p, bias_dim, bias_to_measurement, free_bias=False, bias_penalty=None):
    """Append a constant bias ``b`` of size ``bias_dim`` to the state.

    Transitions become ``blkdiag(G_k, I)``; the first-step factor gains an
    identity block (the bias is drawn once) and later factors gain zero rows
    (the bias is held constant).  ``bias_to_measurement`` is an ``m x bias_dim``
    map added to ``H_k`` (a single array, a per-step list, or a callable of
    ``k``).  With ``free_bias`` the bias part of ``u_1`` is unpenalised;
    otherwise it gets ``bias_penalty`` (default: the step's own ``rho_p``).
    """
    if bias_dim < 1:
        raise ParameterError("bias_dim must be at least 1")
    b = int(bias_dim)
    maps = _per_step(bias_to_measurement, p.N, "bias_to_measurement")
    n = p.n
    steps = []
    for k, st in enumerate(p.steps):
        Bk = np.asarray(maps[k], dtype=float).reshape(st.m, b) if st.m else np.zeros((0, b))
        if Bk.shape != (st.m, b):
            raise DimensionError(f"step {k}: bias map must be {st.m} x {b}")
        G = np.block([[st.G, np.zeros((n, b))], [np.zeros((b, n)), np.eye(b)]])
        H = np.hstack([st.H, Bk])
        rho_s = st.rho_s
        if rho_s is not None:
            rho_s = _extend_penalty(rho_s, n, b, None)
        if k == 0:
            C = np.block([[st.C, np.zeros((n, b))], [np.zeros((b, st.r)), np.eye(b)]])
            if free_bias:
                extra = None
            elif bias_penalty is not None:
                extra = bias_penalty
            elif isinstance(st.rho_p, Penalty):
                extra = st.rho_p
            else:
                extra = Penalty.quadratic()
            rho_p = _extend_penalty(st.rho_p, st.r, b, extra)
        else:
            C = np.vstack([st.C, np.zeros((b, st.r))])
            rho_p = st.rho_p
        steps.append(replace(st, G=G, C=C, H=H, rho_p=rho_p, rho_s=rho_s))
    return Problem(np.concatenate([p.x0, np.zeros(b)]), steps)


def augment_correlated_noise(p, M, C_noise):
    """Model the innovation as an AR(1) process ``w_k = M w_{k-1} + beta_k``.

    The state becomes ``(x_k, w_k)`` with transition ``[[G, I], [0, M]]``
    and process factor ``[[0], [C_noise]]``.
    """
    M = np.asarray(M, dtype=float)
    C_noise = np.asarray(C_noise, dtype=float)
    n = p.n
    if M.shape != (n, n):
        raise DimensionError(f"noise transition must be {n} x {n}")
    if C_noise.ndim != 2 or C_noise.shape[0] != n:
        raise DimensionError(f"noise factor must have {n} rows")
    q = C_noise.shape[1]
    steps = []
    for st in p.steps:
        G = np.block([[st.G, np.eye(n)], [np.zeros((n, n)), M]])
        C = np.vstack([np.zeros((n, q)), C_noise])
        H = np.hstack([st.H, np.zeros((st.m, n))])
        rho_s = st.rho_s
        if rho_s is not None:
            rho_s = _extend_penalty(rho_s, n, n, None)
        steps.append(replace(st, G=G, C=C, H=H, rho_s=rho_s))
    return Problem(np.concatenate([p.x0, np.zeros(n)]), steps)


def add_exact_measurement(p, k, state_index, value):
    """Pin ``x_k[state_index] = value`` with a zero-variance measurement row."""
    if not 0 <= state_index < p.n:
        raise DimensionError(f"state index {state_index} out of range for n={p.n}")
    if not 0 <= k < p.N:
        raise DimensionError(f"time index {k} out of range for N={p.N}")
    st = p.steps[k]
    row = np.zeros((1, p.n))
    row[0, state_index] = 1.0
    return p.replace_step(
        k,
        H=np.vstack([st.H, row]),
        S=np.vstack([st.S, np.zeros((1, st.s))]),
        y=np.append(st.y, value),
    )
