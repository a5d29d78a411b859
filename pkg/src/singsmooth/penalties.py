"""Piecewise linear-quadratic penalties and their proximal operators.

Every penalty is separable: it is applied elementwise to a vector and the
values are summed.  ``prox`` uses closed forms; ``prox_conjugate`` goes
through the Moreau decomposition so conjugates are never formed.

The Huber-type losses (``huber``, ``quantile_huber``, ``hubnik``) are all
Moreau envelopes with unit parameter of a scaled nonsmooth base loss::

    huber(x)          = min_y  kappa*|y|            + (x - y)**2 / 2
    quantile_huber(x) = min_y  2*kappa*q_tau(y)     + (x - y)**2 / 2
    hubnik(x)         = min_y  kappa*vapnik_eps(y)  + (x - y)**2 / 2

so their prox with step ``a`` is ``z/(1+a) + a/(1+a) * prox_{(1+a)g}(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, ParameterError

KINDS = (
    "quadratic",
    "l1",
    "quantile",
    "huber",
    "quantile_huber",
    "vapnik",
    "hubnik",
    "elastic_net",
    "box",
)

_ASYMMETRIC = ("quantile", "quantile_huber")


def _as_float(x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(float)
    return x


@dataclass(frozen=True, eq=False)
class Penalty:
    """One PLQ loss (or box indicator), applied elementwise as ``scale * rho``.

    Use the constructors (``Penalty.huber(1.0)`` ...) rather than the raw
    initializer.  ``lower``/``upper`` are only meaningful for ``box`` and may
    be scalars or vectors; infinite entries mean no bound.
    """

    kind: str
    scale: float = 1.0
    tau: float | None = None
    kappa: float | None = None
    epsilon: float | None = None
    lower: np.ndarray | float | None = None
    upper: np.ndarray | float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown penalty kind {self.kind!r}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ParameterError("penalty scale must be positive and finite")
        if self.kind in ("quantile", "quantile_huber"):
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise ParameterError("tau must lie in (0, 1)")
        if self.kind in ("huber", "quantile_huber", "hubnik"):
            if self.kappa is None or not self.kappa > 0:
                raise ParameterError("kappa must be positive")
        if self.kind in ("vapnik", "hubnik"):
            if self.epsilon is None or not self.epsilon >= 0:
                raise ParameterError("epsilon must be nonnegative")
        if self.kind == "box":
            lo = np.asarray(-np.inf if self.lower is None else self.lower, dtype=float)
            hi = np.asarray(np.inf if self.upper is None else self.upper, dtype=float)
            if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
                raise ParameterError("box bounds may not be NaN")
            if np.any(lo > hi):
                raise ParameterError("box requires lower <= upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    # -- constructors -----------------------------------------------------
    @classmethod
    def quadratic(cls, scale=1.0):
        return cls("quadratic", scale)

    @classmethod
    def l1(cls, scale=1.0):
        return cls("l1", scale)

    @classmethod
    def quantile(cls, tau, scale=1.0):
        return cls("quantile", scale, tau=tau)

    @classmethod
    def huber(cls, kappa, scale=1.0):
        return cls("huber", scale, kappa=kappa)

    @classmethod
    def quantile_huber(cls, tau, kappa, scale=1.0):
        return cls("quantile_huber", scale, tau=tau, kappa=kappa)

    @classmethod
    def vapnik(cls, epsilon, scale=1.0):
        return cls("vapnik", scale, epsilon=epsilon)

    @classmethod
    def hubnik(cls, epsilon, kappa, scale=1.0):
        return cls("hubnik", scale, epsilon=epsilon, kappa=kappa)

    @classmethod
    def elastic_net(cls, scale=1.0):
        return cls("elastic_net", scale)

    @classmethod
    def box(cls, lower=-np.inf, upper=np.inf):
        return cls("box", 1.0, lower=lower, upper=upper)

    # -- properties ---------------------------------------------------------
    @property
    def is_indicator(self):
        return self.kind == "box"

    @property
    def symmetric(self):
        if self.kind in _ASYMMETRIC:
            return self.tau == 0.5
        if self.kind == "box":
            return bool(np.all(self.lower == -self.upper))
        return True

    def reflected(self):
        """Return the penalty ``x -> self(-x)``."""
        if self.kind in _ASYMMETRIC:
            return Penalty(self.kind, self.scale, tau=1.0 - self.tau, kappa=self.kappa)
        if self.kind == "box":
            return Penalty.box(-self.upper, -self.lower)
        return self

    def _key(self):
        return (self.kind, self.scale, self.tau, self.kappa, self.epsilon)

    def __eq__(self, other):
        if not isinstance(other, Penalty):
            return NotImplemented
        if self._key() != other._key():
            return False
        if self.kind == "box":
            return (np.array_equal(self.lower, other.lower)
                    and np.array_equal(self.upper, other.upper))
        return True

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        params = [f"{k}={getattr(self, k)!r}" for k in ("tau", "kappa", "epsilon")
                  if getattr(self, k) is not None]
        if self.kind == "box":
            params = [f"lower={self.lower.tolist()}", f"upper={self.upper.tolist()}"]
        elif self.scale != 1.0:
            params.append(f"scale={self.scale!r}")
        return f"Penalty.{self.kind}({', '.join(params)})"

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "box":
            d["lower"] = _bound_to_json(self.lower)
            d["upper"] = _bound_to_json(self.upper)
            return d
        for k in ("tau", "kappa", "epsilon"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            kind = d.pop("kind").lower().replace("-", "_")
        except KeyError:
            raise ParameterError("penalty description needs a 'kind'") from None
        kind = {"elasticnet": "elastic_net", "quantilehuber": "quantile_huber",
                "boxindicator": "box", "huberized_vapnik": "hubnik"}.get(kind, kind)
        if kind == "box":
            lo = _bound_from_json(d.pop("lower", None), -np.inf)
            hi = _bound_from_json(d.pop("upper", None), np.inf)
            extra = set(d) - {"scale"}
            if extra:
                raise ParameterError(f"unexpected fields for box: {sorted(extra)}")
            return cls.box(lo, hi)
        allowed = {"scale", "tau", "kappa", "epsilon"}
        extra = set(d) - allowed
        if extra:
            raise ParameterError(f"unexpected penalty fields: {sorted(extra)}")
        return cls(kind, float(d.get("scale", 1.0)), tau=d.get("tau"),
                   kappa=d.get("kappa"), epsilon=d.get("epsilon"))


def _bound_to_json(b):
    b = np.asarray(b, dtype=float)
    conv = lambda v: None if not np.isfinite(v) else float(v)  # noqa: E731
    if b.ndim == 0:
        return conv(b)
    return [conv(v) for v in b]


def _bound_from_json(b, default):
    if b is None:
        return default
    if isinstance(b, list):
        return np.array([default if v is None else v for v in b], dtype=float)
    return float(b)


# -- elementwise kernels (step a already includes the scale) ------------------

def _soft(z, a):
    return np.sign(z) * np.maximum(np.abs(z) - a, 0.0)


def _prox_quantile(z, a, tau):
    return np.where(z > a * (1.0 - tau), z - a * (1.0 - tau),
                    np.where(z < -a * tau, z + a * tau, 0.0))


def _prox_vapnik(z, a, eps):
    shrunk = np.sign(z) * np.maximum(np.abs(z) - a, eps)
    return np.where(np.abs(z) <= eps, z, shrunk)


def _check_box_shape(p, z):
    try:
        np.broadcast_shapes(np.shape(p.lower), np.shape(z))
        np.broadcast_shapes(np.shape(p.upper), np.shape(z))
    except ValueError:
        raise DimensionError(
            f"box bounds of shape {np.shape(p.lower)} do not fit a vector of shape {np.shape(z)}"
        ) from None


def values(p, x):
    """Elementwise penalty values ``scale * rho(x_i)`` (0 or ``inf`` for boxes)."""
    x = _as_float(x)
    k = p.kind
    if k == "box":
        _check_box_shape(p, x)
        inside = (x >= p.lower) & (x <= p.upper)
        return np.where(inside, 0.0, np.inf).astype(x.dtype)
    ax = np.abs(x)
    if k == "quadratic":
        v = 0.5 * x * x
    elif k == "l1":
        v = ax
    elif k == "quantile":
        v = np.where(x >= 0, (1.0 - p.tau) * x, -p.tau * x)
    elif k == "huber":
        kap = p.kappa
        v = np.where(ax <= kap, 0.5 * x * x, kap * ax - 0.5 * kap * kap)
    elif k == "quantile_huber":
        hi = 2.0 * p.kappa * (1.0 - p.tau)
        lo = 2.0 * p.kappa * p.tau
        v = np.where(x > hi, hi * x - 0.5 * hi * hi,
                     np.where(x < -lo, -lo * x - 0.5 * lo * lo, 0.5 * x * x))
    elif k == "vapnik":
        v = np.maximum(ax - p.epsilon, 0.0)
    elif k == "hubnik":
        d = np.maximum(ax - p.epsilon, 0.0)
        kap = p.kappa
        v = np.where(d <= kap, 0.5 * d * d, kap * d - 0.5 * kap * kap)
    elif k == "elastic_net":
        v = x * x + ax
    return p.scale * v


def evaluate(p, x):
    """Return ``scale * sum_i rho(x_i)``; boxes give 0 or ``inf``."""
    return np.sum(values(p, x))


def prox(p, alpha, z):
    """Proximal operator of ``alpha * p`` at ``z``, elementwise."""
    if not alpha > 0:
        raise ParameterError("prox step must be positive")
    z = _as_float(z)
    k = p.kind
    if k == "box":
        _check_box_shape(p, z)
        return np.clip(z, p.lower, p.upper)
    a = alpha * p.scale
    if k == "quadratic":
        return z / (1.0 + a)
    if k == "l1":
        return _soft(z, a)
    if k == "quantile":
        return _prox_quantile(z, a, p.tau)
    if k == "vapnik":
        return _prox_vapnik(z, a, p.epsilon)
    if k == "elastic_net":
        c = 1.0 + 2.0 * a
        return _soft(z / c, a / c)
    # Moreau-envelope family: z/(1+a) + a/(1+a) * prox_{(1+a) g}(z)
    w = a / (1.0 + a)
    big = (1.0 + a) * p.kappa
    if k == "huber":
        inner = _soft(z, big)
    elif k == "quantile_huber":
        inner = _prox_quantile(z, 2.0 * big, p.tau)
    else:  # hubnik
        inner = _prox_vapnik(z, big, p.epsilon)
    return (1.0 - w) * z + w * inner


def prox_conjugate(p, sigma, zeta):
    """Prox of ``sigma * p*`` at ``zeta`` via the extended Moreau decomposition."""
    if not sigma > 0:
        raise ParameterError("conjugate prox step must be positive")
    zeta = _as_float(zeta)
    return zeta - sigma * prox(p, 1.0 / sigma, zeta / sigma)


def subgradient_interval(p, x, tol=1e-9):
    """Elementwise subdifferential ``[lo, hi]`` of ``p`` at ``x``.

    Points within ``tol`` of a kink get the full interval there.
    """
    x = _as_float(x)
    k = p.kind
    if k == "box":
        _check_box_shape(p, x)
        lo = np.where(x <= p.lower + tol, -np.inf, 0.0)
        hi = np.where(x >= p.upper - tol, np.inf, 0.0)
        outside = (x < p.lower - tol) | (x > p.upper + tol)
        lo = np.where(outside, np.nan, lo)
        hi = np.where(outside, np.nan, hi)
        return np.broadcast_to(lo, x.shape).copy(), np.broadcast_to(hi, x.shape).copy()

    def kinked(left, right, at):
        # slope `left` below `at`, `right` above, hull at the kink
        lo = np.where(x > at + tol, right, left)
        hi = np.where(x < at - tol, left, right)
        return lo, hi

    if k == "quadratic":
        lo = hi = x
    elif k == "l1":
        lo, hi = kinked(-1.0, 1.0, 0.0)
    elif k == "quantile":
        lo, hi = kinked(-p.tau, 1.0 - p.tau, 0.0)
    elif k == "huber":
        lo = hi = np.clip(x, -p.kappa, p.kappa)
    elif k == "quantile_huber":
        lo = hi = np.clip(x, -2.0 * p.kappa * p.tau, 2.0 * p.kappa * (1.0 - p.tau))
    elif k == "vapnik":
        eps = p.epsilon
        lo = np.where(x > eps + tol, 1.0, np.where(x >= -eps + tol, 0.0, -1.0))
        hi = np.where(x < -eps - tol, -1.0, np.where(x <= eps - tol, 0.0, 1.0))
    elif k == "hubnik":
        lo = hi = np.sign(x) * np.clip(np.abs(x) - p.epsilon, 0.0, p.kappa)
    elif k == "elastic_net":
        lo, hi = kinked(-1.0, 1.0, 0.0)
        lo, hi = lo + 2.0 * x, hi + 2.0 * x
    lo = np.broadcast_to(lo, x.shape) * p.scale
    hi = np.broadcast_to(hi, x.shape) * p.scale
    return lo, hi


# -- separable sums -------------------------------------------------------------

@dataclass(frozen=True)
class SeparablePenalty:
    """Blockwise penalty: each ``(offset, length, penalty)`` term acts on one slice.

    Coordinates not covered by any term carry zero penalty.
    """

    terms: tuple = ()
    size: int | None = None

    def __post_init__(self):
        terms = tuple((int(o), int(n), p) for o, n, p in self.terms)
        object.__setattr__(self, "terms", terms)
        spans = sorted((o, o + n) for o, n, _ in terms if n > 0)
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1:
                raise DimensionError("separable penalty blocks overlap")
        for o, n, p in terms:
            if o < 0 or n < 0:
                raise DimensionError("negative block offset or length")
            if self.size is not None and o + n > self.size:
                raise DimensionError("penalty block runs past the end of the vector")
            if p.kind == "box":
                _check_box_shape(p, np.empty(n))

    @classmethod
    def single(cls, penalty, size):
        return cls(((0, size, penalty),), size)

    def _check(self, z):
        z = _as_float(z)
        if z.ndim != 1:
            raise DimensionError("separable penalties act on flat vectors")
        if self.size is not None and z.size != self.size:
            raise DimensionError(f"layout expects length {self.size}, got {z.size}")
        if self._end > z.size:
            raise DimensionError("penalty layout longer than vector")
        return z

    @cached_property
    def _end(self):
        return max((o + n for o, n, _ in self.terms), default=0)

    @cached_property
    def groups(self):
        """Terms merged by identical penalty: list of ``(indices, penalty)``.

        Box terms are merged into a single box with gathered bound vectors.
        """
        by_key = {}
        box_idx, box_lo, box_hi = [], [], []
        for o, n, p in self.terms:
            if n == 0:
                continue
            idx = np.arange(o, o + n)
            if p.kind == "box":
                box_idx.append(idx)
                box_lo.append(np.broadcast_to(p.lower, (n,)))
                box_hi.append(np.broadcast_to(p.upper, (n,)))
            else:
                by_key.setdefault(p, []).append(idx)
        out = [(np.concatenate(ix), p) for p, ix in by_key.items()]
        if box_idx:
            out.append((np.concatenate(box_idx),
                        Penalty.box(np.concatenate(box_lo), np.concatenate(box_hi))))
        return out

    def reflected(self):
        return SeparablePenalty(tuple((o, n, p.reflected()) for o, n, p in self.terms), self.size)

    def shifted(self, offset):
        return SeparablePenalty(tuple((o + offset, n, p) for o, n, p in self.terms))


def apply_separable_prox(sp, alpha, z):
    """Blockwise prox; uncovered coordinates are returned unchanged."""
    z = sp._check(z)
    out = z.copy()
    for idx, p in sp.groups:
        out[idx] = prox(p, alpha, z[idx])
    return out


def separable_prox_conjugate(sp, sigma, zeta):
    """Blockwise conjugate prox; uncovered coordinates map to 0 (conjugate of 0)."""
    zeta = sp._check(zeta)
    out = np.zeros_like(zeta)
    for idx, p in sp.groups:
        out[idx] = prox_conjugate(p, sigma, zeta[idx])
    return out


def separable_evaluate(sp, z):
    z = sp._check(z)
    return float(sum(evaluate(p, z[idx]) for idx, p in sp.groups))


def separable_subgradient(sp, z, tol=1e-9):
    """Elementwise subdifferential intervals of a separable penalty."""
    z = sp._check(z)
    lo = np.zeros_like(z)
    hi = np.zeros_like(z)
    for idx, p in sp.groups:
        lo[idx], hi[idx] = subgradient_interval(p, z[idx], tol)
    return lo, hi
