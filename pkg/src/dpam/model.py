"""Data model, norms and function representations for additive fits."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import _kernels


class InvalidInputError(ValueError):
    """Raised when inputs violate a documented precondition."""


class Kind(str, enum.Enum):
    BOUNDED_VARIATION = "bv"
    SOBOLEV_L2 = "sob"


class Rule(str, enum.Enum):
    STEP = "step_right_continuous"
    LINEAR = "piecewise_linear"
    NATURAL_SPLINE = "natural_spline"


@dataclass(frozen=True)
class ComponentClass:
    """Function class of one additive component.

    ``kind`` is bounded variation of order ``m`` (seminorm TV of the
    ``(m-1)``-th derivative) or L2-Sobolev of order ``m`` (seminorm
    ``||g^(m)||_L2``).
    """

    kind: Kind
    m: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if int(self.m) != self.m or self.m < 1:
            raise InvalidInputError(f"smoothness order must be an integer >= 1, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        if self.kind is Kind.SOBOLEV_L2 and self.m not in (1, 2):
            raise InvalidInputError("Sobolev components support m in {1, 2}")

    @property
    def r(self) -> int:
        return 1 if self.kind is Kind.BOUNDED_VARIATION else 2

    def beta(self) -> float:
        return 1.0 / self.m

    def tau(self) -> float:
        return 1.0 / (2 * self.m + 1 - 2.0 / self.r)

    @property
    def approximate(self) -> bool:
        # trend filtering stands in for the exact spline space when m >= 3
        return self.kind is Kind.BOUNDED_VARIATION and self.m >= 3

    @property
    def label(self) -> str:
        return f"{self.kind.value}{self.m}"

    @classmethod
    def parse(cls, text: str) -> "ComponentClass":
        """Parse labels such as ``bv1``, ``bv2``, ``sob2``."""
        s = text.strip().lower()
        for kind in (Kind.SOBOLEV_L2, Kind.BOUNDED_VARIATION):
            if s.startswith(kind.value) and s[len(kind.value):].isdigit():
                return cls(kind, int(s[len(kind.value):]))
        raise InvalidInputError(f"unknown component class {text!r} (expected bv<m> or sob<m>)")


BV1 = ComponentClass(Kind.BOUNDED_VARIATION, 1)
BV2 = ComponentClass(Kind.BOUNDED_VARIATION, 2)
SOB1 = ComponentClass(Kind.SOBOLEV_L2, 1)
SOB2 = ComponentClass(Kind.SOBOLEV_L2, 2)


@dataclass(frozen=True)
class Dataset:
    """Covariates in ``[0, 1]`` (``n x p``) and responses (length ``n``)."""

    x: np.ndarray
    y: np.ndarray
    column_names: Optional[tuple] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InvalidInputError("x must be a 2d array")
        n, p = x.shape
        if n < 2:
            raise InvalidInputError(f"need at least 2 observations, got {n}")
        if y.shape[0] != n:
            raise InvalidInputError(f"y has length {y.shape[0]} but x has {n} rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInputError("x and y must be finite")
        bad = np.argwhere((x < 0.0) | (x > 1.0))
        if bad.size:
            i, j = bad[0]
            raise InvalidInputError(f"covariate entry x[{i}, {j}] = {x[i, j]!r} is outside [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != p:
                raise InvalidInputError(f"{len(names)} column names for {p} covariates")
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def merge_ties(x, *targets):
    """Collapse duplicate design points.

    Returns ``(knots, weights, inverse, means)`` where ``knots`` are the
    sorted distinct values of ``x``, ``weights`` their multiplicities,
    ``inverse`` maps each observation to its knot, and ``means`` holds the
    per-knot averages of every array in ``targets``.
    """
    x = np.asarray(x, dtype=np.float64)
    knots, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    w = counts.astype(np.float64)
    means = [np.bincount(inverse, weights=np.asarray(t, dtype=np.float64), minlength=knots.size) / w
             for t in targets]
    return knots, w, inverse, means


# ----------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------

def empirical_norm(values, multiplicities=None) -> float:
    """Root mean square ``sqrt(n^-1 sum w_i v_i^2)`` with ``n = sum w``."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("empirical_norm of an empty vector")
    if multiplicities is not None:
        w = np.asarray(multiplicities, dtype=np.float64).reshape(-1)
        if w.shape != v.shape:
            raise InvalidInputError("values and multiplicities differ in length")
        if np.any(w <= 0):
            raise InvalidInputError("multiplicities must be positive")
    # scale first so tiny or huge entries do not under/overflow when squared
    s = float(np.abs(v).max())
    if s == 0.0 or not math.isfinite(s):
        return s
    u = v / s
    if multiplicities is None:
        return s * float(np.sqrt(np.mean(u * u)))
    return s * float(np.sqrt(np.dot(w, u * u) / w.sum()))


def _check_knots(values, knots):
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    t = np.asarray(knots, dtype=np.float64).reshape(-1)
    if v.shape != t.shape:
        raise InvalidInputError(f"{v.size} values for {t.size} knots")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise InvalidInputError("knots must be strictly increasing")
    return v, t


def difference_operator(knots, m: int) -> np.ndarray:
    """Row-offset band of the order-``m`` divided-difference operator.

    Row ``i`` maps values on ``knots[i:i+m+1]`` to
    ``(m-1)! (t_{i+m} - t_i) f[t_i, ..., t_{i+m}]``: plain first
    differences for ``m = 1``, differences of consecutive slopes for
    ``m = 2``.
    """
    t = np.asarray(knots, dtype=np.float64)
    return _kernels.divdiff_band(t, m)


def tv_seminorm(values, knots, m: int) -> float:
    """Total variation of the ``(m-1)``-th derivative on the knot representation.

    Exact for ``m <= 2`` (step / piecewise-linear interpolant); the
    divided-difference analogue for ``m >= 3``.  Inputs with fewer than
    ``m + 1`` knots lie in the null space and give 0.
    """
    v, t = _check_knots(values, knots)
    if v.size < m + 1:
        return 0.0
    if m == 1:
        return float(np.abs(np.diff(v)).sum())
    D = difference_operator(t, m)
    return float(np.abs(_kernels.band_apply(D, v)).sum())


def spline_system(knots, m: int):
    """Banded factors of the Sobolev roughness form ``theta' Q R^-1 Q' theta``.

    Returns ``(Qt, R)`` where ``Qt`` is the row-offset band of ``Q^T``
    (``K-m`` rows) and ``R`` the upper-banded storage of ``R``.  For
    ``m = 1`` the form equals ``sum (dtheta)^2 / h`` (linear interpolant);
    for ``m = 2`` it is the natural cubic spline energy ``int g''^2``.
    """
    t = np.asarray(knots, dtype=np.float64)
    h = np.diff(t)
    if m == 1:
        Qt = np.column_stack([-np.ones_like(h), np.ones_like(h)])
        R = h[None, :].copy()
        return Qt, R
    if m == 2:
        inv = 1.0 / h
        Qt = np.column_stack([inv[:-1], -inv[:-1] - inv[1:], inv[1:]])
        r = h.size - 1
        R = np.zeros((2, r))
        R[1] = (h[:-1] + h[1:]) / 3.0
        R[0, 1:] = h[1:-1] / 6.0
        return Qt, R
    raise InvalidInputError("Sobolev spline system only for m in {1, 2}")


def banded_matvec(ab, x):
    """``M @ x`` for symmetric ``M`` in upper LAPACK band storage."""
    bw = ab.shape[0] - 1
    out = ab[bw] * x
    for k in range(1, bw + 1):
        band = ab[bw - k, k:]
        out[:-k] += band * x[k:]
        out[k:] += band * x[:-k]
    return out


def solve_banded_spd(ab, b):
    """``solveh_banded`` that also accepts 0x0 and 1x1 systems."""
    size = ab.shape[1]
    if size == 0:
        return np.zeros(0)
    if size == 1:
        return np.asarray(b, dtype=np.float64) / ab[-1, 0]
    return linalg.solveh_banded(ab, b)


def natural_spline_curvature(values, knots) -> np.ndarray:
    """Second derivatives at the knots of the natural cubic interpolant."""
    v, t = _check_knots(values, knots)
    gam = np.zeros(v.size)
    if v.size >= 3:
        Qt, R = spline_system(t, 2)
        gam[1:-1] = solve_banded_spd(R, _kernels.band_apply(Qt, v))
    return gam


def sobolev_seminorm(values, knots, m: int) -> float:
    """``||g^(m)||_L2`` of the natural spline of order ``2m-1`` through the values."""
    v, t = _check_knots(values, knots)
    if v.size < m + 1:
        return 0.0
    Qt, R = spline_system(t, m)
    qv = _kernels.band_apply(Qt, v)
    if m == 1:
        gam = qv / R[0]
    else:
        gam = solve_banded_spd(R, qv)
    return float(np.sqrt(max(np.dot(gam, banded_matvec(R, gam)), 0.0)))


def seminorm(values, knots, cls: ComponentClass) -> float:
    """Functional seminorm of a component given its knot values."""
    if cls.kind is Kind.BOUNDED_VARIATION:
        return tv_seminorm(values, knots, cls.m)
    return sobolev_seminorm(values, knots, cls.m)


# ----------------------------------------------------------------------
# fitted functions
# ----------------------------------------------------------------------

def rule_for(cls: ComponentClass) -> Rule:
    if cls.kind is Kind.BOUNDED_VARIATION:
        return Rule.STEP if cls.m == 1 else Rule.LINEAR
    return Rule.LINEAR if cls.m == 1 else Rule.NATURAL_SPLINE


@dataclass(frozen=True)
class ComponentFit:
    """One fitted component on the distinct design points of its covariate."""

    knots: np.ndarray
    values: np.ndarray
    rule: Rule
    multiplicities: np.ndarray
    seminorm_value: float
    empnorm_value: float
    cls: ComponentClass = BV1
    curvature: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.array(self.knots, dtype=np.float64).reshape(-1)
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        w = np.array(self.multiplicities, dtype=np.float64).reshape(-1)
        _check_knots(v, t)
        if w.shape != t.shape or np.any(w <= 0):
            raise InvalidInputError("multiplicities must be positive, one per knot")
        if self.seminorm_value < 0 or self.empnorm_value < 0:
            raise InvalidInputError("norm values must be nonnegative")
        rule = Rule(self.rule)
        for a in (t, v, w):
            a.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "multiplicities", w)
        object.__setattr__(self, "rule", rule)
        if rule is Rule.NATURAL_SPLINE:
            c = natural_spline_curvature(v, t) if self.curvature is None else np.array(self.curvature, dtype=np.float64)
            c.setflags(write=False)
            object.__setattr__(self, "curvature", c)

    @classmethod
    def from_values(cls_, knots, values, multiplicities, cls: ComponentClass, rule: Rule | None = None):
        """Build a fit and compute its seminorm and empirical norm."""
        values = np.asarray(values, dtype=np.float64)
        return cls_(
            knots=knots,
            values=values,
            rule=rule_for(cls) if rule is None else rule,
            multiplicities=multiplicities,
            seminorm_value=seminorm(values, knots, cls),
            empnorm_value=empirical_norm(values, multiplicities),
            cls=cls,
        )

    def __call__(self, xq):
        return evaluate_component(self, xq)


def evaluate_component(fit: ComponentFit, xq):
    """Evaluate a fitted component at scalar or array ``xq``.

    Step fits are right-continuous and take the first value to the left of
    the first knot; linear fits interpolate and extend flat; natural
    splines extend linearly.
    """
    xa = np.asarray(xq, dtype=np.float64)
    t, v = fit.knots, fit.values
    if fit.rule is Rule.STEP:
        idx = np.searchsorted(t, xa, side="right") - 1
        out = v[np.clip(idx, 0, t.size - 1)]
    elif fit.rule is Rule.LINEAR or t.size < 3:
        out = np.interp(xa, t, v) if t.size > 1 else np.full(xa.shape, v[0])
        if fit.rule is Rule.NATURAL_SPLINE and t.size == 2:
            s = (v[1] - v[0]) / (t[1] - t[0])
            out = v[0] + s * (xa - t[0])
    else:
        out = _eval_natural_spline(t, v, fit.curvature, xa)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _eval_natural_spline(t, v, c, xa):
    h = np.diff(t)
    x = np.atleast_1d(xa)
    i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
    hi = h[i]
    a = (t[i + 1] - x) / hi
    b = (x - t[i]) / hi
    inner = a * v[i] + b * v[i + 1] + ((a ** 3 - a) * c[i] + (b ** 3 - b) * c[i + 1]) * hi * hi / 6.0
    d0 = (v[1] - v[0]) / h[0] - h[0] * c[1] / 6.0
    d1 = (v[-1] - v[-2]) / h[-1] + h[-1] * c[-2] / 6.0
    out = np.where(x < t[0], v[0] + d0 * (x - t[0]), inner)
    out = np.where(x > t[-1], v[-1] + d1 * (x - t[-1]), out)
    return out.reshape(np.shape(xa))


@dataclass(frozen=True)
class AdditiveFit:
    """Intercept plus one (possibly null) fitted component per covariate."""

    intercept: float
    components: tuple
    objective_trace: tuple = ()
    sweeps: int = 0
    converged: bool = False
    plan_snapshot: object = None
    column_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "objective_trace", tuple(float(o) for o in self.objective_trace))
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def active(self) -> list:
        return [j for j, c in enumerate(self.components) if c is not None]

    def replace(self, **kw) -> "AdditiveFit":
        return dataclasses.replace(self, **kw)


def evaluate_model(fit: AdditiveFit, xrow) -> float:
    """``intercept + sum_j g_j(xrow[j])``; null components contribute 0."""
    x = np.asarray(xrow, dtype=np.float64).reshape(-1)
    if x.size != fit.p:
        raise InvalidInputError(f"row has {x.size} entries, model has {fit.p} components")
    total = fit.intercept
    for j, comp in enumerate(fit.components):
        if comp is not None:
            total += evaluate_component(comp, x[j])
    return float(total)


def fitted_matrix(fit: AdditiveFit, x) -> np.ndarray:
    """Column ``j`` holds component ``j`` evaluated at ``x[:, j]``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != fit.p:
        raise InvalidInputError(f"x has {x.shape[1]} columns, model has {fit.p} components")
    out = np.zeros(x.shape)
    for j, comp in enumerate(fit.components):
        if comp is not None:
            out[:, j] = evaluate_component(comp, x[:, j])
    return out


def null_fit(p: int, intercept: float = 0.0, column_names: Sequence[str] | None = None) -> AdditiveFit:
    return AdditiveFit(intercept=intercept, components=(None,) * p,
                       column_names=None if column_names is None else tuple(column_names))
