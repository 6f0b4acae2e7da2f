"""Exact univariate proximal solvers and optimality certificates.

Every solver handles the weighted problem over distinct knots

    min_theta  (1/2n) sum_k w_k (r_k - theta_k)^2 + rho * ||theta||_F

with ``n = sum w``.  ``kkt_univariate`` audits the composite problem that
adds ``lambda * ||theta||_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from . import _kernels
from .model import (
    ComponentClass,
    ComponentFit,
    InvalidInputError,
    Kind,
    Rule,
    banded_matvec,
    difference_operator,
    empirical_norm,
    solve_banded_spd,
    spline_system,
)
from .trendfilter import TrendFilterError, dual_from_residual, tf2_solve, tfm_active_set

TOL = 1e-9
EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """An inner solver failed; ``diagnostics`` carries the state at failure."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ProxProblem:
    targets: np.ndarray
    knots: np.ndarray
    weights: np.ndarray
    rho: float
    cls: ComponentClass

    def __post_init__(self):
        r = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        t = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (r.size == t.size == w.size) or r.size == 0:
            raise InvalidInputError("targets, knots and weights must share a positive length")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise InvalidInputError("nonfinite prox input")
        if np.any(w <= 0):
            raise InvalidInputError("weights must be positive")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidInputError("knots must be strictly increasing")
        if not (math.isfinite(self.rho) and self.rho >= 0):
            raise InvalidInputError(f"rho must be finite and nonnegative, got {self.rho}")
        object.__setattr__(self, "targets", r)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def K(self) -> int:
        return self.targets.size

    @property
    def n(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def from_observations(cls_, x, r, rho, cls: ComponentClass):
        """Merge duplicate design points into a weighted problem."""
        knots, w, inverse, (rbar,) = _merge(x, r)
        return cls_(rbar, knots, w, rho, cls), inverse


def _merge(x, r):
    from .model import merge_ties

    return merge_ties(x, r)


@dataclass(frozen=True)
class ProxCertificate:
    kkt_gap: float
    dual_witness: np.ndarray
    parts: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------

def polynomial_fit(targets, knots, weights, degree: int) -> np.ndarray:
    """Weighted least-squares polynomial of the given degree at the knots."""
    r = np.asarray(targets, dtype=np.float64)
    t = np.asarray(knots, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    deg = min(degree, r.size - 1)
    if deg <= 0:
        return np.full(r.size, np.dot(w, r) / w.sum())
    center = 0.5 * (t[0] + t[-1])
    scale = max(0.5 * (t[-1] - t[0]), 1e-300)
    V = np.vander((t - center) / scale, deg + 1, increasing=True)
    sw = np.sqrt(w)
    coef, *_ = linalg.lstsq(V * sw[:, None], r * sw)
    return V @ coef


def group_shrink(theta, weights, n, lam) -> np.ndarray:
    """Multiplicative shrinkage ``(1 - lam / ||theta||_n)_+ * theta``."""
    th = np.asarray(theta, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    nrm = math.sqrt(np.dot(w, th * th) / n)
    if lam <= 0:
        return th.copy()
    if nrm <= lam:
        return np.zeros_like(th)
    return (1.0 - lam / nrm) * th


# ----------------------------------------------------------------------
# functional proximal maps
# ----------------------------------------------------------------------

def tv1_prox(prob: ProxProblem) -> np.ndarray:
    """Exact weighted TV denoising (first-order bounded variation)."""
    if prob.rho == 0.0 or prob.K == 1:
        return prob.targets.copy()
    lam = prob.n * prob.rho
    # Below this level the exact answer moves no entry by more than rounding
    # noise, and the DP breakpoints y +- lam/w collapse and cancel.
    if lam <= EPS * prob.K * np.abs(prob.targets).max() * prob.weights.min():
        return prob.targets.copy()
    return _kernels.tv1_dp(prob.targets, prob.weights, lam)


def trendfilter_prox(prob: ProxProblem, return_dual: bool = False, warm=None):
    """Trend filtering with unequal-spacing divided differences of order ``m``.

    ``m = 2`` is solved exactly by an active-set method; ``warm`` may hold
    the kink state from a previous call.  With ``return_dual`` the result is
    ``(theta, u, state)`` where ``u`` satisfies ``W (r - theta) = D'u``.
    """
    m = prob.cls.m
    r, t, w = prob.targets, prob.knots, prob.weights
    if prob.K < m + 1 or prob.rho == 0.0:
        theta = polynomial_fit(r, t, w, m - 1) if prob.K < m + 1 else r.copy()
        return (theta, np.zeros(max(prob.K - m, 0)), None) if return_dual else theta
    lam = prob.n * prob.rho
    # past the dual norm of the polynomial residual the answer is that polynomial
    poly = polynomial_fit(r, t, w, m - 1)
    u0 = dual_from_residual(w * (r - poly), t, m)
    if np.abs(u0).max() <= lam:
        return (poly, u0, None) if return_dual else poly
    try:
        if m == 2:
            theta, u, state = tf2_solve(r, t, w, lam, warm=warm)
        else:
            theta, u, state = tfm_active_set(r, t, w, lam, m, warm=warm)
    except TrendFilterError as exc:
        raise SolverError(str(exc), exc.diagnostics) from exc
    return (theta, u, state) if return_dual else theta


@dataclass(frozen=True)
class SobolevSolution:
    values: np.ndarray
    rho_prime: float
    seminorm: float
    zero_branch: bool
    rho_max: float


def _spline_solve(r, w, n, Qt, R, m, rho_prime):
    # (R + 2 n rho' Q^T W^-1 Q) gamma = Q^T r ;  theta = r - 2 n rho' W^-1 Q gamma
    G = _kernels.gram_band(Qt, 1.0 / w)
    A = G * (2.0 * n * rho_prime)
    bw = A.shape[0] - 1
    Rb = np.zeros_like(A)
    Rb[bw - (R.shape[0] - 1):] = R
    gam = solve_banded_spd(Rb + A, _kernels.band_apply(Qt, r))
    theta = r - 2.0 * n * rho_prime * _kernels.band_apply_t(Qt, gam) / w
    s = math.sqrt(max(np.dot(gam, banded_matvec(R, gam)), 0.0))
    return theta, s


def sobolev_rho_max(prob: ProxProblem) -> float:
    """Smallest ``rho`` at which the polynomial fit is optimal (dual norm)."""
    m = prob.cls.m
    r, w = prob.targets, prob.weights
    if prob.K <= m:
        return 0.0
    Qt, R = spline_system(prob.knots, m)
    G = _kernels.gram_band(Qt, 1.0 / w)
    g0 = solve_banded_spd(G, _kernels.band_apply(Qt, r))
    return math.sqrt(max(np.dot(g0, banded_matvec(R, g0)), 0.0)) / prob.n


def sobolev_prox_solution(prob: ProxProblem, rtol: float = 1e-13) -> SobolevSolution:
    """Norm-penalised smoothing spline through the squared-penalty family.

    Finds ``rho'`` with ``2 rho' s(rho') = rho`` where ``s`` is the
    roughness of the squared-penalty spline; if ``rho`` exceeds the dual
    norm of the polynomial-fit residual the answer is that polynomial.
    """
    m = prob.cls.m
    r, t, w, n = prob.targets, prob.knots, prob.weights, prob.n
    if prob.K <= m:
        theta = polynomial_fit(r, t, w, m - 1)
        return SobolevSolution(theta, 0.0, 0.0, True, 0.0)
    if prob.rho == 0.0:
        return SobolevSolution(r.copy(), 0.0, _roughness(r, t, m), False, sobolev_rho_max(prob))
    rho_max = sobolev_rho_max(prob)
    if prob.rho >= rho_max:
        return SobolevSolution(polynomial_fit(r, t, w, m - 1), math.inf, 0.0, True, rho_max)
    Qt, R = spline_system(t, m)
    if prob.rho <= 1e-12 * rho_max:
        # near interpolation s barely depends on rho', so fixed-point steps
        # settle at once and avoid bracketing at extreme log scales
        s = _roughness(r, t, m)
        for _ in range(4):
            rp = prob.rho / (2.0 * s)
            theta, s = _spline_solve(r, w, n, Qt, R, m, rp)
        return SobolevSolution(theta, prob.rho / (2.0 * s), s, False, rho_max)

    def phi(log_rp):
        rp = math.exp(log_rp)
        _, s = _spline_solve(r, w, n, Qt, R, m, rp)
        return math.log(2.0 * rp * s) - math.log(prob.rho) if s > 0 else -math.inf

    lo, hi = math.log(prob.rho) - 2.0, math.log(prob.rho) + 2.0
    flo, fhi = phi(lo), phi(hi)
    while flo > 0 and lo > -700.0:
        lo -= 4.0
        flo = phi(lo)
    while fhi < 0 and hi < 700.0:
        hi += 4.0
        fhi = phi(hi)
    if not (flo <= 0 <= fhi):
        raise SolverError(
            "could not bracket the smoothing-spline tuning parameter",
            {"rho": prob.rho, "rho_max": rho_max, "log_lo": lo, "log_hi": hi, "f_lo": flo, "f_hi": fhi},
        )
    log_rp = optimize.brentq(phi, lo, hi, xtol=1e-15, rtol=rtol, maxiter=500)
    rp = math.exp(log_rp)
    theta, s = _spline_solve(r, w, n, Qt, R, m, rp)
    return SobolevSolution(theta, rp, s, False, rho_max)


def _roughness(v, t, m):
    from .model import sobolev_seminorm

    return sobolev_seminorm(v, t, m)


def sobolev_prox(prob: ProxProblem) -> ComponentFit:
    """Sobolev prox returned as a fitted component (linear or natural cubic)."""
    sol = sobolev_prox_solution(prob)
    return ComponentFit.from_values(prob.knots, sol.values, prob.weights, prob.cls)


def functional_prox(prob: ProxProblem) -> np.ndarray:
    """Dispatch to the exact prox for the problem's class; returns knot values."""
    cls = prob.cls
    if cls.kind is Kind.BOUNDED_VARIATION:
        if cls.m == 1:
            return tv1_prox(prob)
        return trendfilter_prox(prob)
    return sobolev_prox_solution(prob).values


def composite_prox(prob: ProxProblem, lam: float) -> np.ndarray:
    """Minimiser of the prox objective plus ``lam * ||theta||_n``.

    Functional prox first, then group shrinkage; both maps preserve the
    weighted mean only when the targets are centred, so callers that need
    centring do it before calling.
    """
    g = functional_prox(prob)
    return group_shrink(g, prob.weights, prob.n, lam)


def prox_objective(prob: ProxProblem, theta, lam: float = 0.0) -> float:
    """``(1/2n) sum w (r-theta)^2 + rho ||theta||_F + lam ||theta||_n``."""
    from .model import seminorm

    th = np.asarray(theta, dtype=np.float64)
    w, n = prob.weights, prob.n
    val = 0.5 * np.dot(w, (prob.targets - th) ** 2) / n
    if prob.rho > 0:
        val += prob.rho * seminorm(th, prob.knots, prob.cls)
    if lam > 0:
        val += lam * math.sqrt(np.dot(w, th * th) / n)
    return float(val)


# ----------------------------------------------------------------------
# certificates
# ----------------------------------------------------------------------

def _bv_witness(v, t, w, n, m):
    # y with  n W^-1 D^T y = v - poly, poly being the part D^T cannot reach
    poly = polynomial_fit(v, t, w, m - 1)
    y = dual_from_residual(w * (v - poly) / n, t, m)
    return difference_operator(t, m), y, poly


def _subgradient_violation(prob: ProxProblem, theta, v):
    """Violation of ``v in rho * subdiff ||theta||_F`` (n-geometry).

    Returns ``(violation, witness, parts)``.
    """
    rho = prob.rho
    t, w, n, m = prob.knots, prob.weights, prob.n, prob.cls.m
    if prob.K <= m or rho == 0.0:
        # no penalty acts on the knot values
        stat = float(np.abs(v).max())
        return stat, np.zeros(0), {"stationarity": stat}
    if prob.cls.kind is Kind.BOUNDED_VARIATION:
        D, y, resid = _bv_witness(v, t, w, n, m)
        Dth = _kernels.band_apply(D, theta)
        noise = 8.0 * EPS * _kernels.band_apply(np.abs(D), np.abs(theta))
        stat = float(np.abs(resid).max())
        box = float(max(np.abs(y).max() - rho, 0.0))
        slack = rho * np.maximum(np.abs(Dth) - noise, 0.0) - y * Dth
        comp = float(max(slack.sum(), 0.0))
        parts = {"stationarity": stat, "box": box, "complementarity": comp}
        return max(stat, box, comp), y, parts
    # Q^T coincides with the divided-difference operator, so the witness g
    # with n W^-1 Q g = v comes from the same cumulative-sum recursion.
    Qt, R = spline_system(t, m)
    _, g, resid = _bv_witness(v, t, w, n, m)
    stat = float(np.abs(resid).max())
    dn = math.sqrt(max(np.dot(g, banded_matvec(R, g)), 0.0))
    box = float(max(dn - rho, 0.0))
    qth = _kernels.band_apply(Qt, theta)
    s = _roughness(theta, t, m)
    comp = float(max(rho * s - np.dot(g, qth), 0.0))
    parts = {"stationarity": stat, "dual_norm": box, "complementarity": comp}
    return max(stat, box, comp), g, parts


def kkt_univariate(prob: ProxProblem, candidate, lam: float = 0.0) -> ProxCertificate:
    """Audit ``candidate`` for ``(1/2)||r-g||_n^2 + rho||g||_F + lam||g||_n``.

    Stationarity is checked in the empirical-norm geometry, where the
    gradient of the loss is ``theta - r``.  A nonzero candidate gets the
    unique group subgradient; a zero candidate gets a functional-prox
    witness whose membership in the seminorm's subdifferential is then
    verified independently.
    """
    th = np.asarray(candidate, dtype=np.float64).reshape(-1)
    if th.size != prob.K:
        raise InvalidInputError("candidate length differs from the problem")
    w, n = prob.weights, prob.n
    e = prob.targets - th
    nrm = math.sqrt(np.dot(w, th * th) / n)
    if nrm > 0:
        v = e - (lam / nrm) * th if lam > 0 else e
        gap, wit, parts = _subgradient_violation(prob, th, v)
        return ProxCertificate(float(gap), wit, parts)
    # zero candidate: pick a = r - prox_F(r) and check ||r - a||_n <= lam
    gtil = functional_prox(prob)
    a = e - gtil
    gap, wit, parts = _subgradient_violation(prob, th, a)
    grp = max(math.sqrt(np.dot(w, gtil * gtil) / n) - lam, 0.0)
    parts = dict(parts, group_threshold=float(grp))
    return ProxCertificate(float(max(gap, grp)), wit, parts)
