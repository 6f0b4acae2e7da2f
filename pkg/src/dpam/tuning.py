"""Penalty schedules derived from the entropy rates of the component classes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .model import ComponentClass, Dataset, InvalidInputError
from .solver import PenaltyPlan


@dataclass(frozen=True)
class RateParams:
    q: float
    beta0: float
    B0star: float
    n: int
    p: int
    epsilon: float
    nu: float
    gamma_q: float
    w_q: float
    gamma_star: float
    w_star: float
    MF: Optional[float] = None
    Mq: Optional[float] = None

    @property
    def p_over_eps(self) -> float:
        return self.p / self.epsilon


def _check_rate_args(q, beta0, B0star, n):
    if not (0.0 <= q <= 1.0):
        raise InvalidInputError(f"q must lie in [0, 1], got {q}")
    if not (0.0 < beta0 < 2.0):
        raise InvalidInputError(f"beta0 must lie in (0, 2), got {beta0}")
    if not B0star > 0:
        raise InvalidInputError(f"B0star must be positive, got {B0star}")
    if not n >= 1:
        raise InvalidInputError(f"n must be at least 1, got {n}")


def class_exponents(cls: ComponentClass):
    """``(beta, tau)`` with ``beta = 1/m`` and ``tau = 1/(2m + 1 - 2/r)``."""
    return cls.beta(), cls.tau()


def nu_n(n, p, epsilon) -> float:
    """``sqrt(log(p / epsilon) / n)``."""
    if not n >= 1 or not p >= 1:
        raise InvalidInputError("n and p must be at least 1")
    if not (0.0 < epsilon < 1.0):
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon}")
    ratio = p / epsilon
    if ratio <= 1.0:
        raise InvalidInputError(f"p/epsilon must exceed 1, got {ratio}")
    return math.sqrt(math.log(ratio) / n)


def gamma_homogeneous(q, beta0, B0star, n):
    """``(gamma_q, w_q)`` balancing the entropy and sparsity rates."""
    _check_rate_args(q, beta0, B0star, n)
    e = 2.0 + beta0 * (1.0 - q)
    gamma = B0star ** (2.0 / e) * n ** (-1.0 / e)
    return gamma, gamma ** (1.0 - q)


def rates_scale_adaptive(q, beta0, B0star, n, p, epsilon) -> RateParams:
    """Capped schedules that need no knowledge of the truth's scale."""
    nu = nu_n(n, p, epsilon)
    gamma_q, w_q = gamma_homogeneous(q, beta0, B0star, n)
    w_star = max(gamma_q ** (1.0 - q), nu ** (1.0 - q))
    gamma_star = min(gamma_q, B0star * n ** -0.5 * nu ** (-(1.0 - q) * beta0 / 2.0))
    return RateParams(q, beta0, B0star, int(n), int(p), epsilon, nu, gamma_q, w_q, gamma_star, w_star)


def rates_scale_dependent(q, beta0, B0star, n, p, epsilon, MF, Mq) -> RateParams:
    """Schedules that use the smoothness and sparsity budgets ``MF`` and ``Mq``."""
    if not (MF > 0 and Mq > 0):
        raise InvalidInputError("MF and Mq must be positive")
    nu = nu_n(n, p, epsilon)
    _check_rate_args(q, beta0, B0star, n)
    ratio = Mq / MF
    e = 2.0 + beta0 * (1.0 - q)
    gamma_p = B0star ** (2.0 / e) * n ** (-1.0 / e) * ratio ** (-beta0 / e)
    w_p = gamma_p ** (1.0 - q) * ratio
    w_star = max(w_p, nu ** (1.0 - q) * ratio)
    gamma_star = min(
        gamma_p,
        B0star * n ** -0.5 * nu ** (-(1.0 - q) * beta0 / 2.0) * ratio ** (-beta0 / 2.0),
    )
    return RateParams(q, beta0, B0star, int(n), int(p), epsilon, nu, gamma_p, w_p,
                      gamma_star, w_star, MF, Mq)


def rate_exponent(q, beta0) -> float:
    """Predicted exponent of n in the squared prediction error."""
    return -(2.0 - q) / (2.0 + beta0 * (1.0 - q))


def plugin_noise_scale(y) -> float:
    """Robust noise scale from first differences of ``y - mean(y)``.

    MAD of the differences, scaled by 1.4826 for Gaussian consistency and
    by 1/sqrt(2) because a difference of two errors has twice the variance.
    """
    y = np.asarray(y, dtype=np.float64)
    d = np.diff(y - y.mean())
    if d.size == 0:
        return 0.0
    mad = np.median(np.abs(d - np.median(d)))
    return float(1.4826 * mad / math.sqrt(2.0))


def build_plan(
    data: Dataset,
    classes: Sequence[ComponentClass] | ComponentClass,
    q: float = 0.0,
    C1: float | None = None,
    epsilon: float = 0.1,
    A0: float = 2.0,
    variant: str = "adaptive",
    MF: float | None = None,
    Mq: float | None = None,
    B0star: float = 1.0,
    c1_factor: float = 1.0,
) -> PenaltyPlan:
    """Assemble ``lambda_j = C1 (gamma*_j + nu)`` and ``rho_j = lambda_j w*_j``.

    ``C1=None`` uses the plug-in noise scale of ``y`` times ``c1_factor``.
    """
    if isinstance(classes, (ComponentClass, str)):
        classes = [classes] * data.p
    classes = tuple(c if isinstance(c, ComponentClass) else ComponentClass.parse(c) for c in classes)
    if len(classes) != data.p:
        raise InvalidInputError(f"{len(classes)} classes given for {data.p} covariates")
    if C1 is None:
        C1 = plugin_noise_scale(data.y) * c1_factor
        source = "plugin"
    else:
        source = "given"
    if not (math.isfinite(C1) and C1 >= 0):
        raise InvalidInputError(f"C1 must be finite and nonnegative, got {C1}")
    if variant not in ("adaptive", "dependent"):
        raise InvalidInputError(f"variant must be 'adaptive' or 'dependent', got {variant!r}")
    if variant == "dependent" and (MF is None or Mq is None):
        raise InvalidInputError("the dependent variant needs MF and Mq")
    n, p = data.n, data.p
    gam, w = np.zeros(p), np.zeros(p)
    nu = nu_n(n, p, epsilon)
    for j, cls in enumerate(classes):
        beta, _ = class_exponents(cls)
        if variant == "adaptive":
            rp = rates_scale_adaptive(q, beta, B0star, n, p, epsilon)
        else:
            rp = rates_scale_dependent(q, beta, B0star, n, p, epsilon, MF, Mq)
        gam[j], w[j] = rp.gamma_star, rp.w_star
    lam = C1 * (gam + nu)
    return PenaltyPlan(
        lambdas=lam, rhos=lam * w, w=w, gammas=gam, classes=classes,
        C1=float(C1), epsilon=epsilon, A0=A0, q=q, B0star=B0star, nu=nu,
        variant=variant, MF=MF, Mq=Mq, C1_source=source,
    )


def rescale_plan(plan: PenaltyPlan, C1: float) -> PenaltyPlan:
    """Same schedule with a different noise constant."""
    lam = C1 * (plan.gammas + (plan.nu or 0.0))
    return replace(plan, lambdas=lam, rhos=lam * plan.w, C1=float(C1), C1_source="given")
