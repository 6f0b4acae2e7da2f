"""Block coordinate descent for the doubly penalized additive model.

The objective is

    K(g) = 0.5 ||y - b - sum_j g_j||_n^2 + A0 sum_j (rho_j ||g_j||_F + lambda_j ||g_j||_n)

with an unpenalized intercept ``b`` and empirically centred components.
Each block update is the exact minimiser of K over one component: the
functional prox of the averaged partial residual followed by group
shrinkage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    AdditiveFit,
    ComponentClass,
    ComponentFit,
    Dataset,
    InvalidInputError,
    Kind,
    fitted_matrix,
    merge_ties,
)
from .uniprox import (
    ProxProblem,
    functional_prox,
    group_shrink,
    kkt_univariate,
    prox_objective,
    trendfilter_prox,
)

EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class PenaltyPlan:
    """Per-component penalties plus the global constants that produced them.

    The solver uses ``A0 * lambdas`` and ``A0 * rhos``.
    """

    lambdas: np.ndarray
    rhos: np.ndarray
    w: np.ndarray
    gammas: np.ndarray
    classes: tuple
    C1: float = 1.0
    epsilon: float = 0.1
    A0: float = 2.0
    q: float = 0.0
    B0star: float = 1.0
    nu: Optional[float] = None
    variant: str = "manual"
    MF: Optional[float] = None
    Mq: Optional[float] = None
    C1_source: str = "given"

    def __post_init__(self):
        arrs = {}
        for name in ("lambdas", "rhos", "w", "gammas"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise InvalidInputError(f"{name} must be finite and nonnegative")
            a.setflags(write=False)
            arrs[name] = a
        classes = tuple(c if isinstance(c, ComponentClass) else ComponentClass.parse(str(c)) for c in self.classes)
        p = len(classes)
        if any(a.size != p for a in arrs.values()):
            raise InvalidInputError("penalty vectors and classes must have one entry per component")
        if not self.A0 >= 1.0:
            raise InvalidInputError(f"A0 must be at least 1, got {self.A0}")
        if not (0.0 <= self.q <= 1.0):
            raise InvalidInputError(f"q must lie in [0, 1], got {self.q}")
        for name, a in arrs.items():
            object.__setattr__(self, name, a)
        object.__setattr__(self, "classes", classes)

    @property
    def p(self) -> int:
        return len(self.classes)

    def effective(self, j: int):
        """``(A0 * rho_j, A0 * lambda_j)``."""
        return self.A0 * float(self.rhos[j]), self.A0 * float(self.lambdas[j])

    @classmethod
    def manual(cls, lambdas, rhos, classes, A0: float = 1.0) -> "PenaltyPlan":
        """Plan from explicit penalties, bypassing the rate schedules."""
        lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
        rho = np.asarray(rhos, dtype=np.float64).reshape(-1)
        if isinstance(classes, (ComponentClass, str)):
            classes = [classes] * lam.size
        w = np.divide(rho, lam, out=np.ones_like(rho), where=lam > 0)
        return cls(lambdas=lam, rhos=rho, w=w, gammas=np.zeros_like(lam), classes=tuple(classes), A0=A0)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "A0": self.A0,
            "C1": self.C1,
            "C1_source": self.C1_source,
            "epsilon": self.epsilon,
            "q": self.q,
            "B0star": self.B0star,
            "nu": self.nu,
            "MF": self.MF,
            "Mq": self.Mq,
            "classes": [c.label for c in self.classes],
            "lambdas": [float(v) for v in self.lambdas],
            "rhos": [float(v) for v in self.rhos],
            "w": [float(v) for v in self.w],
            "gammas": [float(v) for v in self.gammas],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PenaltyPlan":
        known = {"variant", "A0", "C1", "C1_source", "epsilon", "q", "B0star", "nu", "MF", "Mq",
                 "classes", "lambdas", "rhos", "w", "gammas"}
        extra = set(doc) - known
        if extra:
            raise InvalidInputError(f"unknown plan keys: {sorted(extra)}")
        kw = dict(doc)
        kw["classes"] = tuple(ComponentClass.parse(c) for c in doc["classes"])
        return cls(**kw)


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    max_sweeps: int = 500
    active_set: bool = True
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if int(self.max_sweeps) < 1:
            raise InvalidInputError("max_sweeps must be at least 1")


def _check_dims(data: Dataset, plan: PenaltyPlan, fit: AdditiveFit | None = None):
    if plan.p != data.p:
        raise InvalidInputError(f"plan has {plan.p} components, data has {data.p} covariates")
    if fit is not None and fit.p != data.p:
        raise InvalidInputError(f"fit has {fit.p} components, data has {data.p} covariates")


def predict(fit: AdditiveFit, xnew) -> np.ndarray:
    """Row-wise model evaluation."""
    x = np.atleast_2d(np.asarray(xnew, dtype=np.float64))
    return fit.intercept + fitted_matrix(fit, x).sum(axis=1)


def penalty(fit: AdditiveFit, plan: PenaltyPlan) -> float:
    total = 0.0
    for j, comp in enumerate(fit.components):
        if comp is not None:
            rho, lam = plan.effective(j)
            total += rho * comp.seminorm_value + lam * comp.empnorm_value
    return total


def objective(fit: AdditiveFit, data: Dataset, plan: PenaltyPlan) -> float:
    """``0.5 ||y - yhat||_n^2 + A0 * sum_j (rho_j ||g_j||_F + lambda_j ||g_j||_n)``."""
    _check_dims(data, plan, fit)
    resid = data.y - predict(fit, data.x)
    return 0.5 * float(np.mean(resid * resid)) + penalty(fit, plan)


@dataclass
class _Block:
    # per-covariate data reused across sweeps
    knots: np.ndarray
    weights: np.ndarray
    inverse: np.ndarray
    cls: ComponentClass
    theta: np.ndarray
    warm: object = None
    null_streak: int = 0


def _make_block(xj, cls: ComponentClass) -> _Block:
    knots, w, inverse, _ = merge_ties(xj)
    return _Block(knots, w, inverse, cls, np.zeros(knots.size))


def _block_problem(block: _Block, partial, rho) -> ProxProblem:
    sums = np.bincount(block.inverse, weights=partial, minlength=block.knots.size)
    return ProxProblem(sums / block.weights, block.knots, block.weights, rho, block.cls)


def _functional_prox(prob: ProxProblem, block: _Block | None):
    if prob.cls.kind is Kind.BOUNDED_VARIATION and prob.cls.m >= 2 and block is not None:
        theta, _, state = trendfilter_prox(prob, return_dual=True, warm=block.warm)
        if state is not None:
            block.warm = state
        return theta
    return functional_prox(prob)


def _center(theta, w):
    return theta - np.dot(w, theta) / w.sum()


def _block_update(prob: ProxProblem, lam: float, block: _Block | None = None) -> np.ndarray:
    g = _center(_functional_prox(prob, block), prob.weights)
    return group_shrink(g, prob.weights, prob.n, lam)


def _to_component(block: _Block, theta) -> Optional[ComponentFit]:
    if not np.any(theta):
        return None
    return ComponentFit.from_values(block.knots, theta, block.weights, block.cls)


def component_update(j: int, partial_residual, data: Dataset, plan: PenaltyPlan) -> Optional[ComponentFit]:
    """Exact minimiser of the objective over component ``j``.

    Returns ``None`` when group shrinkage removes the component.
    """
    _check_dims(data, plan)
    r = np.asarray(partial_residual, dtype=np.float64).reshape(-1)
    if r.size != data.n:
        raise InvalidInputError("partial residual length differs from the sample size")
    block = _make_block(data.x[:, j], plan.classes[j])
    rho, lam = plan.effective(j)
    theta = _block_update(_block_problem(block, r, rho), lam)
    return _to_component(block, theta)


def fit_additive(data: Dataset, plan: PenaltyPlan, opts: FitOptions | None = None,
                 init: AdditiveFit | None = None) -> AdditiveFit:
    """Cyclic block coordinate descent from the intercept-only model.

    Stops once a sweep changes the objective by less than ``tol`` relative
    and moves no fitted value by more than ``tol`` times the spread of ``y``.

    A block update that raises the block objective beyond rounding level
    (possible only through rounding in an inner solver) is discarded, so
    the objective trace never increases by more than rounding noise.
    """
    opts = opts or FitOptions()
    _check_dims(data, plan, init)
    n, p = data.n, data.p
    y = data.y
    blocks = [_make_block(data.x[:, j], plan.classes[j]) for j in range(p)]
    if init is not None:
        for j, comp in enumerate(init.components):
            if comp is not None:
                blocks[j].theta = np.asarray(comp(blocks[j].knots), dtype=np.float64)
    F = np.column_stack([b.theta[b.inverse] for b in blocks]) if p else np.zeros((n, 0))
    intercept = float(np.mean(y - F.sum(axis=1)))
    resid = y - intercept - F.sum(axis=1)
    rng = np.random.default_rng(opts.seed)
    yscale = max(float(np.abs(y - y.mean()).max()), np.finfo(float).tiny)

    def total_objective():
        pen = 0.0
        for j, b in enumerate(blocks):
            if np.any(b.theta):
                rho, lam = plan.effective(j)
                comp = ComponentFit.from_values(b.knots, b.theta, b.weights, b.cls)
                pen += rho * comp.seminorm_value + lam * comp.empnorm_value
        return 0.5 * float(np.mean(resid * resid)) + pen

    trace = [total_objective()]
    converged = False
    sweeps = 0
    verifying = False
    while sweeps < opts.max_sweeps:
        sweeps += 1
        order = rng.permutation(p) if opts.shuffle else range(p)
        changed_null = False
        moved = 0.0
        for j in order:
            b = blocks[j]
            if opts.active_set and not verifying and b.null_streak >= 3:
                continue
            partial = resid + F[:, j]
            rho, lam = plan.effective(j)
            prob = _block_problem(b, partial, rho)
            new = _block_update(prob, lam, b)
            before = prox_objective(prob, b.theta, lam)
            if prox_objective(prob, new, lam) > before + 16 * EPS * abs(before):
                new = b.theta
            was_null = not np.any(b.theta)
            moved = max(moved, float(np.abs(new - b.theta).max(initial=0.0)))
            b.theta = new
            F[:, j] = new[b.inverse]
            resid = partial - F[:, j]
            if np.any(new):
                b.null_streak = 0
                if was_null and verifying:
                    changed_null = True
            else:
                b.null_streak += 1
        # recomputed rather than accumulated, so a null model has intercept mean(y) exactly
        total = F.sum(axis=1)
        intercept = float(np.mean(y - total))
        resid = y - intercept - total
        trace.append(total_objective())
        prev, cur = trace[-2], trace[-1]
        small = (abs(prev - cur) <= opts.tol * max(abs(prev), np.finfo(float).tiny)
                 and moved <= opts.tol * yscale)
        if verifying:
            verifying = False
            if small and not changed_null:
                converged = True
                break
            for bl in blocks:
                bl.null_streak = 0
        elif small:
            if opts.active_set and any(bl.null_streak >= 3 for bl in blocks):
                verifying = True
            else:
                converged = True
                break

    comps = tuple(_to_component(b, b.theta) for b in blocks)
    return AdditiveFit(
        intercept=intercept,
        components=comps,
        objective_trace=tuple(trace),
        sweeps=sweeps,
        converged=converged,
        plan_snapshot=plan,
        column_names=data.column_names,
    )


def kkt_residuals(fit: AdditiveFit, data: Dataset, plan: PenaltyPlan) -> np.ndarray:
    """Per-component optimality gap at the fit's own partial residuals."""
    _check_dims(data, plan, fit)
    F = fitted_matrix(fit, data.x)
    resid = data.y - fit.intercept - F.sum(axis=1)
    gaps = np.zeros(data.p)
    for j in range(data.p):
        block = _make_block(data.x[:, j], plan.classes[j])
        rho, lam = plan.effective(j)
        prob = _block_problem(block, resid + F[:, j], rho)
        comp = fit.components[j]
        cand = np.zeros(block.knots.size) if comp is None else np.asarray(comp(block.knots), dtype=np.float64)
        gaps[j] = kkt_univariate(prob, cand, lam).kkt_gap
    return gaps
