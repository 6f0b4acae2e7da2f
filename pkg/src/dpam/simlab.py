"""Synthetic additive regression data and rate studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .model import BV1, ComponentClass, Dataset, InvalidInputError, Kind
from .solver import FitOptions, fit_additive, predict
from .tuning import build_plan, rate_exponent
from .uniprox import SolverError

_GL_X, _GL_W = leggauss(32)


# ----------------------------------------------------------------------
# covariate distributions
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CovariateDist:
    """Density ``a + 2(1-a) x`` on [0, 1]; ``a = 1`` is uniform.

    ``a`` must lie in (0, 2) so the density stays bounded below.
    """

    a: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.a < 2.0):
            raise InvalidInputError(f"density intercept must lie in (0, 2), got {self.a}")

    @property
    def label(self) -> str:
        return "uniform" if self.a == 1.0 else f"linear({self.a!r})"

    def pdf(self, x):
        return self.a + 2.0 * (1.0 - self.a) * np.asarray(x, dtype=np.float64)

    def sample(self, rng, size):
        u = rng.random(size)
        if self.a == 1.0:
            return u
        # invert F(x) = a x + (1 - a) x^2
        b = 1.0 - self.a
        return (-self.a + np.sqrt(self.a * self.a + 4.0 * b * u)) / (2.0 * b)

    @classmethod
    def parse(cls, text: str) -> "CovariateDist":
        t = text.strip().lower()
        if t == "uniform":
            return cls(1.0)
        if t.startswith("linear(") and t.endswith(")"):
            return cls(float(t[7:-1]))
        raise InvalidInputError(f"unknown covariate distribution {text!r}")


UNIFORM = CovariateDist(1.0)


# ----------------------------------------------------------------------
# truth shapes (unit-free; scaled and centred by the scenario)
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    breaks: tuple
    levels: tuple

    def __post_init__(self):
        if len(self.levels) != len(self.breaks) + 1:
            raise InvalidInputError("a step shape needs one more level than breaks")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])):
            raise InvalidInputError("step breaks must be increasing")

    @classmethod
    def regular(cls, k: int):
        """``k`` equally spaced jumps alternating up and down."""
        if k < 1:
            raise InvalidInputError("a step shape needs at least one jump")
        br = tuple((i + 1) / (k + 1) for i in range(k))
        lv = tuple(float(i % 2) for i in range(k + 1))
        return cls(br, lv)

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.breaks), x, side="right")
        return np.asarray(self.levels)[idx]

    def kinks(self):
        return tuple(self.breaks)

    def seminorm(self, cls: ComponentClass) -> float:
        if cls.kind is Kind.BOUNDED_VARIATION and cls.m == 1:
            return float(np.abs(np.diff(self.levels)).sum())
        return math.inf


@dataclass(frozen=True)
class PiecewiseLinear:
    nodes: tuple
    values: tuple

    def __post_init__(self):
        if len(self.nodes) != len(self.values) or len(self.nodes) < 2:
            raise InvalidInputError("piecewise linear shape needs matching nodes and values")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise InvalidInputError("piecewise linear nodes must be increasing")

    @classmethod
    def tent(cls):
        return cls((0.0, 0.5, 1.0), (0.0, 1.0, 0.0))

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)

    def kinks(self):
        return tuple(self.nodes)

    def seminorm(self, cls: ComponentClass) -> float:
        t = np.asarray(self.nodes)
        v = np.asarray(self.values)
        s = np.diff(v) / np.diff(t)
        # flat extension outside the nodes adds no variation
        if cls.kind is Kind.BOUNDED_VARIATION:
            if cls.m == 1:
                return float(np.abs(np.diff(v)).sum())
            if cls.m == 2:
                s_ext = np.concatenate(([0.0] if t[0] > 0 else [], s, [0.0] if t[-1] < 1 else []))
                return float(np.abs(np.diff(s_ext)).sum())
            return math.inf
        if cls.m == 1:
            return float(math.sqrt(np.dot(s * s, np.diff(t))))
        return math.inf


@dataclass(frozen=True)
class Sine:
    freq: float = 1.0
    phase: float = 0.0

    def __call__(self, x):
        return np.sin(2.0 * math.pi * self.freq * np.asarray(x, dtype=np.float64) + self.phase)

    def kinks(self):
        return ()

    def _deriv(self, x, k):
        w = 2.0 * math.pi * self.freq
        return w ** k * np.sin(w * np.asarray(x) + self.phase + k * math.pi / 2.0)

    def seminorm(self, cls: ComponentClass) -> float:
        xs, ws = _nodes(())
        if cls.kind is Kind.BOUNDED_VARIATION:
            return float(np.dot(ws, np.abs(self._deriv(xs, cls.m))))
        return float(math.sqrt(np.dot(ws, self._deriv(xs, cls.m) ** 2)))


def _custom_shape(knots, values, rule: str):
    if rule == "step":
        return Step(tuple(float(k) for k in knots[1:]), tuple(float(v) for v in values))
    if rule == "linear":
        return PiecewiseLinear(tuple(float(k) for k in knots), tuple(float(v) for v in values))
    raise InvalidInputError(f"custom table rule must be 'step' or 'linear', got {rule!r}")


def Custom(knots, values, rule: str = "linear"):
    """A tabulated shape: right-continuous steps or linear interpolation."""
    return _custom_shape(np.asarray(knots, dtype=float), np.asarray(values, dtype=float), rule)


def _nodes(kinks, pieces: int = 64):
    # composite Gauss-Legendre on [0, 1], split at the shape's kinks
    edges = np.unique(np.concatenate((np.linspace(0.0, 1.0, pieces + 1),
                                      [k for k in kinks if 0.0 < k < 1.0])))
    a, b = edges[:-1, None], edges[1:, None]
    xs = (0.5 * (b - a) * _GL_X[None, :] + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * _GL_W[None, :]).ravel()
    return xs, ws


# ----------------------------------------------------------------------
# scenarios and truth
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Additive truth, design and noise.

    With ``q = 0`` every active component has Q-norm ``amplitude``.  For
    ``q > 0`` the k-th active component (1-based) gets Q-norm
    ``amplitude * k ** (-1.01 / q)``.
    """

    n: int
    p: int
    active: tuple
    shapes: tuple
    noise_sd: float = 1.0
    covariate_dist: CovariateDist = UNIFORM
    seed: int = 0
    q: float = 0.0
    amplitude: float = 1.0
    noise: str = "gaussian"
    cls: ComponentClass = BV1

    def __post_init__(self):
        active = tuple(int(a) for a in self.active)
        if self.n < 2 or self.p < 1:
            raise InvalidInputError("scenario needs n >= 2 and p >= 1")
        if len(set(active)) != len(active) or any(a < 0 or a >= self.p for a in active):
            raise InvalidInputError("active indices must be distinct and within range")
        if len(self.shapes) != len(active):
            raise InvalidInputError("one shape per active component is required")
        for s in self.shapes:
            if not callable(s) or not hasattr(s, "seminorm"):
                raise InvalidInputError(f"invalid shape {s!r}")
        if self.noise not in ("gaussian", "bounded"):
            raise InvalidInputError(f"noise must be 'gaussian' or 'bounded', got {self.noise!r}")
        if not (self.noise_sd >= 0 and 0.0 <= self.q <= 1.0 and self.amplitude >= 0):
            raise InvalidInputError("noise_sd, q or amplitude out of range")
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "shapes", tuple(self.shapes))

    def amplitudes(self) -> np.ndarray:
        k = np.arange(1, len(self.active) + 1, dtype=np.float64)
        if self.q == 0.0:
            return np.full(k.size, self.amplitude)
        return self.amplitude * k ** (-1.01 / self.q)

    def metadata(self) -> dict:
        return {
            "amplitude_schedule": "constant" if self.q == 0.0 else "k^(-1.01/q)",
            "amplitudes": [float(a) for a in self.amplitudes()],
        }


def sparse_steps(n, p, m0=3, jumps=1, noise_sd=1.0, seed=0, **kw) -> Scenario:
    """``m0`` active step components on the first covariates."""
    shapes = tuple(Step.regular(jumps + (i % 2)) for i in range(m0))
    return Scenario(n=n, p=p, active=tuple(range(m0)), shapes=shapes, noise_sd=noise_sd, seed=seed, **kw)


def dense_decaying(n, p, q=1.0, noise_sd=1.0, seed=0, **kw) -> Scenario:
    """Every covariate active with norms decaying at the q-schedule."""
    shapes = tuple(Step.regular(1 + (i % 2)) for i in range(p))
    return Scenario(n=n, p=p, active=tuple(range(p)), shapes=shapes, noise_sd=noise_sd, seed=seed, q=q, **kw)


@dataclass(frozen=True)
class TruthComponent:
    shape: object
    scale: float
    offset: float
    qnorm: float
    fnorm: float

    def __call__(self, x):
        return self.scale * (np.asarray(self.shape(x), dtype=np.float64) - self.offset)


@dataclass(frozen=True)
class Truth:
    """Ground-truth additive function with its declared budgets."""

    p: int
    components: tuple
    MF: float
    Mq: float
    q: float
    intercept: float = 0.0
    metadata: dict = field(default_factory=dict)

    def component_matrix(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(x.shape)
        for j, c in enumerate(self.components):
            if c is not None:
                out[:, j] = c(x[:, j])
        return out

    def __call__(self, x):
        return self.intercept + self.component_matrix(x).sum(axis=1)


def _q_moments(shape, dist: CovariateDist):
    xs, ws = _nodes(shape.kinks())
    dens = dist.pdf(xs)
    f = np.asarray(shape(xs), dtype=np.float64)
    mean = float(np.dot(ws * dens, f))
    var = float(np.dot(ws * dens, (f - mean) ** 2))
    return mean, var


def build_truth(scenario: Scenario) -> Truth:
    comps = [None] * scenario.p
    amps = scenario.amplitudes()
    mf = 0.0
    mq = 0.0
    for k, (j, shape) in enumerate(zip(scenario.active, scenario.shapes)):
        mean, var = _q_moments(shape, scenario.covariate_dist)
        if var <= 0:
            raise InvalidInputError(f"shape for component {j} is constant under the covariate law")
        scale = amps[k] / math.sqrt(var)
        fn = scale * shape.seminorm(scenario.cls)
        comps[j] = TruthComponent(shape, scale, mean, float(amps[k]), fn)
        mf += fn
        mq += 1.0 if scenario.q == 0.0 else amps[k] ** scenario.q
    if scenario.q == 0.0:
        mq = float(len(scenario.active))
    return Truth(scenario.p, tuple(comps), float(mf), float(mq), scenario.q, 0.0, scenario.metadata())


def generate(scenario: Scenario):
    """``(Dataset, Truth)``; a pure function of the scenario."""
    rng = np.random.default_rng(scenario.seed)
    truth = build_truth(scenario)
    x = scenario.covariate_dist.sample(rng, (scenario.n, scenario.p))
    if scenario.noise == "gaussian":
        eps = rng.standard_normal(scenario.n) * scenario.noise_sd
    else:
        half = math.sqrt(3.0) * scenario.noise_sd
        eps = rng.uniform(-half, half, scenario.n)
    y = truth(x) + eps
    return Dataset(x, y), truth


# ----------------------------------------------------------------------
# error norms
# ----------------------------------------------------------------------

def error_n(fit, truth: Truth, data: Dataset) -> float:
    """``||ghat - g*||_n^2`` over the design points."""
    d = predict(fit, data.x) - truth(data.x)
    return float(np.mean(d * d))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n_mc: int


def error_Q_mc(fit, truth: Truth, covariate_dist: CovariateDist = UNIFORM, n_mc: int = 4000,
               seed: int = 0) -> MCEstimate:
    """Monte Carlo ``||ghat - g*||_Q^2`` from ``n_mc`` fresh covariate draws."""
    if n_mc < 1:
        raise InvalidInputError("n_mc must be at least 1")
    rng = np.random.default_rng(seed)
    x = covariate_dist.sample(rng, (n_mc, truth.p))
    d2 = (predict(fit, x) - truth(x)) ** 2
    se = float(d2.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return MCEstimate(float(d2.mean()), se, n_mc)


# ----------------------------------------------------------------------
# rate studies
# ----------------------------------------------------------------------

def loglog_slope(xs, ys):
    """OLS slope of ``log y`` on ``log x`` and its standard error."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise InvalidInputError("need at least two matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidInputError("log-log slope needs positive values")
    lx, ly = np.log(x), np.log(y)
    xc = lx - lx.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0:
        raise InvalidInputError("x values must not all coincide")
    slope = float(np.dot(xc, ly - ly.mean()) / sxx)
    if x.size < 3:
        return slope, 0.0
    resid = ly - ly.mean() - slope * xc
    return slope, float(math.sqrt(np.dot(resid, resid) / (x.size - 2) / sxx))


@dataclass(frozen=True)
class RateStudyResult:
    grid: tuple
    reps: int
    errors_n: np.ndarray
    errors_Q: np.ndarray
    slope_n: float
    stderr_n: float
    slope_Q: float
    stderr_Q: float
    theory: float
    degenerate: bool = False
    failures: tuple = ()
    sweeps: Optional[np.ndarray] = None

    def mean_errors(self, which: str = "n") -> np.ndarray:
        e = self.errors_n if which == "n" else self.errors_Q
        return np.nanmean(e, axis=1)

    def cell_table(self):
        """Rows ``(n, rep, err_n, err_Q, status)``."""
        failed = {(f[0], f[1]): f[2] for f in self.failures}
        rows = []
        for i, n in enumerate(self.grid):
            for r in range(self.reps):
                status = failed.get((n, r), "ok")
                rows.append((n, r, float(self.errors_n[i, r]), float(self.errors_Q[i, r]), status))
        return rows


def cell_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, n, rep]).generate_state(1)[0])


def rate_study(
    template: Scenario,
    n_grid: Sequence[int],
    reps: int,
    variant: str = "adaptive",
    C1: float | None = None,
    A0: float = 2.0,
    epsilon: float = 0.1,
    B0star: float = 1.0,
    q: float | None = None,
    classes=None,
    opts: FitOptions | None = None,
    n_mc: int = 2000,
    seed: int = 0,
) -> RateStudyResult:
    """Fit replicated scenarios along ``n_grid`` and regress log error on log n.

    ``C1=None`` uses the scenario's noise level.  Solver failures are
    recorded per cell and leave NaN in the error tables.
    """
    grid = tuple(int(n) for n in n_grid)
    if len(grid) < 3 or reps < 3:
        raise InvalidInputError("a rate study needs at least 3 grid points and 3 replicates")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError("n_grid must be strictly increasing")
    q = template.q if q is None else q
    classes = classes or template.cls
    c1 = template.noise_sd if C1 is None else C1
    opts = opts or FitOptions(tol=1e-6, max_sweeps=200)
    en = np.full((len(grid), reps), np.nan)
    eq = np.full((len(grid), reps), np.nan)
    sweeps = np.zeros((len(grid), reps), dtype=np.int64)
    failures = []
    for i, n in enumerate(grid):
        for r in range(reps):
            s = cell_seed(seed, n, r)
            scen = replace(template, n=n, seed=s)
            data, truth = generate(scen)
            try:
                plan = build_plan(data, classes, q=q, C1=c1, epsilon=epsilon, A0=A0,
                                  variant=variant, MF=truth.MF, Mq=truth.Mq, B0star=B0star)
                fit = fit_additive(data, plan, opts)
            except (SolverError, InvalidInputError) as exc:
                failures.append((n, r, f"failed: {exc}"))
                continue
            en[i, r] = error_n(fit, truth, data)
            eq[i, r] = error_Q_mc(fit, truth, scen.covariate_dist, n_mc, seed=s + 1).value
            sweeps[i, r] = fit.sweeps
    slopes = []
    degenerate = False
    for e in (en, eq):
        m = np.nanmean(e, axis=1) if np.isfinite(e).any() else np.full(len(grid), np.nan)
        if not np.all(np.isfinite(m)) or np.any(m <= 1e-14 * max(1.0, np.nanmax(np.abs(m)))):
            degenerate = True
            slopes.append((math.nan, math.nan))
        else:
            slopes.append(loglog_slope(grid, m))
    beta0 = classes.beta() if isinstance(classes, ComponentClass) else min(
        c.beta() if isinstance(c, ComponentClass) else ComponentClass.parse(c).beta() for c in classes)
    return RateStudyResult(
        grid=grid, reps=reps, errors_n=en, errors_Q=eq,
        slope_n=slopes[0][0], stderr_n=slopes[0][1], slope_Q=slopes[1][0], stderr_Q=slopes[1][1],
        theory=rate_exponent(q, beta0), degenerate=degenerate, failures=tuple(failures), sweeps=sweeps,
    )
