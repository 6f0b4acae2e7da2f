import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from dpam.model import (
    BV1,
    BV2,
    SOB1,
    SOB2,
    AdditiveFit,
    ComponentClass,
    ComponentFit,
    Dataset,
    InvalidInputError,
    Kind,
    Rule,
    empirical_norm,
    evaluate_component,
    evaluate_model,
    merge_ties,
    null_fit,
    seminorm,
    sobolev_seminorm,
    tv_seminorm,
)

from oracles import spline_penalty

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def step(knots, values):
    return ComponentFit.from_values(knots, values, np.ones(len(knots)), BV1)


# ---- empirical norm -------------------------------------------------------

def test_empirical_norm_examples():
    assert empirical_norm([0, 0, 0]) == 0.0
    assert empirical_norm([-2.5] * 4) == pytest.approx(2.5, rel=1e-15)
    assert empirical_norm([3, 4]) == pytest.approx(math.sqrt(12.5), rel=1e-15)
    assert empirical_norm([3, 4], [1, 1]) == pytest.approx(3.5355339059327378, rel=1e-15)


def test_empirical_norm_weights_match_repetition():
    v = np.array([1.0, -2.0, 0.5])
    w = np.array([2.0, 1.0, 3.0])
    assert empirical_norm(v, w) == pytest.approx(empirical_norm(np.repeat(v, w.astype(int))), rel=1e-14)


def test_empirical_norm_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        empirical_norm([])
    with pytest.raises(InvalidInputError):
        empirical_norm([1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        empirical_norm([1.0, 2.0], [1.0, 0.0])


@given(st.lists(finite, min_size=1, max_size=30), finite)
def test_empirical_norm_homogeneous(v, c):
    v = np.array(v)
    lhs = empirical_norm(c * v)
    rhs = abs(c) * empirical_norm(v)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


# ---- seminorms ------------------------------------------------------------

def test_tv_seminorm_examples():
    assert tv_seminorm([1, 3, 2], [0.0, 0.5, 1.0], 1) == 3.0
    assert tv_seminorm([0, 1, 0], [0.0, 0.5, 1.0], 2) == pytest.approx(4.0, rel=1e-15)
    for m in (1, 2, 3, 4):
        assert tv_seminorm([1.7] * 6, np.linspace(0, 1, 6), m) == pytest.approx(0.0, abs=1e-12)


def test_tv_seminorm_short_inputs_are_null():
    assert tv_seminorm([1.0, 5.0], [0.1, 0.2], 2) == 0.0
    assert tv_seminorm([1.0], [0.3], 1) == 0.0


def test_tv_seminorm_length_mismatch():
    with pytest.raises(InvalidInputError):
        tv_seminorm([1, 2, 3], [0.0, 1.0], 1)


def test_tv_seminorm_m3_matches_second_derivative_variation():
    # for a quadratic-spline-like sampling of a smooth function the scaled
    # third divided differences approximate TV(f'')
    t = np.linspace(0, 1, 401)
    v = np.sin(2 * np.pi * t)
    tv_f2 = 2 * (2 * np.pi) ** 2 * 2  # f'' = -(2pi)^2 sin, varies by 2*(2pi)^2 twice
    assert tv_seminorm(v, t, 3) == pytest.approx(tv_f2, rel=1e-2)


@settings(max_examples=60)
@given(st.lists(finite, min_size=3, max_size=25), finite, finite, st.integers(0, 10_000))
def test_tv_seminorm_null_space_invariance(v, a, b, seed):
    v = np.array(v)
    t = np.sort(np.random.default_rng(seed).choice(np.linspace(0, 1, 997), size=v.size, replace=False))
    base1 = tv_seminorm(v, t, 1)
    assert abs(tv_seminorm(v + a, t, 1) - base1) <= 1e-10 * max(1.0, base1, abs(a))
    base2 = tv_seminorm(v, t, 2)
    shifted = tv_seminorm(v + a + b * t, t, 2)
    scale = max(1.0, base2, abs(b) / np.diff(t).min())
    assert abs(shifted - base2) <= 1e-10 * scale


def test_sobolev_seminorm_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for m in (1, 2):
        for _ in range(20):
            K = int(rng.integers(m + 1, 12))
            t = np.sort(rng.choice(np.linspace(0, 1, 501), size=K, replace=False))
            v = rng.standard_normal(K)
            ref = math.sqrt(v @ spline_penalty(t, m) @ v)
            assert sobolev_seminorm(v, t, m) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_sobolev_seminorm_m2_matches_integral():
    t = np.array([0.0, 0.2, 0.45, 0.7, 1.0])
    v = np.array([0.3, -1.0, 0.4, 2.0, -0.5])
    cs = CubicSpline(t, v, bc_type="natural")
    xs = np.linspace(0, 1, 200_001)
    num = math.sqrt(np.trapezoid(cs(xs, 2) ** 2, xs))
    assert sobolev_seminorm(v, t, 2) == pytest.approx(num, rel=1e-6)


# ---- component classes ----------------------------------------------------

def test_component_class_exponents():
    assert (BV1.beta(), BV1.tau()) == (1.0, 1.0)
    assert SOB2.beta() == 0.5 and SOB2.tau() == pytest.approx(0.25)
    assert SOB1.beta() == 1.0 and SOB1.tau() == pytest.approx(0.5)
    assert BV2.tau() == pytest.approx(1 / 3)


def test_component_class_parse_and_flags():
    assert ComponentClass.parse("bv1") == BV1
    assert ComponentClass.parse("sob2") == SOB2
    bv3 = ComponentClass.parse("bv3")
    assert bv3.kind is Kind.BOUNDED_VARIATION and bv3.m == 3 and bv3.approximate
    assert not BV2.approximate and not SOB2.approximate
    for bad in ("sob3", "bv0", "tv1", ""):
        with pytest.raises(InvalidInputError):
            ComponentClass.parse(bad)


# ---- dataset --------------------------------------------------------------

def test_dataset_validation():
    Dataset(np.array([[0.0], [1.0]]), [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[0.5]]), [1.0])
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[0.5], [0.2]]), [1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError, match=r"x\[1, 0\]"):
        Dataset(np.array([[0.5], [1.2]]), [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[0.5], [0.2]]), [1.0, np.nan])
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[0.5, 0.1], [0.2, 0.3]]), [1.0, 2.0], column_names=["a"])


def test_merge_ties():
    x = np.array([0.5, 0.1, 0.5, 0.9, 0.1, 0.5])
    y = np.array([1.0, 2.0, 3.0, 4.0, 6.0, 5.0])
    knots, w, inv, (ybar,) = merge_ties(x, y)
    np.testing.assert_array_equal(knots, [0.1, 0.5, 0.9])
    np.testing.assert_array_equal(w, [2, 3, 1])
    np.testing.assert_allclose(ybar, [4.0, 3.0, 4.0])
    np.testing.assert_array_equal(knots[inv], x)


# ---- evaluation -----------------------------------------------------------

def test_step_evaluation_examples():
    f = step([0.2, 0.5], [1.0, 3.0])
    assert evaluate_component(f, 0.1) == 1.0
    assert evaluate_component(f, 0.3) == 1.0
    assert evaluate_component(f, 0.7) == 3.0
    assert evaluate_component(f, 0.5) == 3.0  # right-continuous


def test_evaluation_at_knots_is_exact():
    rng = np.random.default_rng(1)
    t = np.sort(rng.random(9))
    v = rng.standard_normal(9)
    for cls in (BV1, BV2, SOB1, SOB2):
        f = ComponentFit.from_values(t, v, np.ones(9), cls)
        if f.rule is Rule.NATURAL_SPLINE:
            np.testing.assert_allclose(f(t), v, rtol=0, atol=1e-13)
        else:
            np.testing.assert_array_equal(f(t), v)


def test_linear_rule_interpolates_and_extends_flat():
    f = ComponentFit.from_values([0.2, 0.6], [1.0, 3.0], [1, 1], BV2)
    assert f.rule is Rule.LINEAR
    assert f(0.4) == pytest.approx(2.0)
    assert f(0.0) == 1.0 and f(1.0) == 3.0


def test_natural_spline_matches_scipy_and_extends_linearly():
    t = np.array([0.1, 0.3, 0.35, 0.8, 0.9])
    v = np.array([1.0, -0.5, 0.2, 1.5, 0.0])
    f = ComponentFit.from_values(t, v, np.ones(5), SOB2)
    cs = CubicSpline(t, v, bc_type="natural")
    xs = np.linspace(0.1, 0.9, 97)
    np.testing.assert_allclose(f(xs), cs(xs), atol=1e-12)
    # outside the knots: tangent line at the boundary
    for x0, xq in ((0.1, 0.0), (0.9, 1.0)):
        assert f(xq) == pytest.approx(cs(x0) + cs(x0, 1) * (xq - x0), abs=1e-12)


def test_component_fit_round_trip_of_norms():
    rng = np.random.default_rng(2)
    for cls in (BV1, BV2, ComponentClass.parse("bv3"), SOB1, SOB2):
        t = np.sort(rng.choice(np.linspace(0, 1, 301), 12, replace=False))
        v = rng.standard_normal(12)
        w = rng.integers(1, 5, 12).astype(float)
        f = ComponentFit.from_values(t, v, w, cls)
        assert seminorm(f.values, f.knots, cls) == pytest.approx(f.seminorm_value, rel=1e-10)
        assert empirical_norm(f.values, f.multiplicities) == pytest.approx(f.empnorm_value, rel=1e-10)


def test_component_fit_is_immutable():
    f = step([0.2, 0.5], [1.0, 3.0])
    with pytest.raises(ValueError):
        f.values[0] = 5.0


def test_evaluate_model_examples():
    assert evaluate_model(null_fit(3, intercept=2.5), [0.1, 0.9, 0.4]) == 2.5
    f = step([0.2, 0.5], [1.0, 3.0])
    assert evaluate_model(AdditiveFit(0.0, (f,)), [0.7]) == 3.0
    g = step([0.2, 0.5], [-1.0, -1.0])
    assert evaluate_model(AdditiveFit(0.0, (f, g)), [0.7, 0.4]) == 2.0
    with pytest.raises(InvalidInputError):
        evaluate_model(AdditiveFit(0.0, (f, g)), [0.7])
