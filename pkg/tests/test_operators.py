"""Pointwise generator evaluators and their matrix discretizations."""

import numpy as np
import pytest

import levytpt as lt


def make_field(fn, lo=-3.0, hi=3.0, n=1201, edge="clamp"):
    x = np.linspace(lo, hi, n)
    return lt.ScalarField1D(x, fn(x), edge=edge)


def test_generator_annihilates_constants(model):
    f = make_field(lambda x: np.full_like(x, 3.7))
    for x in (-1.0, 0.0, 0.8):
        assert abs(lt.evaluate_generator(model, f, x)) < 1e-10


def test_reverse_generator_annihilates_constants(model, solved):
    rho = solved["rho"].field
    f = make_field(lambda x: np.full_like(x, -2.0))
    for x in (-0.5, 0.0, 0.5):
        assert abs(lt.evaluate_reverse_generator(model, rho, f, x)) < 1e-8


def test_ou_generator_on_quadratic():
    # b = -x, sigma = sqrt(2), no jumps: L x^2 = -2x^2 + 2.
    m = lt.build_model({"family": "ornstein-uhlenbeck", "theta": 1.0, "sigma": np.sqrt(2.0)})
    f = make_field(lambda x: x**2, n=2401)
    for x in (-1.5, -0.3, 0.0, 0.7, 2.0):
        got = lt.evaluate_generator(m, f, x)
        assert got == pytest.approx(-2 * x**2 + 2, abs=5e-5)


def test_jump_generator_on_quadratic(model):
    # For f = x^2 and additive jumps the nonlocal term integrates exactly:
    # int [f(x+sl*r) - f(x) - sl*r*f'(x)] nu(dr) = sl^2 * m2.
    f = make_field(lambda x: x**2, n=2401)
    m2 = model.levy_measure.moment(2)
    for x in (-0.9, 0.2, 1.1):
        want = (x - x**3) * 2 * x + 0.5**2 + 0.3**2 * m2
        got = lt.evaluate_generator(model, f, x)
        assert got == pytest.approx(want, abs=5e-4)


def test_linearity(model):
    rng = np.random.default_rng(11)
    x_grid = np.linspace(-3, 3, 601)
    f = lt.ScalarField1D(x_grid, rng.standard_normal(601), edge="clamp")
    g = lt.ScalarField1D(x_grid, rng.standard_normal(601), edge="clamp")
    comb = lt.ScalarField1D(x_grid, 2.0 * f.values - 0.5 * g.values, edge="clamp")
    for x in (-1.1, 0.4):
        lf = lt.evaluate_generator(model, f, x)
        lg = lt.evaluate_generator(model, g, x)
        lc = lt.evaluate_generator(model, comb, x)
        assert lc == pytest.approx(2.0 * lf - 0.5 * lg, abs=1e-10)


def test_vanishing_measure_recovers_diffusion(diffusion_model):
    # Shrink the mark support onto its upper endpoint: nonlocal part -> 0.
    f = make_field(lambda x: np.sin(x))
    base = lt.evaluate_generator(diffusion_model, f, 0.3)
    for r_min, tol in ((0.5, 0.2), (0.9, 0.02), (0.99, 2e-3)):
        width = 1.0 - r_min
        m = lt.build_model({
            "family": "double-well", "sigma": 0.5, "sigma_l": 0.3,
            "measure": {"kind": "uniform", "r_min": r_min, "r_max": 1.0,
                        "mass": 2.0 * width / 0.9},
        })
        got = lt.evaluate_generator(m, f, 0.3)
        assert abs(got - base) < tol


def test_reversible_diffusion_reverse_equals_forward(diffusion_model):
    # Gradient diffusion with constant sigma is reversible, so the
    # time-reversed generator coincides with L when fed the exact
    # stationary density exp(-2U/sigma^2).
    x = np.linspace(-3, 3, 4001)
    u_pot = x**4 / 4 - x**2 / 2
    w = np.exp(-2 * u_pot / 0.25)
    rho = lt.ScalarField1D(x, w / np.trapezoid(w, x), edge="clamp")
    f = lt.ScalarField1D(x, np.sin(1.3 * x) + 0.2 * x, edge="clamp")
    for probe in (-0.8, 0.0, 0.55):
        fwd = lt.evaluate_generator(diffusion_model, f, probe)
        rev = lt.evaluate_reverse_generator(diffusion_model, rho, f, probe)
        assert rev == pytest.approx(fwd, abs=2e-5)


def test_matrix_rows_match_pointwise_evaluator(model):
    x = np.linspace(-3, 3, 801)
    mat = lt.generator_matrix(model, x, n_quad=64)
    f = lt.ScalarField1D(x, np.tanh(x) + 0.1 * x**2, edge="clamp")
    lf = mat @ f.values
    for i in (150, 400, 633):
        direct = lt.evaluate_generator(model, f, float(x[i]), n_quad=64)
        assert lf[i] == pytest.approx(direct, rel=1e-8, abs=1e-10)


def test_apply_generator_matches_matrix(model):
    x = np.linspace(-3, 3, 801)
    f = lt.ScalarField1D(x, np.cos(x), edge="clamp")
    a = lt.apply_generator(model, f).values
    b = lt.generator_matrix(model, x) @ f.values
    interior = slice(2, -2)
    assert np.allclose(a[interior], b[interior], atol=1e-9)


def test_discrete_adjointness(model, solved):
    # sum (Lf) g rho dx == sum f (Lbar g) rho dx for compactly supported f, g.
    rho = solved["rho"].field
    x = rho.x
    bump = lambda c, w: np.exp(-((x - c) / w) ** 2) * (np.abs(x - c) < 3 * w)
    f = lt.ScalarField1D(x, bump(-0.3, 0.35), edge="zero")
    g = lt.ScalarField1D(x, bump(0.4, 0.3), edge="zero")
    lf = lt.apply_generator(model, f).values
    lbg = lt.apply_reverse_generator(model, rho, g).values
    dx = rho.dx
    lhs = float(np.sum(lf * g.values * rho.values) * dx)
    rhs = float(np.sum(f.values * lbg * rho.values) * dx)
    assert abs(lhs - rhs) < 1e-4


def test_solved_committor_is_in_generator_kernel(model, solved, regions):
    a, b = regions
    q = solved["q"].field
    val = lt.evaluate_generator(model, q, 0.0)
    assert abs(val) < 1e-6
    qbar = solved["qbar"].field
    rho = solved["rho"].field
    val_rev = lt.evaluate_reverse_generator(model, rho, qbar, 0.0)
    assert abs(val_rev) < 1e-6
