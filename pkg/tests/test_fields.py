"""Grid field container: interpolation, edge policies, derivatives, CSV."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import levytpt as lt
from levytpt.errors import ConfigError
from levytpt.fields import ExtrapolationWarning


def quadratic_field(lo=-2.0, hi=2.0, n=401, edge="error"):
    x = np.linspace(lo, hi, n)
    return lt.ScalarField1D(x, x**2, edge=edge, name="x2")


def test_interpolates_linearly_between_nodes():
    f = quadratic_field()
    x = f.x
    mid = 0.5 * (x[10] + x[11])
    assert f(mid) == pytest.approx(0.5 * (x[10] ** 2 + x[11] ** 2))


def test_nodes_reproduced_exactly():
    f = quadratic_field()
    assert np.array_equal(f(f.x), f.values)


def test_edge_error_policy():
    f = quadratic_field(edge="error")
    with pytest.raises(ConfigError):
        f(2.5)


def test_edge_clamp_warns_and_holds_boundary_value():
    f = quadratic_field(edge="clamp")
    with pytest.warns(ExtrapolationWarning):
        v = f(5.0)
    assert v == pytest.approx(4.0)


def test_edge_zero_policy():
    f = quadratic_field(edge="zero")
    with pytest.warns(ExtrapolationWarning):
        assert f(10.0) == 0.0
    with pytest.warns(ExtrapolationWarning):
        assert f(-10.0) == 0.0


def test_derivative_exact_on_quadratic_interior():
    f = quadratic_field()
    d = f.derivative()
    # Central differences are exact for degree-2 polynomials.
    assert np.allclose(d.values[1:-1], 2 * f.x[1:-1], atol=1e-10)


def test_second_derivative_constant_on_quadratic():
    f = quadratic_field()
    d2 = f.second_derivative()
    assert np.allclose(d2.values[1:-1], 2.0, atol=1e-9)


def test_nonuniform_grid_rejected():
    x = np.array([0.0, 0.1, 0.3, 0.4])
    with pytest.raises(ConfigError):
        lt.ScalarField1D(x, np.zeros(4))


def test_length_mismatch_rejected():
    with pytest.raises(ConfigError):
        lt.ScalarField1D(np.linspace(0, 1, 5), np.zeros(4))


def test_csv_round_trip(tmp_path):
    f = quadratic_field(n=37)
    p = tmp_path / "f.csv"
    f.to_csv(p)
    header = p.read_text().splitlines()[0]
    assert header == "x,value"
    g = lt.ScalarField1D.from_csv(p)
    assert np.array_equal(f.x, g.x)
    assert np.array_equal(f.values, g.values)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-2.0, max_value=2.0, allow_nan=False))
def test_interpolation_stays_within_local_node_range(xq):
    f = quadratic_field(n=101)
    v = f(xq)
    i = min(int((xq - f.x[0]) / f.dx), f.n - 2)
    lo = min(f.values[i], f.values[i + 1])
    hi = max(f.values[i], f.values[i + 1])
    assert lo - 1e-12 <= v <= hi + 1e-12


def test_copy_with_replaces_values_only():
    f = quadratic_field(n=21)
    g = f.copy_with(values=np.zeros(21))
    assert np.array_equal(g.x, f.x)
    assert np.all(g.values == 0.0)
    assert f.values[5] != 0.0
