"""Pointwise evaluation of the generator and its time reversal on gridded fields.

The generator of the jump-diffusion acts on a test function f as

    Lf(x) = b(x) f'(x) + (Sigma(x)/2) f''(x)
            + integral over marks of [f(x + F(x,r)) - f(x) - F(x,r) f'(x)] nu(dr),

with the mark integral over the truncated support of the jump measure.  The
time-reversed generator with respect to a stationary density rho is

    Lbar f(x) = -b f' + (1/rho) d(Sigma rho)/dx f' + (Sigma/2) f''
            + integral of [f(y) - f(x) - F(x,r) f'(x)] (rho(y)/rho(x)) nu(dr)
            + integral of ((rho(y) + rho(x))/rho(x)) F(x,r) f'(x) nu(dr),

where y is the preimage of x under the full jump map.  Both evaluators share
their difference stencils and quadrature with the grid solvers, so applying
them to a solved field at a grid node reproduces the solver residual.

Derivatives are central differences on the field's grid, interpolated between
nodes; out-of-window lookups follow each field's edge policy.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .fields import ScalarField1D
from .models import LevyModel

RHO_FLOOR = 1e-300


def _check_window(f: ScalarField1D, x: float) -> None:
    if not (f.x[0] <= x <= f.x[-1]):
        raise ConfigError(
            f"state {x:.6g} outside the field window [{f.x[0]:.6g}, {f.x[-1]:.6g}]")


def _jump_destinations(model: LevyModel, x, r):
    """x + F(x, r) for an array of marks at one state."""
    if model.sigma_l is not None:
        return x + model.sigma_l * r
    return np.array([x + float(model.jump_amplitude(np.asarray(x), rk)) for rk in r])


def evaluate_generator(model: LevyModel, f: ScalarField1D, x: float,
                       n_quad: int = 64) -> float:
    """(Lf)(x) with the jump integral by Gauss-Legendre quadrature per mark sign."""
    x = float(x)
    _check_window(f, x)
    df = f.derivative()
    d2f = f.second_derivative()
    dfx = df(x)
    out = float(model.drift(np.asarray(x))) * dfx \
        + 0.5 * float(model.sigma2(np.asarray(x))) * d2f(x)
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        dest = _jump_destinations(model, x, r)
        fv = f(dest)
        fdisp = dest - x
        out += float(np.sum(w * (fv - f(x) - fdisp * dfx)))
    return out


def evaluate_reverse_generator(model: LevyModel, rho: ScalarField1D,
                               f: ScalarField1D, x: float,
                               n_quad: int = 64) -> float:
    """(Lbar f)(x), the generator of the time reversal under stationary rho."""
    x = float(x)
    _check_window(f, x)
    _check_window(rho, x)
    rx = rho(x)
    if rx < RHO_FLOOR:
        raise NumericError(f"stationary density at x={x:.6g} below {RHO_FLOOR}; "
                           "reverse-generator weight is singular")
    df = f.derivative()
    d2f = f.second_derivative()
    dfx = df(x)

    sr = ScalarField1D(rho.x, model.sigma2(rho.x) * rho.values,
                       edge=rho.edge, name="sigma2*rho")
    out = -float(model.drift(np.asarray(x))) * dfx \
        + sr.derivative()(x) / rx * dfx \
        + 0.5 * float(model.sigma2(np.asarray(x))) * d2f(x)

    if model.has_jumps:
        if model.jump_amplitude_inverse is None:
            raise ConfigError("reverse generator needs jump_amplitude_inverse")
        r, w = model.levy_measure.quadrature(n_quad)
        if model.sigma_l is not None:
            y = x - model.sigma_l * r
            disp = model.sigma_l * r
        else:
            pairs = [model.jump_amplitude_inverse(x, rk, 1.0) for rk in r]
            y = np.array([p[0] for p in pairs], dtype=float)
            disp = np.array([float(model.jump_amplitude(np.asarray(x), rk)) for rk in r])
        ry = rho(y)
        fy = f(y)
        fx = f(x)
        out += float(np.sum(w * ((fy - fx - disp * dfx) * ry / rx
                                 + (ry + rx) / rx * disp * dfx)))
    return out


def apply_generator(model: LevyModel, f: ScalarField1D,
                    n_quad: int = 64) -> ScalarField1D:
    """Lf evaluated at every grid node, vectorized; same stencils as evaluate_generator."""
    x = f.x
    df = f.derivative().values
    d2f = f.second_derivative().values
    out = model.drift(x) * df + 0.5 * model.sigma2(x) * d2f
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        for rk, wk in zip(r, w):
            disp = model.jump_amplitude(x, rk)
            fv = np.interp(x + disp, x, f.values)  # clamp at window edges
            out = out + wk * (fv - f.values - disp * df)
    return ScalarField1D(x, out, edge="clamp", name=f"L({f.name})" if f.name else "")


def apply_reverse_generator(model: LevyModel, rho: ScalarField1D,
                            f: ScalarField1D, n_quad: int = 64) -> ScalarField1D:
    """Lbar f at every grid node; rho is zero-extended beyond the window."""
    if not np.array_equal(rho.x, f.x):
        raise ConfigError("rho and f must share one grid")
    if np.any(rho.values < RHO_FLOOR):
        raise NumericError("stationary density touches the singular-weight floor")
    x = f.x
    df = f.derivative().values
    d2f = f.second_derivative().values
    sr = ScalarField1D(x, model.sigma2(x) * rho.values, edge=rho.edge).derivative().values
    out = -model.drift(x) * df + sr / rho.values * df + 0.5 * model.sigma2(x) * d2f
    if model.has_jumps:
        if model.sigma_l is None:
            raise ConfigError("vectorized reverse generator supports additive jumps only; "
                              "use evaluate_reverse_generator for general jump maps")
        r, w = model.levy_measure.quadrature(n_quad)
        for rk, wk in zip(r, w):
            disp = model.jump_amplitude(x, rk)
            y = x - disp
            ry = np.interp(y, x, rho.values, left=0.0, right=0.0)
            fv = np.interp(y, x, f.values)
            out = out + wk * ((fv - f.values - disp * df) * ry / rho.values
                              + (ry + rho.values) / rho.values * disp * df)
    return ScalarField1D(x, out, edge="clamp", name=f"Lbar({f.name})" if f.name else "")
