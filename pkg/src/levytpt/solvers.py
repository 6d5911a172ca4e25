"""Grid solvers for the nonlocal committor, density, and hitting-time equations.

All solvers discretize on a uniform window [lo, hi] with n nodes.  Local terms
use central differences (the committor is constant on the window tails beyond
jump reach, so cell Peclet numbers only matter between the regions, where they
are small); the stationary density uses exponentially fitted interface fluxes
instead, which keeps it positive under strong drift.  Nonlocal terms turn into
interpolation stencils at the jump destinations: committor-type fields clamp
to their edge values outside the window, densities extend by zero.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, NumericError
from .fields import ScalarField1D
from .models import LevyModel, Region

RHO_FLOOR = 1e-300


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    lo: float = -3.0
    hi: float = 3.0
    n: int = 1000
    n_quad: int = 64    # mark quadrature nodes per side
    n_theta: int = 16   # nodes for line integrals along a jump

    def grid(self) -> np.ndarray:
        if self.n < 200:
            raise ConfigError("solver grid needs at least 200 nodes")
        if not self.lo < self.hi:
            raise ConfigError("solver window needs lo < hi")
        return np.linspace(self.lo, self.hi, self.n)


@dataclasses.dataclass
class FieldSolution:
    """A solved field plus solve diagnostics.

    residual is the max over equation rows of |A x - rhs| scaled by the row
    magnitude and the solution magnitude; overshoot is the largest excursion
    outside the admissible range before clipping (committors only).
    """

    field: ScalarField1D
    residual: float
    overshoot: float = 0.0
    info: dict = dataclasses.field(default_factory=dict)


def _interp_stencil(y: np.ndarray, lo: float, dx: float, n: int, clamp: bool):
    """Linear interpolation stencil for query points y on the solver grid.

    Returns (j, wl, wr): columns j and j+1 with weights wl, wr.  clamp=True
    pins out-of-window queries to the edge node; clamp=False zeroes them.
    """
    t = (y - lo) / dx
    j = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    th = np.clip(t - j, 0.0, 1.0)
    wl = 1.0 - th
    wr = th
    if not clamp:
        out = (t < 0.0) | (t > n - 1.0)
        wl = np.where(out, 0.0, wl)
        wr = np.where(out, 0.0, wr)
    return j, wl, wr


def _d1_rows(n: int, dx: float, coeff: np.ndarray):
    """COO entries of diag(coeff) @ D1 (central, one-sided at the window edges)."""
    rows, cols, vals = [], [], []
    i = np.arange(1, n - 1)
    rows += [i, i]
    cols += [i - 1, i + 1]
    vals += [-coeff[1:-1] / (2 * dx), coeff[1:-1] / (2 * dx)]
    rows += [np.array([0, 0]), np.array([n - 1, n - 1])]
    cols += [np.array([0, 1]), np.array([n - 2, n - 1])]
    vals += [np.array([-1.0, 1.0]) * coeff[0] / dx,
             np.array([-1.0, 1.0]) * coeff[n - 1] / dx]
    return rows, cols, vals


def _d2_rows(n: int, dx: float, coeff: np.ndarray):
    """COO entries of diag(coeff) @ D2 (3-point; edge rows copy their neighbor)."""
    rows, cols, vals = [], [], []
    i = np.arange(1, n - 1)
    c = coeff[1:-1] / dx ** 2
    rows += [i, i, i]
    cols += [i - 1, i, i + 1]
    vals += [c, -2.0 * c, c]
    for edge, inner in ((0, 1), (n - 1, n - 2)):
        c0 = coeff[edge] / dx ** 2
        rows.append(np.array([edge] * 3))
        cols.append(np.array([inner - 1, inner, inner + 1]))
        vals.append(np.array([1.0, -2.0, 1.0]) * c0)
    return rows, cols, vals


def generator_matrix(model: LevyModel, x: np.ndarray, n_quad: int = 64) -> sp.csr_matrix:
    """Dense-row discretization of the forward generator on every node.

    Jump destinations outside the window clamp to the edge value, which is the
    right extension for committor-type unknowns (constant on the tails).
    """
    n = len(x)
    dx = x[1] - x[0]
    lo = x[0]
    b = np.asarray(model.drift(x), dtype=float)
    s2 = np.asarray(model.sigma2(x), dtype=float)

    rows, cols, vals = [], [], []
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        comp = 0.0
        diag = 0.0
        for rk, wk in zip(r, w):
            if model.sigma_l is not None:
                disp = model.sigma_l * rk
                y = x + disp
            else:
                disp = np.asarray(model.jump_amplitude(x, rk), dtype=float)
                y = x + disp
            j, wl, wr = _interp_stencil(y, lo, dx, n, clamp=True)
            i = np.arange(n)
            rows += [i, i]
            cols += [j, j + 1]
            vals += [wk * wl, wk * wr]
            if np.isscalar(disp):
                comp += wk * disp
                diag += wk
            else:
                comp = comp + wk * disp
                diag += wk
        # -nu(support) on the diagonal and the compensator against f'
        i = np.arange(n)
        rows.append(i)
        cols.append(i)
        vals.append(np.full(n, -diag))
        drift_coeff = b - comp
    else:
        drift_coeff = b

    r1, c1, v1 = _d1_rows(n, dx, drift_coeff)
    r2, c2, v2 = _d2_rows(n, dx, 0.5 * s2)
    rows += r1 + r2
    cols += c1 + c2
    vals += v1 + v2
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    return mat.tocsr()


def reverse_generator_matrix(model: LevyModel, rho: ScalarField1D, x: np.ndarray,
                             n_quad: int = 64) -> sp.csr_matrix:
    """Discretization of the time-reversed generator on every node.

    Only additive jump maps are supported here (the preimage of x under a jump
    with mark r is x - sigma_l r); the density is extended by zero outside its
    window, so preimages outside contribute nothing.
    """
    if model.has_jumps and model.sigma_l is None:
        raise ConfigError("reverse matrix assembly needs additive jumps; "
                          "use evaluate_reverse_generator for general maps")
    n = len(x)
    dx = x[1] - x[0]
    lo = x[0]
    b = np.asarray(model.drift(x), dtype=float)
    s2 = np.asarray(model.sigma2(x), dtype=float)
    rv = np.maximum(np.asarray(rho(x), dtype=float), 0.0)
    if np.any(rv <= RHO_FLOOR):
        raise NumericError("stationary density vanishes on the solver grid; "
                           "shrink the window or refine the density")
    s2rho_prime = np.gradient(s2 * rv, x, edge_order=2)

    rows, cols, vals = [], [], []
    drift_coeff = -b + s2rho_prime / rv
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        m1 = float(np.sum(w * r))
        drift_coeff = drift_coeff + model.sigma_l * m1
        i = np.arange(n)
        diag_acc = np.zeros(n)
        for rk, wk in zip(r, w):
            y = x - model.sigma_l * rk
            ry = np.interp(y, rho.x, rho.values, left=0.0, right=0.0)
            ratio = wk * ry / rv
            j, wl, wr = _interp_stencil(y, lo, dx, n, clamp=True)
            rows += [i, i]
            cols += [j, j + 1]
            vals += [ratio * wl, ratio * wr]
            diag_acc += ratio
        rows.append(i)
        cols.append(i)
        vals.append(-diag_acc)

    r1, c1, v1 = _d1_rows(n, dx, drift_coeff)
    r2, c2, v2 = _d2_rows(n, dx, 0.5 * s2)
    rows += r1 + r2
    cols += c1 + c2
    vals += v1 + v2
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    return mat.tocsr()


def _replace_rows(mat: sp.csr_matrix, special: np.ndarray,
                  extra_rows, extra_cols, extra_vals) -> sp.csr_matrix:
    """Drop all entries in rows flagged special, then add replacement entries."""
    coo = mat.tocoo()
    keep = ~special[coo.row]
    rows = np.concatenate([coo.row[keep], extra_rows])
    cols = np.concatenate([coo.col[keep], extra_cols])
    vals = np.concatenate([coo.data[keep], extra_vals])
    return sp.coo_matrix((vals, (rows, cols)), shape=mat.shape).tocsr()


def _neumann_entries(n: int, special: np.ndarray):
    """Zero-slope rows at window edges (skipped if the edge is a region node)."""
    rows, cols, vals = [], [], []
    if not special[0]:
        rows += [0, 0]
        cols += [0, 1]
        vals += [1.0, -1.0]
    if not special[n - 1]:
        rows += [n - 1, n - 1]
        cols += [n - 1, n - 2]
        vals += [1.0, -1.0]
    return rows, cols, vals


def _solve_sparse(mat: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    sol = spsolve(mat.tocsc(), rhs)
    if not np.all(np.isfinite(sol)):
        shifted = (mat + 1e-12 * sp.eye(mat.shape[0], format="csr")).tocsc()
        sol = spsolve(shifted, rhs)
        if not np.all(np.isfinite(sol)):
            raise NumericError("linear solve produced non-finite values; "
                               "the discretized operator is singular")
    return sol


def _scaled_residual(mat, rhs, sol, eq_rows) -> float:
    r = np.abs(mat @ sol - rhs)
    rowsum = np.abs(mat) @ np.ones(mat.shape[0])
    scale = np.maximum(rowsum, 1e-30) * max(1.0, float(np.max(np.abs(sol))))
    vals = r / scale
    return float(np.max(vals[eq_rows])) if np.any(eq_rows) else 0.0


def _committor_solve(mat, x, a, b, rhs_a, rhs_b, equilibrate):
    n = len(x)
    in_a = a.contains_closure(x)
    in_b = b.contains_closure(x)
    if not np.any(in_a) or not np.any(in_b):
        raise ConfigError("a region contains no grid nodes; refine the grid "
                          "or widen the window")
    special = in_a | in_b
    er, ec, ev = [], [], []
    idx = np.where(special)[0]
    er += list(idx)
    ec += list(idx)
    ev += [1.0] * len(idx)
    nr, nc, nv = _neumann_entries(n, special)
    # edge rows get replaced only when they are not already region rows
    sys_special = special.copy()
    sys_special[0] = True
    sys_special[-1] = True
    mat2 = _replace_rows(mat, sys_special,
                         np.array(er + nr, dtype=np.int64),
                         np.array(ec + nc, dtype=np.int64),
                         np.array(ev + nv, dtype=float))
    rhs = np.zeros(n)
    rhs[in_a] = rhs_a
    rhs[in_b] = rhs_b
    if equilibrate:
        rowmax = np.abs(mat2).max(axis=1).toarray().ravel()
        rowmax = np.maximum(rowmax, 1e-30)
        d = sp.diags(1.0 / rowmax)
        sol = _solve_sparse((d @ mat2).tocsr(), rhs / rowmax)
    else:
        sol = _solve_sparse(mat2, rhs)
    eq_rows = ~sys_special
    resid = _scaled_residual(mat2, rhs, sol, eq_rows)
    overshoot = float(max(0.0, np.max(sol - 1.0), np.max(-sol)))
    clipped = np.clip(sol, 0.0, 1.0)
    return clipped, resid, overshoot, int(in_a.sum()), int(in_b.sum())


def _check_window(x: np.ndarray, model: LevyModel, regions) -> None:
    # Nonlocal lookups from nodes beside a region must stay on the grid, so
    # the window has to clear the outermost region edges by the jump reach.
    reach = model.max_jump_reach()
    lo_edge = min(r.bounds()[0] for r in regions)
    hi_edge = max(r.bounds()[1] for r in regions)
    if x[0] > lo_edge - reach + 1e-12 or x[-1] < hi_edge + reach - 1e-12:
        raise ConfigError(
            f"solver window [{x[0]:g}, {x[-1]:g}] must cover the region edges "
            f"[{lo_edge:g}, {hi_edge:g}] with a collar of {reach:g}")


def solve_forward_committor_1d(model: LevyModel, a: Region, b: Region,
                               cfg: Optional[SolverConfig] = None) -> FieldSolution:
    """Probability of entering the closure of b before the closure of a.

    Equation rows hold on every node outside both closures (including window
    tails); region nodes are pinned to 0 / 1 and the window edges carry
    zero-slope rows.
    """
    cfg = cfg or SolverConfig()
    x = cfg.grid()
    _check_window(x, model, (a, b))
    mat = generator_matrix(model, x, cfg.n_quad)
    vals, resid, over, na, nb = _committor_solve(mat, x, a, b, 0.0, 1.0,
                                                 equilibrate=False)
    fld = ScalarField1D(x, vals, edge="clamp", name="committor")
    return FieldSolution(fld, resid, over, info={"nodes_a": na, "nodes_b": nb})


def solve_backward_committor_1d(model: LevyModel, rho: ScalarField1D,
                                a: Region, b: Region,
                                cfg: Optional[SolverConfig] = None) -> FieldSolution:
    """Probability, under the stationary time reversal, that the path came
    from a more recently than from b (1 on a's closure, 0 on b's)."""
    cfg = cfg or SolverConfig()
    x = cfg.grid()
    _check_window(x, model, (a, b))
    mat = reverse_generator_matrix(model, rho, x, cfg.n_quad)
    vals, resid, over, na, nb = _committor_solve(mat, x, a, b, 1.0, 0.0,
                                                 equilibrate=True)
    fld = ScalarField1D(x, vals, edge="clamp", name="backward_committor")
    return FieldSolution(fld, resid, over, info={"nodes_a": na, "nodes_b": nb})


def solve_mean_hitting_time_1d(model: LevyModel, target: Region,
                               cfg: Optional[SolverConfig] = None) -> FieldSolution:
    """Expected time to enter the target closure, solved on the window with
    zero-slope edge rows (the window must hold essentially all mass)."""
    cfg = cfg or SolverConfig()
    x = cfg.grid()
    _check_window(x, model, (target,))
    n = len(x)
    mat = generator_matrix(model, x, cfg.n_quad)
    in_t = target.contains_closure(x)
    if not np.any(in_t):
        raise ConfigError("target region contains no grid nodes")
    sys_special = in_t.copy()
    sys_special[0] = True
    sys_special[-1] = True
    idx = np.where(in_t)[0]
    nr, nc, nv = _neumann_entries(n, in_t)
    mat2 = _replace_rows(mat, sys_special,
                         np.array(list(idx) + nr, dtype=np.int64),
                         np.array(list(idx) + nc, dtype=np.int64),
                         np.array([1.0] * len(idx) + nv, dtype=float))
    rhs = np.where(sys_special, 0.0, -1.0)
    sol = _solve_sparse(mat2, rhs)
    if np.any(sol < -1e-8):
        raise NumericError("mean hitting time came out negative; the window "
                           "is too small or the grid too coarse")
    resid = _scaled_residual(mat2, rhs, sol, ~sys_special)
    fld = ScalarField1D(x, np.maximum(sol, 0.0), edge="clamp", name="hitting_time")
    return FieldSolution(fld, resid, info={"nodes_target": int(in_t.sum())})


# ---------------------------------------------------------------------------
# stationary density
# ---------------------------------------------------------------------------

def _bernoulli(w: np.ndarray) -> np.ndarray:
    """w / (e^w - 1), series near zero."""
    out = np.empty_like(w)
    small = np.abs(w) < 1e-5
    ws = w[small]
    out[small] = 1.0 - ws / 2.0 + ws * ws / 12.0
    wb = w[~small]
    out[~small] = wb / np.expm1(wb)
    return out


def stationary_flux_matrix(model: LevyModel, x: np.ndarray, n_quad: int = 64,
                           n_theta: int = 16) -> sp.csr_matrix:
    """Rows m = 0..n-2: total stationary flux through the midpoint m + 1/2.

    The local part uses exponential fitting (exact for locally constant drift
    over a cell, positivity preserving); the jump part integrates the density
    along each jump line with a Gauss rule in the crossing parameter.  The
    density is extended by zero outside the window.
    """
    n = len(x)
    dx = x[1] - x[0]
    lo = x[0]
    xm = 0.5 * (x[:-1] + x[1:])
    d_nodes = 0.5 * np.asarray(model.sigma2(x), dtype=float)
    dm = 0.5 * (d_nodes[:-1] + d_nodes[1:])
    if np.any(dm <= 0):
        raise ConfigError("stationary density solve needs sigma > 0 on the window")
    v = np.asarray(model.drift(xm), dtype=float)
    v = v - (d_nodes[1:] - d_nodes[:-1]) / dx
    if model.has_jumps:
        v = v - (model.sigma_l or 0.0) * model.levy_measure.moment(1)

    m = np.arange(n - 1)
    w = v * dx / dm
    bm = _bernoulli(-w) * dm / dx
    bp = _bernoulli(w) * dm / dx
    rows = [m, m]
    cols = [m, m + 1]
    vals = [bm, -bp]

    if model.has_jumps:
        if model.sigma_l is None:
            raise ConfigError("stationary density assembly needs additive jumps")
        r, wq = model.levy_measure.quadrature(n_quad)
        from .models import gauss_legendre
        th, wth = gauss_legendre(n_theta, 0.0, 1.0)
        for rk, wk in zip(r, wq):
            disp = model.sigma_l * rk
            for tj, wj in zip(th, wth):
                y = xm - tj * disp
                j, wl, wr = _interp_stencil(y, lo, dx, n, clamp=False)
                c = wk * wj * disp
                rows += [m, m]
                cols += [j, j + 1]
                vals += [c * wl, c * wr]

    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n - 1, n))
    return mat.tocsr()


def solve_stationary_density_1d(model: LevyModel,
                                cfg: Optional[SolverConfig] = None) -> FieldSolution:
    """Stationary density on the window, normalized so that sum(rho) dx = 1.

    In one dimension the stationary flux vanishes identically, so the system
    is: zero flux through every interior midpoint plus the normalization row.
    """
    cfg = cfg or SolverConfig()
    x = cfg.grid()
    n = len(x)
    dx = x[1] - x[0]
    flux = stationary_flux_matrix(model, x, cfg.n_quad, cfg.n_theta)
    norm_row = sp.coo_matrix((np.full(n, dx), (np.zeros(n, dtype=np.int64),
                                               np.arange(n))), shape=(1, n))
    mat = sp.vstack([flux, norm_row]).tocsr()
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    sol = _solve_sparse(mat, rhs)
    min_val = float(np.min(sol))
    if min_val < -1e-8 * float(np.max(np.abs(sol))):
        raise NumericError("stationary density solve produced significantly "
                           "negative values; refine the grid")
    sol = np.maximum(sol, 0.0)
    sol = sol / (np.sum(sol) * dx)
    resid = _scaled_residual(mat, rhs, sol,
                             np.arange(n) < n - 1)
    fld = ScalarField1D(x, sol, edge="zero", name="stationary_density")
    return FieldSolution(fld, resid, info={"min_before_clip": min_val})


# ---------------------------------------------------------------------------
# diffusion closed form
# ---------------------------------------------------------------------------

def _potential_from_model(model: LevyModel):
    if model.potential is not None:
        return model.potential
    if model.drift_poly is not None:
        c = np.asarray(model.drift_poly, dtype=float)
        anti = np.concatenate([[0.0], -c / np.arange(1, len(c) + 1)])

        def u(xv):
            xv = np.asarray(xv, dtype=float)
            out = np.zeros_like(xv)
            for ck in anti[::-1]:
                out = out * xv + ck
            return out

        return u
    raise ConfigError("closed-form committor needs a potential or polynomial drift")


def diffusion_committor_closed_form(model: LevyModel, a: Region, b: Region,
                                    cfg: Optional[SolverConfig] = None) -> ScalarField1D:
    """Quadrature evaluation of the reversible-diffusion committor.

    Valid only for models without jumps and with constant sigma; used as an
    independent cross-check of the grid solver in the vanishing-jump limit.
    """
    if model.has_jumps:
        raise ConfigError("closed form holds for pure diffusions only")
    if model.sigma_const is None or model.sigma_const <= 0:
        raise ConfigError("closed form needs constant positive sigma")
    if a.kind != "interval" or b.kind != "interval" or a.hi >= b.lo:
        raise ConfigError("closed form needs interval regions with a left of b")
    cfg = cfg or SolverConfig()
    x = cfg.grid()
    u = _potential_from_model(model)
    beta = 2.0 / model.sigma_const ** 2
    u0 = float(u(0.5 * (a.hi + b.lo)))  # shift to keep the integrand in range

    def s(y):
        return np.exp(beta * (u(y) - u0))

    denom, _ = quad(s, a.hi, b.lo, epsabs=1e-13, epsrel=1e-13, limit=400)
    vals = np.empty_like(x)
    for i, xi in enumerate(x):
        if xi <= a.hi:
            vals[i] = 0.0
        elif xi >= b.lo:
            vals[i] = 1.0
        else:
            num, _ = quad(s, a.hi, xi, epsabs=1e-13, epsrel=1e-13, limit=400)
            vals[i] = num / denom
    return ScalarField1D(x, np.clip(vals, 0.0, 1.0), edge="clamp",
                         name="committor_closed_form")


def diffusion_committor_value(model: LevyModel, a: Region, b: Region,
                              x: float) -> float:
    """Pointwise closed-form committor for a reversible diffusion."""
    if model.has_jumps:
        raise ConfigError("closed form holds for pure diffusions only")
    if model.sigma_const is None or model.sigma_const <= 0:
        raise ConfigError("closed form needs constant positive sigma")
    u = _potential_from_model(model)
    beta = 2.0 / model.sigma_const ** 2
    u0 = float(u(0.5 * (a.hi + b.lo)))

    def s(y):
        return np.exp(beta * (u(y) - u0))

    if x <= a.hi:
        return 0.0
    if x >= b.lo:
        return 1.0
    denom, _ = quad(s, a.hi, b.lo, epsabs=1e-13, epsrel=1e-13, limit=400)
    num, _ = quad(s, a.hi, x, epsabs=1e-13, epsrel=1e-13, limit=400)
    return float(num / denom)
