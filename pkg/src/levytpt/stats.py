"""Reactive densities, boundary distributions, currents and rates.

Everything here is pure post-processing of three solved fields (stationary
density, forward and backward committors) on one shared grid.  The reactive
current is assembled in the product form rho*q*qbar so the committor
quotient never meets a zero denominator, and its nonlocal part integrates
the jump transport along each jump line, so the local second-derivative
term carries the diffusion coefficient only.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError
from .fields import ScalarField1D
from .models import LevyModel, Region, gauss_legendre
from .solvers import generator_matrix, reverse_generator_matrix


def reactive_density(rho: ScalarField1D, q: ScalarField1D,
                     qbar: ScalarField1D) -> tuple:
    """(rho_r, z_ab, rho_ab): unnormalized reactive density rho*q*qbar, the
    probability z_ab that a stationary sample sits on a transition leg, and
    the normalized transition density."""
    _shared_grid(rho, q, qbar)
    vals = rho.values * q.values * qbar.values
    z_ab = float(np.trapezoid(vals, rho.x))
    if not 0.0 < z_ab < 1.0:
        raise NumericError(f"reactive mass z_ab = {z_ab:.3g} outside (0, 1); "
                           "check the input fields")
    rho_r = ScalarField1D(rho.x, vals, edge="zero", name="reactive_density")
    rho_ab = ScalarField1D(rho.x, vals / z_ab, edge="zero",
                           name="transition_density")
    return rho_r, z_ab, rho_ab


def _shared_grid(*fields) -> None:
    x0 = fields[0].x
    for f in fields[1:]:
        if len(f.x) != len(x0) or f.x[0] != x0[0] or f.x[-1] != x0[-1]:
            raise ConfigError("fields must share one grid")


def hitting_distribution(surface, rho: ScalarField1D, q: ScalarField1D,
                         qbar: ScalarField1D, a: Region, b: Region) -> tuple:
    """Weights of the crossing points of a dividing surface.

    surface is either an explicit sequence of points or ("level", z) for the
    level set {q = z}; in one dimension both reduce to a finite point set.
    Returns (points, weights) with weights proportional to rho*q*qbar at the
    points and summing to one.
    """
    _shared_grid(rho, q, qbar)
    if isinstance(surface, tuple) and len(surface) == 2 and surface[0] == "level":
        pts = level_crossings(q, float(surface[1]))
        if len(pts) == 0:
            raise ConfigError(f"level set q = {surface[1]} is empty on the grid")
    else:
        pts = np.atleast_1d(np.asarray(surface, dtype=float))
    for p in pts:
        if a.contains_closure(p) or b.contains_closure(p):
            raise ConfigError(f"surface point {p} lies inside a region closure")
    w = (np.interp(pts, rho.x, rho.values)
         * np.interp(pts, q.x, q.values)
         * np.interp(pts, qbar.x, qbar.values))
    total = w.sum()
    if total <= 0:
        raise NumericError("surface carries no reactive mass")
    return pts, w / total


def level_crossings(q: ScalarField1D, z: float) -> np.ndarray:
    """States where the piecewise-linear committor crosses the level z."""
    if not 0.0 < z < 1.0:
        raise ConfigError("level must lie strictly between 0 and 1")
    v = q.values - z
    s = np.sign(v)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    x = q.x
    out = [x[i] + (x[i + 1] - x[i]) * v[i] / (v[i] - v[i + 1]) for i in idx]
    out += [x[i] for i in np.nonzero(v == 0.0)[0]]
    return np.sort(np.array(out))


# ---------------------------------------------------------------------------
# boundary distributions
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class BoundaryDistributions:
    """Normalized exit / entrance / start densities of the transition legs.

    eta_a_minus: where the A-to-B legs last sit inside the source closure.
    eta_b_plus:  where they first land inside the destination closure.
    eta_a_star:  where they start, just outside the source (two channels:
                 jumps from inside weighted by the committor at the landing
                 point, plus the diffusive wall atom).
    eta_a_plus:  where the B-to-A legs first land inside A (feeds the
                 hitting-time rate).
    eta_b_minus: where they last sit inside B.
    """

    eta_a_minus: ScalarField1D
    eta_b_plus: ScalarField1D
    eta_a_star: ScalarField1D
    eta_a_plus: ScalarField1D
    eta_b_minus: ScalarField1D
    # unnormalized total of the start construction; this is the implied
    # transition rate and should agree with the current through any level set
    start_rate: float = float("nan")


def _normalized_restriction(raw: np.ndarray, x: np.ndarray, mask: np.ndarray,
                            what: str) -> ScalarField1D:
    """Restrict to the mask, keep the dominant sign, renormalize to a density.

    Mass of the opposite sign above 1% of the dominant mass signals a sign
    error or a bad input density and raises instead of being floored away.
    """
    vals = np.where(mask, raw, 0.0)
    pos = float(vals[vals > 0].sum())
    neg = float(-vals[vals < 0].sum())
    dominant, bad = max(pos, neg), min(pos, neg)
    if dominant <= 0:
        raise NumericError(f"{what}: no mass on its support")
    if bad > 0.01 * dominant:
        raise NumericError(f"{what}: opposite-sign mass is {bad / dominant:.1%} "
                           "of the total; check field signs")
    if neg > pos:
        vals = -vals
    vals = np.maximum(vals, 0.0)
    dx = x[1] - x[0]
    return ScalarField1D(x, vals / (vals.sum() * dx), edge="zero", name=what)


def boundary_distributions(model: LevyModel, rho: ScalarField1D,
                           q: ScalarField1D, qbar: ScalarField1D,
                           a: Region, b: Region,
                           n_quad: int = 64,
                           indicator_pushforward: bool = False
                           ) -> BoundaryDistributions:
    """Exit, entrance and start densities from the solved fields.

    rho * (L q) restricted to the source closure is the exit density of the
    A-to-B legs (the nonlocal term keeps it positive there even though q
    vanishes locally); its negative part on the destination closure is the
    exit density of the reverse legs.  rho * (reverse-L qbar) plays the same
    role for entrances.  The start density combines the jump exits, weighted
    by the committor at the landing point, with the diffusive wall atom.
    """
    _shared_grid(rho, q, qbar)
    x = rho.x
    gen = generator_matrix(model, x, n_quad)
    rev = reverse_generator_matrix(model, rho, x, n_quad)
    rho_lq = rho.values * (gen @ q.values)
    rho_lbqb = rho.values * (rev @ qbar.values)
    in_a = np.asarray(a.contains_closure(x))
    in_b = np.asarray(b.contains_closure(x))
    eta_a_minus = _normalized_restriction(rho_lq, x, in_a, "exit_distribution")
    eta_b_minus = _normalized_restriction(-rho_lq, x, in_b, "reverse_exit_distribution")
    eta_a_plus = _normalized_restriction(-rho_lbqb, x, in_a, "reverse_entrance_distribution")
    eta_b_plus = _normalized_restriction(rho_lbqb, x, in_b, "entrance_distribution")
    eta_a_star, start_rate = _start_distribution(model, rho, q, qbar, a,
                                                 eta_a_minus, n_quad,
                                                 indicator_pushforward)
    return BoundaryDistributions(eta_a_minus=eta_a_minus, eta_b_plus=eta_b_plus,
                                 eta_a_star=eta_a_star, eta_a_plus=eta_a_plus,
                                 eta_b_minus=eta_b_minus, start_rate=start_rate)


def _splat(acc: np.ndarray, x: np.ndarray, targets: np.ndarray,
           weights: np.ndarray) -> None:
    """Deposit point masses onto the grid by linear splitting (adjoint of
    linear interpolation); off-grid targets are dropped."""
    dx = x[1] - x[0]
    t = (targets - x[0]) / dx
    ok = (t >= 0.0) & (t <= len(x) - 1)
    t = t[ok]
    w = weights[ok]
    j = np.minimum(t.astype(np.int64), len(x) - 2)
    frac = t - j
    np.add.at(acc, j, w * (1.0 - frac))
    np.add.at(acc, j + 1, w * frac)


def _start_distribution(model: LevyModel, rho: ScalarField1D,
                        q: ScalarField1D, qbar: ScalarField1D, a: Region,
                        eta_a_minus: ScalarField1D, n_quad: int,
                        indicator_pushforward: bool) -> tuple:
    x = rho.x
    dx = x[1] - x[0]
    in_a = np.asarray(a.contains_closure(x))
    acc = np.zeros(len(x))
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        disp = (model.sigma_l or 0.0) * r
        src = np.nonzero(in_a)[0]
        if indicator_pushforward:
            base = eta_a_minus.values[src] * dx
        else:
            base = rho.values[src] * dx
        for dk, wk in zip(disp, w):
            _splat(acc, x, x[src] + dk, base * wk)
        acc /= dx   # deposited point masses -> density on the grid
    if indicator_pushforward:
        acc[in_a] = 0.0
    else:
        # committor weight selects starts that go on to finish the crossing,
        # and kills landings inside the source closure where q = 0
        acc *= q.values
        lo_w, hi_w = a.bounds()
        s2 = model.sigma2(np.array([lo_w, hi_w]))
        dq = q.derivative()
        for wall, outside_dir in ((lo_w, -1.0), (hi_w, 1.0)):
            if not x[0] < wall < x[-1]:
                continue
            # successful diffusive crossings arrive at the wall itself, at
            # the rate of the local transition current there
            slope = abs(float(dq(wall + outside_dir * dx)))
            atom = 0.5 * float(s2[0 if wall == lo_w else 1]) \
                * float(np.interp(wall, rho.x, rho.values)) \
                * float(np.interp(wall, qbar.x, qbar.values)) * slope
            k = int(np.searchsorted(x, wall))
            if outside_dir < 0:
                k -= 1
            if 0 <= k < len(x) and not in_a[k]:
                acc[k] += atom / dx
    total = acc.sum() * dx
    if total <= 0:
        raise NumericError("start distribution carries no mass")
    fld = ScalarField1D(x, acc / total, edge="zero", name="start_distribution")
    return fld, (float("nan") if indicator_pushforward else float(total))


# ---------------------------------------------------------------------------
# reactive current
# ---------------------------------------------------------------------------

def probability_current_1d(model: LevyModel, rho: ScalarField1D,
                           q: ScalarField1D, qbar: ScalarField1D,
                           n_quad: int = 128, n_theta: int = 16) -> ScalarField1D:
    """Reactive probability current of the A-to-B transition legs.

    J = (b - int F nu) rho q qbar + Sigma rho qbar dq/dx
        + int int_0^1 F q(y+F) rho(y) qbar(y)|_{y = x - theta F} dtheta nu(dr)
        - 1/2 d/dx (Sigma rho q qbar)

    with Sigma the diffusion coefficient alone; all jump transport, second
    moments included, lives in the line integral.  The committor-quotient
    drift has been multiplied through, so nothing divides by q.
    """
    _shared_grid(rho, q, qbar)
    x = rho.x
    bx = np.asarray(model.drift(x), dtype=float)
    s2 = np.asarray(model.sigma2(x), dtype=float)
    m1 = model.levy_measure.moment(1) if model.has_jumps else 0.0
    sl = model.sigma_l or 0.0
    prod = rho.values * q.values * qbar.values
    j = (bx - sl * m1) * prod
    j += s2 * rho.values * qbar.values * np.gradient(q.values, x)
    j -= 0.5 * np.gradient(s2 * prod, x)
    if model.has_jumps:
        j += _nonlocal_current(model, rho, q, qbar, n_quad, n_theta)
    if not np.all(np.isfinite(j)):
        k = int(np.nonzero(~np.isfinite(j))[0][0])
        raise NumericError(f"current is non-finite at x = {x[k]:.6g}")
    return ScalarField1D(x, j, edge="zero", name="reactive_current")


def _nonlocal_current(model, rho, q, qbar, n_quad, n_theta) -> np.ndarray:
    x = rho.x
    r, w = model.levy_measure.quadrature(n_quad)
    disp = (model.sigma_l or 0.0) * r
    th, wth = gauss_legendre(n_theta, 0.0, 1.0)
    out = np.zeros(len(x))
    for tj, wj in zip(th, wth):
        y = x[:, None] - tj * disp[None, :]
        ry = np.interp(y, rho.x, rho.values, left=0.0, right=0.0)
        qby = np.interp(y, qbar.x, qbar.values)
        qd = np.interp(y + disp[None, :], q.x, q.values)
        out += wj * ((w * disp) * ry * qby * qd).sum(axis=1)
    return out


def diffusion_current_1d(model: LevyModel, rho: ScalarField1D,
                         q: ScalarField1D, qbar: ScalarField1D) -> ScalarField1D:
    """The no-jump reactive current, written out separately as a check on the
    general assembly (same derivative stencils, no shared code path)."""
    if model.has_jumps:
        raise ConfigError("diffusion current is defined for jump-free models")
    x = rho.x
    drift_part = np.asarray(model.drift(x), dtype=float) \
        * rho.values * q.values * qbar.values
    s2 = np.asarray(model.sigma2(x), dtype=float)
    gradient_part = s2 * rho.values * qbar.values * np.gradient(q.values, x)
    transport = s2 * rho.values * q.values * qbar.values
    vals = drift_part + gradient_part - 0.5 * np.gradient(transport, x)
    return ScalarField1D(x, vals, edge="zero", name="diffusion_current")


def divergence_residual(j: ScalarField1D, a: Optional[Region] = None,
                        b: Optional[Region] = None, margin: int = 3) -> float:
    """max |dJ/dx| over the channel interior.

    Nodes inside the region closures, within `margin` cells of their walls
    (where the volumetric boundary rows make the current kink by design) and
    the two outermost grid cells are excluded.
    """
    x = j.x
    div = np.gradient(j.values, x)
    keep = np.ones(len(x), dtype=bool)
    keep[:2] = keep[-2:] = False
    dx = x[1] - x[0]
    for reg in (a, b):
        if reg is not None:
            keep &= ~np.asarray(reg.collar_contains(x, margin * dx))
    if not keep.any():
        raise ConfigError("no interior nodes left after masking")
    return float(np.max(np.abs(div[keep])))


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def rate_from_flux(j: ScalarField1D, q: ScalarField1D, z: float = 0.5) -> float:
    """Net current through the level set {q = z}: the sum of J at the
    crossing points, signed by the direction q increases through each."""
    if not 0.0 < z < 1.0:
        raise ConfigError("level must lie strictly between 0 and 1")
    v = q.values - z
    s = np.sign(v)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if len(idx) == 0:
        raise ConfigError(f"level set q = {z} is empty on the grid")
    x = q.x
    total = 0.0
    span = float(np.max(np.abs(np.diff(q.values))))
    for i in idx:
        dq = q.values[i + 1] - q.values[i]
        if abs(dq) < 1e-12 * max(span, 1e-300):
            raise NumericError(f"level q = {z} is degenerate near x = {x[i]:.6g}; "
                               "choose a different level")
        t = v[i] / (v[i] - v[i + 1])
        xc = x[i] + t * (x[i + 1] - x[i])
        total += float(np.interp(xc, j.x, j.values)) * (1.0 if dq > 0 else -1.0)
    return total


def rate_from_hitting_times(u_a: ScalarField1D, u_b: ScalarField1D,
                            eta_a_plus: ScalarField1D,
                            eta_b_plus: ScalarField1D) -> dict:
    """Cycle-time rate from the mean hitting times and entrance densities.

    t_ab averages the time to reach B over where the reverse legs enter A;
    k is the reciprocal of the full cycle time.  The sum-of-reciprocals
    value is reported alongside for comparison, not asserted against.
    """
    _shared_grid(u_a, u_b, eta_a_plus, eta_b_plus)
    dx = u_a.x[1] - u_a.x[0]
    t_ab = float(np.sum(eta_a_plus.values * u_b.values) * dx)
    t_ba = float(np.sum(eta_b_plus.values * u_a.values) * dx)
    if t_ab <= 0 or t_ba <= 0:
        raise NumericError(f"non-positive mean transition times "
                           f"(t_ab = {t_ab:.3g}, t_ba = {t_ba:.3g})")
    return {"k_hitting": 1.0 / (t_ab + t_ba), "t_ab": t_ab, "t_ba": t_ba,
            "reciprocal_sum_value": 1.0 / t_ab + 1.0 / t_ba}


@dataclasses.dataclass
class RateReport:
    k_count: float
    k_flux: dict            # level -> rate
    k_hitting: float
    t_ab: float
    t_ba: float
    reciprocal_sum_value: float
    discrepancies: dict     # pair label -> relative discrepancy

    def max_discrepancy(self) -> float:
        return max(self.discrepancies.values())


def rate_report(k_count: float, j: ScalarField1D, q: ScalarField1D,
                u_a: ScalarField1D, u_b: ScalarField1D,
                eta_a_plus: ScalarField1D, eta_b_plus: ScalarField1D,
                levels=(0.2, 0.5, 0.8)) -> RateReport:
    """The three rate estimators side by side with pairwise discrepancies
    relative to the larger of each pair."""
    k_flux = {z: rate_from_flux(j, q, z) for z in levels}
    ht = rate_from_hitting_times(u_a, u_b, eta_a_plus, eta_b_plus)
    kf = k_flux[0.5] if 0.5 in k_flux else list(k_flux.values())[len(k_flux) // 2]
    trio = {"count": k_count, "flux": kf, "hitting": ht["k_hitting"]}
    for name, v in trio.items():
        if v <= 0:
            raise NumericError(f"rate estimator {name} is non-positive: {v:.3g}")
    disc = {}
    names = list(trio)
    for i in range(len(names)):
        for k in range(i + 1, len(names)):
            hi = max(trio[names[i]], trio[names[k]])
            disc[f"{names[i]}/{names[k]}"] = abs(trio[names[i]] - trio[names[k]]) / hi
    return RateReport(k_count=k_count, k_flux=k_flux, k_hitting=ht["k_hitting"],
                      t_ab=ht["t_ab"], t_ba=ht["t_ba"],
                      reciprocal_sum_value=ht["reciprocal_sum_value"],
                      discrepancies=disc)
