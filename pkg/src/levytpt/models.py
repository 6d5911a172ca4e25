"""Model layer: jump-diffusion coefficients, jump measures, and metastable regions.

A model bundles the drift b, the diffusion sigma (Sigma = sigma sigma^T), the
jump amplitude F(x, r), and the jump intensity measure nu restricted to small
marks r_min <= |r| < r_max.  Models with additive jumps F(x, r) = sigma_l * r
get closed-form inverse maps for the adjoint/time-reversed operators; anything
else must supply its own inverse.

All objects here are immutable after construction and safe to share across
worker threads.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError

_GL_CACHE: dict = {}


def gauss_legendre(n: int, a: float, b: float):
    """Gauss-Legendre nodes and weights on [a, b], cached."""
    key = (n, float(a), float(b))
    if key not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        half = 0.5 * (b - a)
        _GL_CACHE[key] = (a + half * (x + 1.0), half * w)
    return _GL_CACHE[key]


# ---------------------------------------------------------------------------
# jump measures
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class LevyMeasureSpec:
    """Jump intensity measure on r_min <= |r| < r_max.

    Parameters
    ----------
    kind : str
        One of "finite-activity-density", "truncated-stable", "user-table".
    r_min, r_max : float
        Support bounds on |r|.  r_min is the small-jump truncation cutoff.
    density : callable
        Vectorized density nu(r) for signed r; must vanish for |r| outside
        [r_min, r_max).
    total_mass : float
        nu(r_min <= |r| < r_max), finite by construction.
    alpha : float, optional
        Stability index for the truncated-stable family.
    """

    kind: str
    r_min: float
    r_max: float
    density: Callable[[np.ndarray], np.ndarray]
    total_mass: float
    alpha: Optional[float] = None

    def quadrature(self, n_per_side: int = 64):
        """Nodes r_k and weights w_k with the density folded in, so that
        integral g(r) nu(dr) ~= sum w_k g(r_k).  Both mark signs."""
        rp, wp = gauss_legendre(n_per_side, self.r_min, self.r_max)
        r = np.concatenate([-rp[::-1], rp])
        w = np.concatenate([wp[::-1], wp])
        return r, w * self.density(r)

    def moment(self, k: int, n_per_side: int = 256) -> float:
        r, w = self.quadrature(n_per_side)
        return float(np.sum(w * r ** k))

    def mark_inverse_cdf(self, n_per_side: int = 4096):
        """Knots (u, r) of the inverse CDF of nu/total_mass for mark sampling.

        Piecewise-linear interpolation through these knots is exact for
        densities that are piecewise linear on each side (the uniform family)
        and accurate to O(1/n^2) otherwise.
        """
        out_u = []
        out_r = []
        acc = 0.0
        for sgn in (-1.0, 1.0):
            if sgn < 0:
                grid = np.linspace(-self.r_max, -self.r_min, n_per_side + 1)
            else:
                grid = np.linspace(self.r_min, self.r_max, n_per_side + 1)
            dens = self.density(grid)
            seg = 0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)
            cdf = acc + np.concatenate([[0.0], np.cumsum(seg)])
            acc = cdf[-1]
            out_u.append(cdf)
            out_r.append(grid)
        u = np.concatenate(out_u) / acc
        r = np.concatenate(out_r)
        return u, r


def _measure_mass(density, r_min, r_max) -> float:
    neg, _ = quad(density, -r_max, -r_min, epsabs=1e-12, epsrel=1e-12, limit=200)
    pos, _ = quad(density, r_min, r_max, epsabs=1e-12, epsrel=1e-12, limit=200)
    return neg + pos


def uniform_measure(mass: float, r_min: float = 0.1, r_max: float = 1.0) -> LevyMeasureSpec:
    """Uniform finite-activity density on +-[r_min, r_max) with given total mass."""
    if not (0 < r_min < r_max):
        raise ConfigError(f"need 0 < r_min < r_max, got [{r_min}, {r_max})")
    c = mass / (2.0 * (r_max - r_min))

    def density(r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        return np.where((a >= r_min) & (a < r_max), c, 0.0)

    m = _measure_mass(lambda r: density(r), r_min, r_max)
    if not math.isfinite(m):
        raise ConfigError("uniform measure has non-finite mass")
    return LevyMeasureSpec("finite-activity-density", r_min, r_max, density, m)


def truncated_stable_measure(alpha: float, c: float, r_min: float = 0.01,
                             r_max: float = 1.0) -> LevyMeasureSpec:
    """Symmetric truncated-stable density c/|r|^(1+alpha) on +-[r_min, r_max)."""
    if not (0.0 < alpha < 2.0):
        raise ConfigError(f"stability index must lie in (0, 2), got {alpha}")
    if not (0 < r_min < r_max):
        raise ConfigError(f"need 0 < r_min < r_max, got [{r_min}, {r_max})")

    def density(r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        with np.errstate(divide="ignore"):
            v = c / np.where(a > 0, a, 1.0) ** (1.0 + alpha)
        return np.where((a >= r_min) & (a < r_max), v, 0.0)

    m = _measure_mass(lambda r: density(r), r_min, r_max)
    if not math.isfinite(m):
        raise ConfigError("truncated-stable measure has non-finite mass on its support")
    return LevyMeasureSpec("truncated-stable", r_min, r_max, density, m, alpha=alpha)


def table_measure(r_nodes, dens_values) -> LevyMeasureSpec:
    """Measure from a tabulated density, linearly interpolated, zero outside."""
    r_nodes = np.asarray(r_nodes, dtype=float)
    dens_values = np.asarray(dens_values, dtype=float)
    if r_nodes.ndim != 1 or r_nodes.shape != dens_values.shape:
        raise ConfigError("table measure needs matching 1d node and value arrays")
    if np.any(dens_values < 0):
        raise ConfigError("density values must be nonnegative")
    a = np.min(np.abs(r_nodes[np.abs(r_nodes) > 0]))
    b = np.max(np.abs(r_nodes))

    def density(r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, r_nodes, dens_values, left=0.0, right=0.0)

    m = _measure_mass(lambda r: density(r), a, b)
    return LevyMeasureSpec("user-table", float(a), float(b), density, m)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Region:
    """An open metastable set: 1d interval or any-d ball, plus unions.

    signed_distance(x) < 0 strictly inside, 0 on the boundary, > 0 outside.
    """

    kind: str  # "interval" | "ball" | "union"
    label: str = ""
    lo: float = math.nan
    hi: float = math.nan
    center: Optional[np.ndarray] = None
    radius: float = math.nan
    parts: tuple = ()

    @staticmethod
    def interval(lo: float, hi: float, label: str = "") -> "Region":
        if not lo < hi:
            raise ConfigError(f"interval region needs lo < hi, got ({lo}, {hi})")
        return Region("interval", label=label, lo=float(lo), hi=float(hi))

    @staticmethod
    def ball(center, radius: float, label: str = "") -> "Region":
        if radius <= 0:
            raise ConfigError("ball region needs positive radius")
        return Region("ball", label=label,
                      center=np.atleast_1d(np.asarray(center, dtype=float)),
                      radius=float(radius))

    @staticmethod
    def union(parts, label: str = "") -> "Region":
        return Region("union", label=label, parts=tuple(parts))

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "interval":
            return np.maximum(self.lo - x, x - self.hi)
        if self.kind == "ball":
            if x.ndim <= 1 and self.center.size == 1:
                return np.abs(x - self.center[0]) - self.radius
            d = np.linalg.norm(np.atleast_2d(x) - self.center, axis=-1)
            return d - self.radius
        return np.minimum.reduce([p.signed_distance(x) for p in self.parts])

    def contains(self, x):
        """Open-set membership."""
        return self.signed_distance(x) < 0

    def contains_closure(self, x):
        return self.signed_distance(x) <= 0

    def collar_contains(self, x, delta: float):
        """Membership in {dist(x, region) <= delta} (the set 'region + delta')."""
        return self.signed_distance(x) <= delta

    def bounds(self):
        """Outermost extent along the first coordinate (for grid sizing)."""
        if self.kind == "interval":
            return self.lo, self.hi
        if self.kind == "ball":
            return self.center[0] - self.radius, self.center[0] + self.radius
        los, his = zip(*(p.bounds() for p in self.parts))
        return min(los), max(his)


def region_gap(a: Region, b: Region, probe=None) -> float:
    """Distance between the closures of two regions.

    Exact for 1d intervals; for other geometries the gap is estimated on the
    probe points (advisory use only).
    """
    if a.kind == "interval" and b.kind == "interval":
        if a.hi <= b.lo:
            return b.lo - a.hi
        if b.hi <= a.lo:
            return a.lo - b.hi
        return 0.0
    if probe is None:
        raise ConfigError("region_gap needs probe points for non-interval regions")
    da = a.signed_distance(probe)
    db = b.signed_distance(probe)
    return float(np.min(np.maximum(da, 0.0) + np.maximum(db, 0.0)))


# ---------------------------------------------------------------------------
# the model proper
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class LevyModel:
    """Coefficients of a jump-diffusion with compensated small jumps.

    dX = b(X) dt + sigma(X) dB + compensated sum of F(X, r) over small marks,
    plus optional uncompensated large jumps interlaced from `large_jumps`.

    `jump_amplitude_inverse(x, r, theta)` returns (y, |jacobian|) with y the
    inverse of y -> y + theta * F(y, r); required by the adjoint and
    time-reversed operators.  Additive models get it automatically.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    jump_amplitude: Callable
    levy_measure: Optional[LevyMeasureSpec]
    jump_amplitude_inverse: Optional[Callable] = None
    large_jumps: Optional[LevyMeasureSpec] = None
    family: str = "custom"
    potential: Optional[Callable] = None
    drift_poly: Optional[np.ndarray] = None  # ascending coeffs, enables the fast kernel
    sigma_const: Optional[float] = None
    sigma_l: Optional[float] = None          # additive jump scale, None if not additive

    def sigma2(self, x):
        """Sigma(x) = sigma(x)^2 (scalar form, d=1)."""
        s = self.diffusion(x)
        return np.asarray(s, dtype=float) ** 2

    @property
    def is_additive(self) -> bool:
        return self.sigma_l is not None

    @property
    def has_jumps(self) -> bool:
        return self.levy_measure is not None and self.levy_measure.total_mass > 0

    def jump_compensator_drift(self, x, n_quad: int = 64):
        """integral of F(x, r) nu(dr) over the small-mark support."""
        if not self.has_jumps:
            return np.zeros_like(np.asarray(x, dtype=float))
        r, w = self.levy_measure.quadrature(n_quad)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for rk, wk in zip(r, w):
            out = out + wk * self.jump_amplitude(x, rk)
        return out

    def max_jump_reach(self, probe=None) -> float:
        """sup |F(x, r)| over probe states and the small-mark support."""
        if not self.has_jumps:
            return 0.0
        if self.sigma_l is not None:
            return abs(self.sigma_l) * self.levy_measure.r_max
        if probe is None:
            probe = np.linspace(-5.0, 5.0, 101)
        rs = np.linspace(self.levy_measure.r_min, self.levy_measure.r_max, 41)
        reach = 0.0
        for rk in np.concatenate([-rs, rs]):
            reach = max(reach, float(np.max(np.abs(self.jump_amplitude(probe, rk)))))
        return reach


def _poly_drift(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)

    def b(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in coeffs[::-1]:
            out = out * x + c
        return out

    return b, coeffs


def _additive_inverse(sigma_l):
    def inv(x, r, theta=1.0):
        return np.asarray(x, dtype=float) - theta * sigma_l * r, 1.0

    return inv


def _measure_from_config(section) -> Optional[LevyMeasureSpec]:
    if section is None:
        return None
    kind = section.get("kind", "uniform")
    if kind in ("uniform", "finite-activity-density"):
        return uniform_measure(section.get("mass", 2.0),
                               section.get("r_min", 0.1),
                               section.get("r_max", 1.0))
    if kind == "truncated-stable":
        if "c" in section:
            c = section["c"]
        elif "mass" in section:
            # invert mass = 2c integral r^-(1+alpha) over [r_min, r_max)
            alpha = section["alpha"]
            r0, r1 = section.get("r_min", 0.01), section.get("r_max", 1.0)
            base = 2.0 * (r0 ** -alpha - r1 ** -alpha) / alpha
            c = section["mass"] / base
        else:
            raise ConfigError("truncated-stable measure needs 'c' or 'mass'")
        return truncated_stable_measure(section["alpha"], c,
                                        section.get("r_min", 0.01),
                                        section.get("r_max", 1.0))
    if kind == "none":
        return None
    raise ConfigError(f"unknown measure kind '{kind}'")


def build_model(config: dict) -> LevyModel:
    """Build a validated model from a configuration mapping.

    Recognized families: "double-well" (b = x - x^3), "ornstein-uhlenbeck"
    (b = -theta x), "pure-jump" (b = 0, sigma = 0), and "custom" with
    drift_coeffs (ascending polynomial coefficients).  Jumps are additive,
    F(x, r) = sigma_l * r, with sigma_l = 0 or an empty measure giving a
    pure diffusion.
    """
    family = config.get("family")
    if family is None:
        raise ConfigError("missing 'family' in model config")

    sigma = float(config.get("sigma", 0.0))
    if sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    sigma_l = float(config.get("sigma_l", 0.0))

    if family == "double-well":
        b, poly = _poly_drift([0.0, 1.0, 0.0, -1.0])
        potential = lambda x: np.asarray(x, dtype=float) ** 4 / 4.0 - np.asarray(x, dtype=float) ** 2 / 2.0
    elif family == "ornstein-uhlenbeck":
        theta = float(config.get("theta", 1.0))
        b, poly = _poly_drift([0.0, -theta])
        potential = lambda x, th=theta: 0.5 * th * np.asarray(x, dtype=float) ** 2
    elif family == "pure-jump":
        b, poly = _poly_drift(config.get("drift_coeffs", [0.0]))
        sigma = 0.0
        potential = None
    elif family == "custom":
        if "drift_coeffs" not in config:
            raise ConfigError("custom family needs 'drift_coeffs'")
        b, poly = _poly_drift(config["drift_coeffs"])
        potential = None
    else:
        raise ConfigError(f"unknown model family '{family}'")

    measure = _measure_from_config(config.get("measure"))
    if sigma_l == 0.0 or (measure is not None and measure.total_mass <= 0):
        measure = None  # zero amplitude or empty measure: pure diffusion

    large = _measure_from_config(config.get("large_jumps"))

    diffusion = lambda x, s=sigma: np.full_like(np.asarray(x, dtype=float), s)
    amp = lambda x, r, sl=sigma_l: np.full_like(np.asarray(x, dtype=float), sl * r)

    model = LevyModel(
        dim=int(config.get("dim", 1)),
        drift=b,
        diffusion=diffusion,
        jump_amplitude=amp,
        levy_measure=measure,
        jump_amplitude_inverse=_additive_inverse(sigma_l),
        large_jumps=large,
        family=family,
        potential=potential,
        drift_poly=poly if len(poly) <= 4 else None,
        sigma_const=sigma,
        sigma_l=sigma_l,
    )
    _validate_model(model)
    return model


def _validate_model(model: LevyModel) -> None:
    probe = np.linspace(-3.0, 3.0, 31)
    s2 = model.sigma2(probe)
    if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
        raise ConfigError("diffusion matrix not positive semidefinite on probe states")
    for spec in (model.levy_measure, model.large_jumps):
        if spec is not None and not math.isfinite(spec.total_mass):
            raise ConfigError("jump measure mass is not finite on its support")
    if model.levy_measure is not None and model.jump_amplitude_inverse is not None:
        rng = np.random.default_rng(0)
        for _ in range(16):
            x = rng.uniform(-2, 2)
            r = rng.uniform(model.levy_measure.r_min, model.levy_measure.r_max)
            th = rng.uniform(0, 1)
            y, _jac = model.jump_amplitude_inverse(x, r, th)
            back = y + th * model.jump_amplitude(y, r)
            if abs(float(back) - x) > 1e-10:
                raise ConfigError("jump inverse map fails round-trip check")


# ---------------------------------------------------------------------------
# assumption screening
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class ValidationReport:
    """Advisory numeric screening of the standing assumptions.

    jump_clearance_ok: closures of A and B are farther apart than the largest
    possible single jump, so no direct A -> B hop exists.
    """

    dist_ab: float
    max_jump_reach: float
    jump_clearance_ok: bool
    drift_lipschitz_estimate: float
    diffusion_lipschitz_estimate: float
    growth_ratio_max: float
    lyapunov_drift: dict
    lyapunov_ok: bool
    warnings: list

    @property
    def ok(self) -> bool:
        return self.jump_clearance_ok and self.lyapunov_ok


def _pointwise_generator_on_function(model, v, dv, d2v, x, n_quad=64):
    """Generator applied to an analytic test function (no grid)."""
    x = np.asarray(x, dtype=float)
    out = model.drift(x) * dv(x) + 0.5 * model.sigma2(x) * d2v(x)
    if model.has_jumps:
        r, w = model.levy_measure.quadrature(n_quad)
        for rk, wk in zip(r, w):
            f = model.jump_amplitude(x, rk)
            out = out + wk * (v(x + f) - v(x) - f * dv(x))
    return out


def validate_assumptions(model: LevyModel, a: Region, b: Region) -> ValidationReport:
    """Screen the model numerically against the standing assumptions.

    Always returns a report; failures produce warnings in the report, never
    exceptions.  Checks: region separation vs. maximal jump reach, finite
    local Lipschitz estimates for drift/diffusion, a growth-ratio scan, and
    a Lyapunov drift check with v(x) = x^2 at |x| in {2, 3, 5}.
    """
    warnings = []
    lo = min(a.bounds()[0], b.bounds()[0]) - 2.0
    hi = max(a.bounds()[1], b.bounds()[1]) + 2.0
    probe = np.linspace(lo, hi, 201)

    dist = region_gap(a, b, probe)
    reach = model.max_jump_reach(probe)
    clearance = dist > reach
    if not clearance:
        warnings.append(
            f"regions are closer ({dist:.4g}) than the maximal jump reach ({reach:.4g}); "
            "a single jump can hop directly between them")

    bb = model.drift(probe)
    ss = model.diffusion(probe)
    h = probe[1] - probe[0]
    lip_b = float(np.max(np.abs(np.diff(bb)) / h))
    lip_s = float(np.max(np.abs(np.diff(ss)) / h))

    m2 = model.levy_measure.moment(2) if model.has_jumps else 0.0
    f2 = (model.sigma_l or 0.0) ** 2 * m2
    growth = (bb ** 2 + ss ** 2 + f2) / (1.0 + probe ** 2)
    growth_max = float(np.max(growth))
    if growth_max > 1e3:
        warnings.append(
            f"growth ratio reaches {growth_max:.3g} on the probe window; the "
            "linear-growth condition holds only locally (expected for superlinear drift)")

    v = lambda x: np.asarray(x, dtype=float) ** 2
    dv = lambda x: 2.0 * np.asarray(x, dtype=float)
    d2v = lambda x: np.full_like(np.asarray(x, dtype=float), 2.0)
    lyap = {}
    ok = True
    for p in (2.0, 3.0, 5.0):
        val = float(_pointwise_generator_on_function(model, v, dv, d2v, np.array(p)))
        lyap[p] = val
        ok = ok and val < 0
    if not ok:
        warnings.append("Lyapunov drift of x^2 is not negative at large |x|; "
                        "the process may not be positive recurrent")

    return ValidationReport(
        dist_ab=float(dist),
        max_jump_reach=float(reach),
        jump_clearance_ok=bool(clearance),
        drift_lipschitz_estimate=lip_b,
        diffusion_lipschitz_estimate=lip_s,
        growth_ratio_max=growth_max,
        lyapunov_drift=lyap,
        lyapunov_ok=bool(ok),
        warnings=warnings,
    )
