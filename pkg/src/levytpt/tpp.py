"""Sampling the committor-tilted transition path process.

The tilted process has drift K = b - int F nu + Sigma q'/q and a jump kernel
reweighted by q(destination)/q(state).  Jumps are produced by thinning: a
candidate stream with intensity mass * qmax_window(y)/q(y) proposes marks from
the base measure, and a proposal with destination z survives with probability
q(z)/qmax_window(y).  The window maximum makes the acceptance ratio a true
probability for every destination within jump reach; jumps into the source
set have q = 0 and are never accepted, so extinguishment near the source is
exact rather than approximate.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import _kernels as _k
from .errors import ConfigError, EmptyResultError, NumericError
from .fields import ScalarField1D
from .models import LevyModel, Region
from .simulate import HitResult, Trajectory, _rng

_STATUS_NAMES = {
    _k.TPP_HIT_B: "B",
    _k.TPP_FLOOR: "floor",
    _k.TPP_ENTERED_A: "A",
    _k.TPP_TIMEOUT: "timeout",
}

K_CLAMP = 1e6


@dataclasses.dataclass(frozen=True)
class TppConfig:
    dt: float = 1e-3
    t_cap: float = 200.0
    q_stop: float = 1e-6       # discard threshold on the committor value
    q_level: float = 0.5       # level whose first upcrossing is recorded
    disp_cap: float = 0.05     # max |K| dt_sub per substep
    rate_cap: float = 0.5      # max candidate intensity times dt_sub
    bdry_c: float = 0.2        # sigma sqrt(dt_sub) <= bdry_c * dist(y, A)
    record: bool = False       # keep states on the dt grid
    checkpoints: Optional[tuple] = None  # (t1, t2) for martingale probes


@dataclasses.dataclass(frozen=True)
class TppTables:
    q_lo: float
    q_inv_dx: float
    qv: np.ndarray
    bv: np.ndarray         # b - int F nu at the nodes; the committor quotient
                           # term of K is reconstructed per substep from qv
    mqv: np.ndarray
    mass: float
    mu: np.ndarray
    mr: np.ndarray
    sl: float
    sig: float
    has_lj: bool
    lj_mass: float
    lj_sl: float
    lj_mu: np.ndarray
    lj_mr: np.ndarray
    lj_mqv: np.ndarray


def _window_max(qv: np.ndarray, reach: float, dx: float) -> np.ndarray:
    m = int(math.ceil(reach / dx)) + 2
    return maximum_filter1d(qv, size=2 * m + 1, mode="nearest")


def _anchor_wall_profiles(qv: np.ndarray, x: np.ndarray, a: Region,
                          b: Region) -> np.ndarray:
    """Pin the piecewise-linear interpolant to 0 at the source walls and 1 at
    the target walls by extrapolating the wall-cell node values.

    Grid nodes rarely land on the walls, so the raw table reaches 0 up to one
    cell inside the source closure; the repelling quotient drift then anchors
    below the true wall and leaves a sliver where paths are absorbed, and a
    jump can land just inside the closure with a positive acceptance ratio.
    Extrapolated (negative near the source, above one near the target) values
    at the inside nodes move both anchors onto the walls exactly.  Nodes on a
    wall already carry the boundary value and are left alone.
    """
    qv = qv.copy()
    n = len(x)

    def cell_below(w):
        return int(np.searchsorted(x, w, side="right")) - 1

    def node_at_or_above(w):
        return int(np.searchsorted(x, w, side="left"))

    if x[0] < a.lo < x[-1]:
        k = node_at_or_above(a.lo)
        if x[k] > a.lo and 0 < k and qv[k] == 0.0 < qv[k - 1]:
            qv[k] = qv[k - 1] * (x[k] - a.lo) / (x[k - 1] - a.lo)
    if x[0] < a.hi < x[-1]:
        j = cell_below(a.hi)
        if x[j] < a.hi and j + 1 < n and qv[j] == 0.0 < qv[j + 1]:
            qv[j] = qv[j + 1] * (x[j] - a.hi) / (x[j + 1] - a.hi)
    if x[0] < b.lo < x[-1]:
        k = node_at_or_above(b.lo)
        if x[k] > b.lo and 0 < k and qv[k] == 1.0 > qv[k - 1]:
            qv[k] = qv[k - 1] + (1.0 - qv[k - 1]) * (x[k] - x[k - 1]) / (b.lo - x[k - 1])
    if x[0] < b.hi < x[-1]:
        j = cell_below(b.hi)
        if x[j] < b.hi and j + 1 < n and qv[j] == 1.0 > qv[j + 1]:
            qv[j] = qv[j + 1] + (1.0 - qv[j + 1]) * (x[j + 1] - x[j]) / (x[j + 1] - b.hi)
    return qv


def build_tpp_tables(model: LevyModel, q: ScalarField1D, a: Region,
                     b: Region) -> TppTables:
    """Per-node base drift and committor majorant tables for the tilted sampler.

    The kernel reconstructs the committor quotient part of K from the q table
    itself inside each grid cell, so near the source-set wall the drift keeps
    its full repelling divergence instead of being flattened by interpolation.
    """
    if model.sigma_const is None or model.sigma_l is None and model.has_jumps:
        raise ConfigError("the tilted sampler needs constant sigma and additive jumps")
    if a.kind != "interval" or b.kind != "interval":
        raise ConfigError("the compiled tilted sampler handles interval regions")
    x = q.x
    qv = np.asarray(q.values, dtype=float)
    if np.any(qv < 0) or np.any(qv > 1):
        raise ConfigError("committor values must lie in [0, 1]")
    qv = _anchor_wall_profiles(qv, x, a, b)
    drift = np.asarray(model.drift(x), dtype=float)
    if model.has_jumps:
        m1 = model.levy_measure.moment(1)
        drift = drift - model.sigma_l * m1
    kv = np.clip(drift, -K_CLAMP, K_CLAMP)

    if model.has_jumps:
        mass = model.levy_measure.total_mass
        mu, mr = model.levy_measure.mark_inverse_cdf()
        reach = abs(model.sigma_l) * model.levy_measure.r_max
        mqv = _window_max(qv, reach, q.dx)
    else:
        mass, mu, mr = 0.0, np.array([0.0, 1.0]), np.zeros(2)
        mqv = qv.copy()
    if model.large_jumps is not None and model.large_jumps.total_mass > 0:
        lj_mass = model.large_jumps.total_mass
        lj_mu, lj_mr = model.large_jumps.mark_inverse_cdf()
        lj_reach = abs(model.sigma_l) * model.large_jumps.r_max
        lj_mqv = _window_max(qv, lj_reach, q.dx)
        has_lj = True
    else:
        has_lj, lj_mass = False, 0.0
        lj_mu, lj_mr, lj_mqv = np.array([0.0, 1.0]), np.zeros(2), np.zeros(2)
    return TppTables(q_lo=float(x[0]), q_inv_dx=1.0 / q.dx, qv=qv, bv=kv,
                     mqv=mqv, mass=mass, mu=mu, mr=mr,
                     sl=float(model.sigma_l or 0.0), sig=float(model.sigma_const),
                     has_lj=has_lj, lj_mass=lj_mass,
                     lj_sl=float(model.sigma_l or 0.0),
                     lj_mu=lj_mu, lj_mr=lj_mr, lj_mqv=lj_mqv)


def effective_drift(model: LevyModel, q: ScalarField1D, y: float) -> float:
    """K(y) = b - int F nu + Sigma q'/q at a single state."""
    qy = float(q(y))
    if qy <= 0.0:
        raise NumericError("effective drift undefined where the committor vanishes")
    b = float(model.drift(np.array(float(y))))
    if model.has_jumps:
        b -= float(model.jump_compensator_drift(np.array(float(y))))
    s2 = float(model.sigma2(np.array(float(y))))
    dq = float(q.derivative()(y))
    return b + s2 * dq / qy


def jump_rate_lambda(q: ScalarField1D, y: float, r: float,
                     model: LevyModel) -> float:
    """Committor tilt factor q(y + F(y, r)) / q(y) of the jump intensity."""
    if not (q.x[0] <= y <= q.x[-1]):
        raise ConfigError(f"state {y} lies outside the committor window "
                          f"[{q.x[0]}, {q.x[-1]}]")
    dest = y + float(model.jump_amplitude(np.array(float(y)), r))
    if not (q.x[0] <= dest <= q.x[-1]):
        raise ConfigError(f"jump destination {dest} lies outside the committor window")
    qy = float(q(y))
    if qy <= 0.0:
        raise NumericError("jump tilt undefined where the committor vanishes")
    return float(q(dest)) / qy


@dataclasses.dataclass
class ThinningOutcome:
    accepted: bool
    mark: float
    destination: float
    tilt: float            # q(dest)/q(y)
    acceptance: float      # q(dest)/qmax_window, always in [0, 1]


def thinning_sampler(q: ScalarField1D, y: float, model: LevyModel,
                     u: tuple) -> ThinningOutcome:
    """One thinning decision from two uniforms (u_mark, u_accept).

    Mirrors the compiled sampler: the mark comes from the base measure via its
    inverse CDF, and acceptance compares u_accept against
    q(destination)/qmax_window(y).  Raises if the would-be acceptance ratio
    exceeds one, which would mean the majorant is not a majorant.
    """
    if not model.has_jumps:
        raise ConfigError("thinning needs a model with jumps")
    tab = build_tpp_tables(model, q, Region.interval(-1e300, -1e299),
                           Region.interval(1e299, 1e300))
    u_mark, u_accept = float(u[0]), float(u[1])
    r = float(np.interp(u_mark, tab.mu, tab.mr))
    dest = y + tab.sl * r
    qd = float(np.interp(dest, q.x, q.values,
                         left=q.values[0], right=q.values[-1]))
    n1 = len(tab.qv) - 1
    t = (y - tab.q_lo) * tab.q_inv_dx
    j = min(max(int(t), 0), n1 - 1)
    mq = max(tab.mqv[j], tab.mqv[j + 1])
    qy = float(q(y))
    if qy <= 0.0:
        raise NumericError("thinning undefined where the committor vanishes")
    ratio = qd / mq if mq > 0 else 0.0
    if ratio > 1.0 + 1e-12:
        raise NumericError("thinning acceptance ratio exceeded one; "
                           "the committor majorant table is inconsistent")
    return ThinningOutcome(accepted=bool(u_accept * mq < qd), mark=r,
                           destination=dest, tilt=qd / qy,
                           acceptance=min(ratio, 1.0))


@dataclasses.dataclass
class TppPath:
    status: str            # "B", "A", "floor", "timeout"
    duration: float
    y_start: float
    y_end: float
    cross_x: float         # first state at or above q_level (nan if never)
    n_jumps: int
    substeps: int
    q_ck: Optional[tuple] = None
    trajectory: Optional[Trajectory] = None


def _sample_one(model, tables, a, b, y0, cfg, rng) -> TppPath:
    if b.contains_closure(y0):
        # already arrived: zero-length path
        return TppPath(status="B", duration=0.0, y_start=y0, y_end=y0,
                       cross_x=y0, n_jumps=0, substeps=0,
                       q_ck=(1.0, 1.0) if cfg.checkpoints is not None else None)
    if a.contains_closure(y0):
        raise ConfigError("tilted path cannot start inside the source region")
    q0 = _table_q(tables, y0)
    if q0 < cfg.q_stop:
        # already below the floor: the stopped process is frozen at its start
        return TppPath(status="floor", duration=0.0, y_start=y0, y_end=y0,
                       cross_x=y0 if q0 >= cfg.q_level else math.nan,
                       n_jumps=0, substeps=0,
                       q_ck=(q0, q0) if cfg.checkpoints is not None else None)
    fst = np.zeros(6)
    ist = np.zeros(5, dtype=np.int64)
    fst[0] = y0
    fst[2] = np.nan
    if cfg.checkpoints is not None:
        ck0, ck1 = float(cfg.checkpoints[0]), float(cfg.checkpoints[1])
        if not 0.0 < ck0 < ck1:
            raise ConfigError("checkpoints must satisfy 0 < t1 < t2")
        ist[1] = 0
    else:
        ck0 = ck1 = -1.0
        ist[1] = 2
    if q0 >= cfg.q_level:
        ist[0] = 1
        fst[2] = y0
    rec_dt = cfg.dt if cfg.record else 0.0
    if cfg.record:
        rec_y = np.empty(int(math.ceil(cfg.t_cap / rec_dt)) + 2)
        rec_y[0] = y0
        ist[3] = 1
    else:
        rec_y = np.empty(1)
    while True:
        us = rng.random(1 << 16)
        status, _uptr = _k.tpp_path_block(
            fst, ist, cfg.dt, cfg.t_cap,
            tables.sig, tables.sl, tables.mass, tables.mu, tables.mr,
            tables.q_lo, tables.q_inv_dx, tables.qv, tables.bv, tables.mqv,
            a.lo, a.hi, b.lo, b.hi,
            cfg.q_stop, cfg.q_level, ck0, ck1,
            cfg.disp_cap, cfg.rate_cap, cfg.bdry_c,
            tables.has_lj, tables.lj_mass, tables.lj_sl,
            tables.lj_mu, tables.lj_mr, tables.lj_mqv,
            us, rec_y, rec_dt)
        if status != _k.TPP_RUNNING:
            break
    if status == _k.TPP_NONFINITE:
        raise NumericError("tilted path became non-finite")
    if status == _k.TPP_MAJORANT:
        raise NumericError("committor majorant violated during thinning; "
                           "the committor grid is too coarse for the jump reach")
    if status == _k.TPP_REC_OVERFLOW:
        raise NumericError("trajectory recording overflow in the tilted sampler")
    q_ck = None
    if cfg.checkpoints is not None:
        q_term = _table_q(tables, fst[5])
        qa = fst[3] if ist[1] >= 1 else q_term
        qb = fst[4] if ist[1] >= 2 else q_term
        q_ck = (float(qa), float(qb))
    traj = None
    if cfg.record:
        nrec = int(ist[3])
        # the kernel stops before stamping the terminal move, so close the
        # skeleton with the end state unless it is already there
        if nrec < len(rec_y) and (nrec == 0 or rec_y[nrec - 1] != fst[0]):
            rec_y[nrec] = fst[0]
            nrec += 1
        traj = Trajectory(dt=rec_dt, states=rec_y[:nrec].copy(),
                          jump_flags=np.zeros(nrec, dtype=np.uint8))
    return TppPath(status=_STATUS_NAMES.get(status, str(status)),
                   duration=float(fst[1]), y_start=y0, y_end=float(fst[0]),
                   cross_x=float(fst[2]), n_jumps=int(ist[2]),
                   substeps=int(ist[4]), q_ck=q_ck, trajectory=traj)


def _table_q(tables: TppTables, y: float) -> float:
    n1 = len(tables.qv) - 1
    t = (y - tables.q_lo) * tables.q_inv_dx
    if t <= 0:
        return float(tables.qv[0])
    if t >= n1:
        return float(tables.qv[n1])
    j = int(t)
    th = t - j
    return float(tables.qv[j] * (1 - th) + tables.qv[j + 1] * th)


def sample_tpp_path(model: LevyModel, q: ScalarField1D, a: Region, b: Region,
                    y0: float, cfg: Optional[TppConfig] = None,
                    seed: int = 0):
    """One tilted path from y0; returns (Trajectory or None, HitResult, TppPath)."""
    cfg = cfg or TppConfig(record=True)
    tables = build_tpp_tables(model, q, a, b)
    path = _sample_one(model, tables, a, b, float(y0), cfg, _rng(seed))
    hit = HitResult(label=path.status if path.status in ("A", "B") else "timeout",
                    time=path.duration, state=path.y_end, n_steps=path.substeps)
    return path.trajectory, hit, path


@dataclasses.dataclass
class TppEnsemble:
    paths: list
    n_b: int
    n_a: int
    n_floor: int
    n_timeout: int

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def rejection_rate(self) -> float:
        """Fraction of paths discarded for touching the source set."""
        return self.n_a / max(self.n, 1)

    def durations(self, status: str = "B") -> np.ndarray:
        return np.array([p.duration for p in self.paths if p.status == status])

    def entrances(self) -> np.ndarray:
        return np.array([p.y_end for p in self.paths if p.status == "B"])

    def crossings(self) -> np.ndarray:
        return np.array([p.cross_x for p in self.paths
                         if p.status == "B" and math.isfinite(p.cross_x)])


def sample_tpp_ensemble(model: LevyModel, q: ScalarField1D, a: Region, b: Region,
                        starts: np.ndarray, n: int,
                        cfg: Optional[TppConfig] = None, seed: int = 0,
                        threads: int = 1) -> TppEnsemble:
    """n tilted paths; replica i starts from a bank state chosen with its own
    (seed, i) substream, so the ensemble is independent of the thread count."""
    cfg = cfg or TppConfig()
    tables = build_tpp_tables(model, q, a, b)
    starts = np.asarray(starts, dtype=float)
    if starts.ndim == 0:
        starts = starts[None]
    if len(starts) == 0:
        raise ConfigError("empty start bank for the tilted ensemble")

    def one(i):
        rng = _rng(seed, i)
        y0 = float(starts[int(rng.integers(len(starts)))])
        return _sample_one(model, tables, a, b, y0, cfg, rng)

    if threads <= 1:
        paths = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            paths = list(ex.map(one, range(n)))
    counts = {"B": 0, "A": 0, "floor": 0, "timeout": 0}
    for p in paths:
        counts[p.status] = counts.get(p.status, 0) + 1
    return TppEnsemble(paths=paths, n_b=counts["B"], n_a=counts["A"],
                       n_floor=counts["floor"], n_timeout=counts["timeout"])


@dataclasses.dataclass
class MartingaleReport:
    """Relative drift of E[1/q(Y at t, stopped)] away from its time-zero value.

    Sampling stops at the committor floor as well as at the target, which
    keeps the stopped quotient bounded; optional stopping preserves the
    martingale identity, so the relative drift should vanish within noise
    for a correct committor and sampler.
    """

    drift: float           # max over checkpoints of |m(t) - m(0)| / m(0)
    stderr: float          # paired stderr at the worst checkpoint, / m(0)
    m0: float
    drift_t1: float
    drift_t2: float
    t1: float
    t2: float
    n: int
    threshold: float

    @property
    def ok(self) -> bool:
        return self.drift < self.threshold


def martingale_check(model: LevyModel, q: ScalarField1D, a: Region, b: Region,
                     starts: np.ndarray, n: int = 10000, seed: int = 0,
                     dt: float = 1e-3, q_floor: float = 0.05,
                     base_tolerance: float = 0.05,
                     checkpoints: Optional[tuple] = None,
                     threads: int = 1) -> MartingaleReport:
    """Estimate the relative martingale drift of 1/q along tilted paths.

    Checkpoints default to half and all of the pilot median duration.  Paths
    stopped early (target hit or floor) contribute their stopped value to both
    checkpoints; differences are paired against 1/q at each path's own start.
    Bank states whose committor is already below the floor are dropped first:
    they would stop at time zero and only dilute the statistic.
    """
    starts = np.asarray(starts, dtype=float)
    starts = starts[np.interp(starts, q.x, q.values) >= q_floor]
    if len(starts) == 0:
        raise ConfigError("no start states at or above the committor floor")
    if checkpoints is None:
        pilot_cfg = TppConfig(dt=dt, q_stop=q_floor)
        pilot = sample_tpp_ensemble(model, q, a, b, starts, min(200, max(50, n // 50)),
                                    pilot_cfg, seed=seed + 1, threads=threads)
        durs = pilot.durations("B")
        if len(durs) < 10:
            raise NumericError("martingale pilot produced too few target hits")
        med = float(np.median(durs))
        checkpoints = (0.5 * med, med)
    cfg = TppConfig(dt=dt, q_stop=q_floor, checkpoints=checkpoints)
    ens = sample_tpp_ensemble(model, q, a, b, starts, n, cfg, seed=seed,
                              threads=threads)
    y0s = np.array([p.y_start for p in ens.paths])
    q0s = np.clip(np.interp(y0s, q.x, q.values), 1e-12, None)
    z0 = 1.0 / q0s
    z1 = np.array([1.0 / max(p.q_ck[0], 1e-12) for p in ens.paths])
    z2 = np.array([1.0 / max(p.q_ck[1], 1e-12) for p in ens.paths])
    m0 = float(np.mean(z0))
    d1 = z1 - z0
    d2 = z2 - z0
    rel1 = float(np.mean(d1)) / m0
    rel2 = float(np.mean(d2)) / m0
    worst = d1 if abs(rel1) >= abs(rel2) else d2
    stderr = float(np.std(worst, ddof=1) / math.sqrt(len(worst))) / m0
    drift = max(abs(rel1), abs(rel2))
    return MartingaleReport(drift=drift, stderr=stderr, m0=m0,
                            drift_t1=rel1, drift_t2=rel2,
                            t1=checkpoints[0], t2=checkpoints[1],
                            n=len(d1), threshold=base_tolerance + 3 * stderr)


def corrupted_committor(q: ScalarField1D, amplitude: float = 0.1,
                        wavenumber: float = 10.0) -> ScalarField1D:
    """Deliberately wrong committor for negative-control runs: a smooth ripple
    is added on the transition region and the result clipped back to [0, 1].
    The values on region closures (0 and 1 exactly) are preserved so the
    sampler's structural guarantees still apply."""
    vals = q.values.copy()
    ripple = amplitude * np.sin(wavenumber * q.x)
    interior = (vals > 0.0) & (vals < 1.0)
    vals = np.where(interior, np.clip(vals + ripple, 1e-9, 1.0), vals)
    return q.copy_with(values=vals, name="corrupted_committor")


@dataclasses.dataclass
class EquivalenceReport:
    """Two-sample KS comparison of tilted paths against extracted legs on
    duration, entrance point, and the crossing point of the q level set."""

    stats: dict            # name -> (ks_distance, p_value, n_legs, n_paths)
    alpha: float

    @property
    def ok(self) -> bool:
        return all(p > self.alpha for _, p, _, _ in self.stats.values())

    def failures(self) -> list:
        return [k for k, (_, p, _, _) in self.stats.items() if p <= self.alpha]

    def lines(self) -> list:
        out = []
        for name, (d, p, n1, n2) in self.stats.items():
            verdict = "pass" if p > self.alpha else "FAIL"
            out.append(f"{name:>10}: KS D={d:.4f} p={p:.4g} "
                       f"(n={n1} legs vs {n2} paths) {verdict}")
        out.append(f"overall: {'pass' if self.ok else 'FAIL'} at alpha={self.alpha}")
        return out


def equivalence_report(transitions, ensemble: TppEnsemble, dt: float,
                       alpha: float = 0.01) -> EquivalenceReport:
    """KS-compare A-to-B legs with a tilted ensemble.

    Extracted durations span exit step to entrance step while tilted paths
    start one step after launch, so one dt is added to the sampled durations
    before comparing.
    """
    from scipy.stats import ks_2samp

    ab = [t for t in transitions if t.direction == "AB"]
    if not ab:
        raise EmptyResultError("no A-to-B legs to compare against")
    if ensemble.n_b == 0:
        raise EmptyResultError("tilted ensemble contains no target hits")
    pairs = {
        "duration": (np.array([t.duration for t in ab]),
                     ensemble.durations("B") + dt),
        "entrance": (np.array([t.entrance_point for t in ab]),
                     ensemble.entrances()),
    }
    cross_legs = np.array([t.cross_point for t in ab
                           if math.isfinite(t.cross_point)])
    cross_paths = ensemble.crossings()
    if len(cross_legs) and len(cross_paths):
        pairs["crossing"] = (cross_legs, cross_paths)
    stats = {}
    for name, (left, right) in pairs.items():
        res = ks_2samp(left, right, method="asymp")
        stats[name] = (float(res.statistic), float(res.pvalue),
                       len(left), len(right))
    return EquivalenceReport(stats=stats, alpha=alpha)
