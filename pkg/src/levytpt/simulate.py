"""Path simulation drivers.

The fast path compiles to the kernels in _kernels.py and covers models with
polynomial drift (degree <= 3), constant diffusion, and additive jumps; other
models fall back to a plain python stepper.  Small and large jump streams are
merged into a single Poisson stream with a mixture mark table; only the small
stream enters the compensator drift.

Randomness contract: each driver owns one Philox generator.  Normals are drawn
one per step, uniforms through a moving pointer that the kernels advance, so a
given seed reproduces a path byte for byte regardless of block sizes.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from . import _kernels as _k
from .errors import ConfigError, SimulationError
from .models import LevyModel, Region

_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F = np.empty(0, dtype=np.float64)
_BLOCK = 65536


def _rng(seed: int, replica: Optional[int] = None) -> np.random.Generator:
    key = (replica,) if replica is not None else ()
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def poisson_cdf_table(lam: float) -> np.ndarray:
    """P(N <= k) for k = 0, 1, ... until the tail drops below 1e-16."""
    if lam < 0:
        raise ConfigError("jump intensity must be nonnegative")
    term = math.exp(-lam)
    cum = term
    out = [cum]
    k = 0
    while 1.0 - cum > 1e-16 and k < 400:
        k += 1
        term *= lam / k
        cum += term
        out.append(cum)
    return np.asarray(out)


def merged_mark_tables(model: LevyModel):
    """(total_mass, u_knots, r_knots) for the merged small+large jump stream."""
    specs = [s for s in (model.levy_measure, model.large_jumps)
             if s is not None and s.total_mass > 0]
    if not specs:
        return 0.0, np.array([0.0, 1.0]), np.array([0.0, 0.0])
    if len(specs) == 1:
        u, r = specs[0].mark_inverse_cdf()
        return specs[0].total_mass, u, r
    m0 = specs[0].total_mass
    m1 = specs[1].total_mass
    total = m0 + m1
    u0, r0 = specs[0].mark_inverse_cdf()
    u1, r1 = specs[1].mark_inverse_cdf()
    u = np.concatenate([u0 * (m0 / total), m0 / total + u1 * (m1 / total)])
    r = np.concatenate([r0, r1])
    return total, u, r


@dataclasses.dataclass(frozen=True)
class KernelPlan:
    """Precomputed tables for the compiled stepping kernels."""

    c: np.ndarray          # drift poly coeffs, padded to degree 3
    sig: float
    sl: float
    bcomp: float           # compensator drift, small-jump stream only
    mass: float            # merged stream intensity
    pcum: np.ndarray
    mu: np.ndarray
    mr: np.ndarray
    dt: float


def kernel_plan(model: LevyModel, dt: float) -> Optional[KernelPlan]:
    """Tables for the fast kernels, or None if the model needs the fallback."""
    if model.dim != 1 or model.drift_poly is None or model.sigma_const is None:
        return None
    if model.has_jumps and model.sigma_l is None:
        return None
    c = np.zeros(4)
    c[: len(model.drift_poly)] = model.drift_poly
    mass, mu, mr = merged_mark_tables(model)
    bcomp = float(model.jump_compensator_drift(np.array(0.0))) if model.has_jumps else 0.0
    return KernelPlan(c=c, sig=float(model.sigma_const),
                      sl=float(model.sigma_l or 0.0), bcomp=bcomp,
                      mass=mass, pcum=poisson_cdf_table(mass * dt),
                      mu=mu, mr=mr, dt=float(dt))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class Trajectory:
    """A discretely observed path: states at t0 + k dt plus jump bookkeeping.

    jump_flags[k] = 1 when at least one jump fired during the step ending at
    state k.  jump_steps/jump_marks/jump_disps list individual jump events;
    an event with step i was applied during the step producing state i + 1.
    """

    dt: float
    states: np.ndarray
    jump_flags: np.ndarray
    jump_steps: np.ndarray = dataclasses.field(default_factory=lambda: _EMPTY_I.copy())
    jump_marks: np.ndarray = dataclasses.field(default_factory=lambda: _EMPTY_F.copy())
    jump_disps: np.ndarray = dataclasses.field(default_factory=lambda: _EMPTY_F.copy())
    t0: float = 0.0
    seed: Optional[int] = None

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x1,jump_flag\n")
            t = self.times
            for k in range(len(self.states)):
                fh.write(f"{t[k]:.17g},{self.states[k]:.17g},{int(self.jump_flags[k])}\n")

    @staticmethod
    def from_csv(path) -> "Trajectory":
        try:
            raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"malformed trajectory file {path}: {exc}") from exc
        if raw.shape[0] < 2 or raw.shape[1] < 3:
            raise ConfigError(f"trajectory file {path} needs columns t,x1,jump_flag "
                              "and at least two rows")
        t = raw[:, 0]
        dts = np.diff(t)
        if np.any(dts <= 0) or abs(dts.max() - dts.min()) > 1e-9 * max(dts.max(), 1.0):
            raise ConfigError(f"trajectory file {path} has a non-uniform time column")
        return Trajectory(dt=float(dts[0]), states=raw[:, 1].copy(),
                          jump_flags=raw[:, 2].astype(np.uint8), t0=float(t[0]))

    def save(self, path) -> None:
        """Binary dump (magic LTPT, little endian), byte-stable for a given path."""
        with open(path, "wb") as fh:
            seed = -1 if self.seed is None else int(self.seed)
            fh.write(b"LTPT")
            fh.write(struct.pack("<IIddqQQ", 1, 1, self.dt, self.t0, seed,
                                 len(self.states), len(self.jump_steps)))
            fh.write(self.states.astype("<f8").tobytes())
            fh.write(self.jump_flags.astype("u1").tobytes())
            fh.write(self.jump_steps.astype("<i8").tobytes())
            fh.write(self.jump_marks.astype("<f8").tobytes())
            fh.write(self.jump_disps.astype("<f8").tobytes())

    @staticmethod
    def load(path) -> "Trajectory":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != b"LTPT":
                raise ConfigError(f"{path} is not a trajectory dump")
            ver, _dim, dt, t0, seed, n, n_ev = struct.unpack("<IIddqQQ", fh.read(48))
            if ver != 1:
                raise ConfigError(f"unsupported trajectory dump version {ver}")
            states = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            flags = np.frombuffer(fh.read(n), dtype="u1").copy()
            steps = np.frombuffer(fh.read(8 * n_ev), dtype="<i8").copy()
            marks = np.frombuffer(fh.read(8 * n_ev), dtype="<f8").copy()
            disps = np.frombuffer(fh.read(8 * n_ev), dtype="<f8").copy()
        return Trajectory(dt=dt, states=states, jump_flags=flags, jump_steps=steps,
                          jump_marks=marks, jump_disps=disps, t0=t0,
                          seed=None if seed < 0 else seed)


@dataclasses.dataclass
class HitResult:
    """Outcome of running until a target closure is entered."""

    label: str                     # target label or "timeout"
    time: float
    state: float
    pre_jump_state: float = math.nan   # left limit when entry came by a jump
    hit_by_jump: bool = False
    n_steps: int = 0


# ---------------------------------------------------------------------------
# full-path simulation
# ---------------------------------------------------------------------------

def simulate_path(model: LevyModel, x0: float, T: float, dt: float,
                  seed: int = 0) -> Trajectory:
    """Sample one path on [0, T] with step dt, recording every state."""
    if dt <= 0 or T <= 0:
        raise ConfigError("simulate_path needs T > 0 and dt > 0")
    nsteps = int(round(T / dt))
    if nsteps < 1:
        raise ConfigError("T shorter than a single step")
    plan = kernel_plan(model, dt)
    rng = _rng(seed)
    if plan is None:
        return _simulate_path_python(model, x0, nsteps, dt, rng, seed)

    states = np.empty(nsteps + 1)
    flags = np.zeros(nsteps + 1, dtype=np.uint8)
    states[0] = float(x0)
    ev_cap = max(1024, int(plan.mass * nsteps * dt * 1.5) + 64)
    ev_step = np.empty(ev_cap, dtype=np.int64)
    ev_r = np.empty(ev_cap)
    ev_disp = np.empty(ev_cap)
    n_ev = 0
    x = float(x0)
    pos = 0
    norm_buf = _EMPTY_F
    norm_off = 0
    while pos < nsteps:
        if norm_off >= len(norm_buf):
            norm_buf = rng.standard_normal(min(_BLOCK, nsteps - pos))
            norm_off = 0
        normals = norm_buf[norm_off:]
        us = rng.random(max(4096, 2 * len(normals)))
        while True:
            status, done, _uptr, n_ev2, x2 = _k.path_block(
                x, plan.c[0], plan.c[1], plan.c[2], plan.c[3],
                plan.sig, plan.sl, plan.bcomp, dt, len(normals),
                normals, us, plan.pcum, plan.mu, plan.mr,
                _EMPTY_I, _EMPTY_F, _EMPTY_F,
                states, flags, pos, ev_step, ev_r, ev_disp, n_ev, pos)
            if status != _k.STATUS_OVERFLOW:
                break
            ev_step = _grow(ev_step, 2 * len(ev_step))
            ev_r = _grow(ev_r, len(ev_step))
            ev_disp = _grow(ev_disp, len(ev_step))
        if status == _k.STATUS_NONFINITE:
            raise SimulationError(
                f"state became non-finite at step {pos + done}; "
                "reduce dt or check the drift", step=pos + done)
        x = x2
        n_ev = n_ev2
        pos += done
        norm_off += done
        # STATUS_NEED_RANDOM restarts the loop with a fresh uniform buffer
    return Trajectory(dt=dt, states=states, jump_flags=flags,
                      jump_steps=ev_step[:n_ev].copy(), jump_marks=ev_r[:n_ev].copy(),
                      jump_disps=ev_disp[:n_ev].copy(), seed=seed)


def _simulate_path_python(model, x0, nsteps, dt, rng, seed):
    specs = [s for s in (model.levy_measure, model.large_jumps)
             if s is not None and s.total_mass > 0]
    tables = [s.mark_inverse_cdf() for s in specs]
    states = np.empty(nsteps + 1)
    flags = np.zeros(nsteps + 1, dtype=np.uint8)
    states[0] = x = float(x0)
    ev_step, ev_r, ev_disp = [], [], []
    sqdt = math.sqrt(dt)
    for i in range(nsteps):
        bc = float(model.jump_compensator_drift(np.array(x))) if model.has_jumps else 0.0
        x = x + (float(model.drift(np.array(x))) - bc) * dt
        x = x + float(model.diffusion(np.array(x))) * sqdt * rng.standard_normal()
        flag = 0
        for spec, (mu, mr) in zip(specs, tables):
            for _ in range(rng.poisson(spec.total_mass * dt)):
                r = float(np.interp(rng.random(), mu, mr))
                d = float(model.jump_amplitude(np.array(x), r))
                x += d
                ev_step.append(i)
                ev_r.append(r)
                ev_disp.append(d)
                flag = 1
        if not math.isfinite(x):
            raise SimulationError(
                f"state became non-finite at step {i}; "
                "reduce dt or check the drift", step=i)
        states[i + 1] = x
        flags[i + 1] = flag
    return Trajectory(dt=dt, states=states, jump_flags=flags,
                      jump_steps=np.asarray(ev_step, dtype=np.int64),
                      jump_marks=np.asarray(ev_r), jump_disps=np.asarray(ev_disp),
                      seed=seed)


# ---------------------------------------------------------------------------
# run-until-hit
# ---------------------------------------------------------------------------

def _target_slots(targets):
    labels = list(targets)
    if len(labels) == 0 or len(labels) > 2:
        raise ConfigError("need one or two target regions")
    labels.sort()
    slots = []
    for lb in labels:
        reg = targets[lb]
        if reg.kind != "interval":
            return None
        slots.append((lb, reg.lo, reg.hi))
    return slots


def simulate_until_hit(model: LevyModel, x0: float, targets: dict, t_cap: float,
                       dt: float, seed: int = 0) -> HitResult:
    """Run until the state enters a target closure, or until t_cap.

    targets maps labels to regions; entry is checked after the diffusion part
    of each step and again after every individual jump, so the label reflects
    the set entered first.
    """
    rng = _rng(seed)
    return _until_hit_core(model, x0, targets, t_cap, dt, rng)


def _until_hit_core(model, x0, targets, t_cap, dt, rng) -> HitResult:
    if dt <= 0 or t_cap <= 0:
        raise ConfigError("need t_cap > 0 and dt > 0")
    for label, region in targets.items():
        if region.contains_closure(float(x0)):
            return HitResult(label=label, time=0.0, state=float(x0), n_steps=0)
    slots = _target_slots(targets)
    plan = kernel_plan(model, dt)
    cap_steps = int(round(t_cap / dt))
    if plan is None or slots is None:
        return _until_hit_python(model, x0, targets, cap_steps, dt, rng)
    has_a = True
    a_lb, a_lo, a_hi = slots[0]
    if len(slots) == 2:
        has_b = True
        b_lb, b_lo, b_hi = slots[1]
    else:
        has_b, b_lb, b_lo, b_hi = False, "", 0.0, 0.0

    x = float(x0)
    pos = 0
    block = 4096
    while pos < cap_steps:
        n = min(block, cap_steps - pos)
        normals = rng.standard_normal(n)
        off = 0
        while off < n:
            us = rng.random(max(4096, 2 * (n - off)))
            status, done, _uptr, x_end, pre, by_jump = _k.untilhit_block(
                x, plan.c[0], plan.c[1], plan.c[2], plan.c[3],
                plan.sig, plan.sl, plan.bcomp, dt, n - off,
                normals[off:], us, plan.pcum, plan.mu, plan.mr,
                has_a, a_lo, a_hi, has_b, b_lo, b_hi)
            x = x_end
            off += done
            if status == _k.STATUS_NONFINITE:
                raise SimulationError(
                    f"state became non-finite during hitting run at step {pos + off}",
                    step=pos + off)
            if status in (_k.STATUS_HIT_A, _k.STATUS_HIT_B):
                lb = a_lb if status == _k.STATUS_HIT_A else b_lb
                steps = pos + off
                return HitResult(label=lb, time=steps * dt, state=x,
                                 pre_jump_state=pre, hit_by_jump=bool(by_jump),
                                 n_steps=steps)
        pos += n
        block = min(block * 4, 262144)
    return HitResult(label="timeout", time=cap_steps * dt, state=x,
                     n_steps=cap_steps)


def _until_hit_python(model, x0, targets, cap_steps, dt, rng) -> HitResult:
    specs = [s for s in (model.levy_measure, model.large_jumps)
             if s is not None and s.total_mass > 0]
    tables = [s.mark_inverse_cdf() for s in specs]
    sqdt = math.sqrt(dt)
    x = float(x0)

    def entered(xv):
        for lb, reg in targets.items():
            if reg.contains_closure(xv):
                return lb
        return None

    for i in range(cap_steps):
        bc = float(model.jump_compensator_drift(np.array(x))) if model.has_jumps else 0.0
        x = x + (float(model.drift(np.array(x))) - bc) * dt
        x = x + float(model.diffusion(np.array(x))) * sqdt * rng.standard_normal()
        lb = entered(x)
        if lb is not None:
            return HitResult(label=lb, time=(i + 1) * dt, state=x, n_steps=i + 1)
        for spec, (mu, mr) in zip(specs, tables):
            for _ in range(rng.poisson(spec.total_mass * dt)):
                r = float(np.interp(rng.random(), mu, mr))
                before = x
                x += float(model.jump_amplitude(np.array(x), r))
                lb = entered(x)
                if lb is not None:
                    return HitResult(label=lb, time=(i + 1) * dt, state=x,
                                     pre_jump_state=before, hit_by_jump=True,
                                     n_steps=i + 1)
        if not math.isfinite(x):
            raise SimulationError(
                f"state became non-finite during hitting run at step {i}", step=i)
    return HitResult(label="timeout", time=cap_steps * dt, state=x, n_steps=cap_steps)


def until_hit_ensemble(model: LevyModel, x0: float, targets: dict, t_cap: float,
                       dt: float, seed: int, n: int, threads: int = 1):
    """n independent hitting runs; replica i uses the (seed, i) substream, so
    results do not depend on the thread count."""

    def one(i):
        return _until_hit_core(model, x0, targets, t_cap, dt, _rng(seed, i))

    if threads <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, range(n)))


# ---------------------------------------------------------------------------
# fused long-run scan
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class ReactiveScan:
    """Outcome of a single long equilibrium run processed on the fly.

    Transition records are aligned arrays; direction 0 means A to B.  The
    histogram counts end-of-step states in node-centered bins, split by which
    set was touched last (virgin steps before the first touch count in
    neither).  reactive_steps_ab is the summed duration, in steps, of all
    A-to-B transition legs; durations include the entrance step and the step
    leaving the source set, matching the record convention
    duration = (ent_step - exit_step) * dt.
    """

    direction: np.ndarray
    exit_step: np.ndarray
    ent_step: np.ndarray
    exit_x: np.ndarray
    start_x: np.ndarray
    ent_x: np.ndarray
    cross_x: np.ndarray
    n_steps: int
    dt: float
    hist: np.ndarray
    last_a: np.ndarray
    last_b: np.ndarray
    hist_lo: float
    hist_dx: float
    reactive_steps_ab: int
    reactive_steps_ba: int
    direct_hops: int
    x_end: float
    seed: int

    @property
    def n_transitions(self) -> int:
        return len(self.direction)

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    def density_estimate(self):
        """(nodes, rho_hat) from the histogram of all end-of-step states."""
        n = len(self.hist)
        nodes = self.hist_lo + self.hist_dx * (np.arange(n) + 0.5)
        rho = self.hist / (self.hist.sum() * self.hist_dx)
        return nodes, rho


def run_reactive_scan(model: LevyModel, a: Region, b: Region, T: float, dt: float,
                      seed: int = 0, x0: Optional[float] = None,
                      hist_lo: float = -3.0, hist_hi: float = 3.0,
                      hist_bins: int = 1200,
                      q=None, q_level: float = 0.5) -> ReactiveScan:
    """Stream one long path through the transition automaton without storing it.

    q (a committor field) is optional; when given, each A-to-B record carries
    the first state at or above q_level on its way to B.
    """
    if a.kind != "interval" or b.kind != "interval":
        raise ConfigError("the streaming scan needs interval regions")
    plan = kernel_plan(model, dt)
    if plan is None:
        raise ConfigError("the streaming scan needs a kernel-eligible model "
                          "(polynomial drift, constant sigma, additive jumps)")
    nsteps = int(round(T / dt))
    if nsteps < 1:
        raise ConfigError("T shorter than a single step")
    if x0 is None:
        x0 = 0.5 * (a.lo + a.hi)
    rng = _rng(seed)

    hist_dx = (hist_hi - hist_lo) / hist_bins
    hist = np.zeros(hist_bins, dtype=np.int64)
    last_a = np.zeros(hist_bins, dtype=np.int64)
    last_b = np.zeros(hist_bins, dtype=np.int64)

    if q is not None:
        qv = np.asarray(q.values, dtype=float)
        q_lo = float(q.x[0])
        q_inv_dx = 1.0 / q.dx
        lvl = float(q_level)
    else:
        qv = np.zeros(2)
        q_lo, q_inv_dx, lvl = 0.0, 1.0, math.inf

    cap = 16384
    rec_dir = np.empty(cap, dtype=np.int64)
    rec_exit_step = np.empty(cap, dtype=np.int64)
    rec_ent_step = np.empty(cap, dtype=np.int64)
    rec_exit_x = np.empty(cap)
    rec_start_x = np.empty(cap)
    rec_ent_x = np.empty(cap)
    rec_cross_x = np.empty(cap)

    fst = np.zeros(6)
    ist = np.zeros(10, dtype=np.int64)
    fst[0] = float(x0)
    if a.contains_closure(x0):
        ist[0], ist[1] = 0, 0
    elif b.contains_closure(x0):
        ist[0], ist[1] = 1, 1
    else:
        ist[0], ist[1] = -1, 4

    # block sizes mirror simulate_path exactly, so a scan and a stored path
    # with the same seed and step budget realize the same states
    pos = 0
    norm_buf = _EMPTY_F
    norm_off = 0
    while pos < nsteps:
        if norm_off >= len(norm_buf):
            norm_buf = rng.standard_normal(min(_BLOCK, nsteps - pos))
            norm_off = 0
        normals = norm_buf[norm_off:]
        us = rng.random(max(4096, 2 * len(normals)))
        while True:
            snap = (fst.copy(), ist.copy(), hist.copy(), last_a.copy(), last_b.copy())
            status, done, _uptr = _k.reactive_block(
                plan.c[0], plan.c[1], plan.c[2], plan.c[3],
                plan.sig, plan.sl, plan.bcomp, dt, len(normals),
                normals, us, plan.pcum, plan.mu, plan.mr,
                a.lo, a.hi, b.lo, b.hi,
                hist_lo, 1.0 / hist_dx, hist, last_a, last_b,
                q_lo, q_inv_dx, qv, lvl, fst, ist,
                rec_dir, rec_exit_step, rec_ent_step,
                rec_exit_x, rec_start_x, rec_ent_x, rec_cross_x)
            if status != _k.STATUS_OVERFLOW:
                break
            fst, ist, hist, last_a, last_b = snap
            new_cap = 2 * cap
            rec_dir = _grow(rec_dir, new_cap)
            rec_exit_step = _grow(rec_exit_step, new_cap)
            rec_ent_step = _grow(rec_ent_step, new_cap)
            rec_exit_x = _grow(rec_exit_x, new_cap)
            rec_start_x = _grow(rec_start_x, new_cap)
            rec_ent_x = _grow(rec_ent_x, new_cap)
            rec_cross_x = _grow(rec_cross_x, new_cap)
            cap = new_cap
        if status == _k.STATUS_NONFINITE:
            raise SimulationError(
                f"state became non-finite during the scan at step {pos + done}",
                step=pos + done)
        pos += done
        norm_off += done
    n = int(ist[4])
    return ReactiveScan(
        direction=rec_dir[:n].copy(), exit_step=rec_exit_step[:n].copy(),
        ent_step=rec_ent_step[:n].copy(), exit_x=rec_exit_x[:n].copy(),
        start_x=rec_start_x[:n].copy(), ent_x=rec_ent_x[:n].copy(),
        cross_x=rec_cross_x[:n].copy(), n_steps=nsteps, dt=dt,
        hist=hist, last_a=last_a, last_b=last_b, hist_lo=hist_lo, hist_dx=hist_dx,
        reactive_steps_ab=int(ist[5]), reactive_steps_ba=int(ist[8]),
        direct_hops=int(ist[7]), x_end=float(fst[0]), seed=seed)


def _grow(arr: np.ndarray, new_cap: int) -> np.ndarray:
    out = np.empty(new_cap, dtype=arr.dtype)
    out[: len(arr)] = arr
    return out
