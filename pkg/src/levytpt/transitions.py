"""Decomposition of an equilibrium path into transition legs.

A leg begins at the last state inside the source closure, continues through
the first state outside it (the start point) and ends at the first state
inside the destination closure.  Durations follow the grid convention
duration = (entrance step - exit step) * dt, so a one-step hop has duration
dt rather than zero.  Failed excursions (source -> outside -> source) leave
no record.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import List, Optional

import numpy as np

from .errors import ConfigError, EmptyResultError
from .fields import ScalarField1D
from .models import Region, region_gap
from .simulate import ReactiveScan, Trajectory

TYPE_TOL = 1e-9


@dataclasses.dataclass
class TransitionTrajectory:
    direction: str          # "AB" | "BA"
    exit_point: float       # last state inside the source closure
    start_point: float      # first state outside it
    entrance_point: float   # first state inside the destination closure
    exit_time: float
    entrance_time: float
    duration: float
    type_flag: str          # "I" (start strictly outside) | "II" (on the wall)
    cross_point: float = float("nan")   # first state at or above the q level
    segment: Optional[Trajectory] = None


def classify_type(tt: TransitionTrajectory, source: Region,
                  tol: float = TYPE_TOL) -> str:
    """"II" when the start point sits on the source boundary within tol.

    Grid paths essentially never land on the wall, so "I" is the generic
    outcome; "II" events are kept, not dropped.
    """
    return "II" if abs(float(source.signed_distance(tt.start_point))) <= tol else "I"


def _closure_codes(x: np.ndarray, a: Region, b: Region) -> np.ndarray:
    codes = np.zeros(len(x), dtype=np.int8)
    codes[np.asarray(a.contains_closure(x))] = 1
    codes[np.asarray(b.contains_closure(x))] = 2
    return codes


def extract_transitions(traj: Trajectory, a: Region, b: Region,
                        q: Optional[ScalarField1D] = None,
                        q_level: float = 0.5,
                        keep_segments: bool = True,
                        tol: float = TYPE_TOL) -> List[TransitionTrajectory]:
    """All completed transition legs of a stored path, in time order.

    Any leading stretch before the path first touches one of the sets is
    discarded; an open leg at the end of the window is dropped.  When a
    committor field is given, each A-to-B leg records the first state at or
    above q_level between its start and entrance.
    """
    if region_gap(a, b) <= 0:
        raise ConfigError("regions must be disjoint with a positive gap")
    x = np.asarray(traj.states, dtype=float)
    codes = _closure_codes(x, a, b)
    touched = codes != 0
    if not touched.any():
        warnings.warn("trajectory never visits both regions; no transitions extracted")
        return []
    # index of the most recent touched state at or before k
    pos = np.where(touched, np.arange(len(x)), 0)
    np.maximum.accumulate(pos, out=pos)
    last = codes[pos]
    switches = np.nonzero((last[1:] != last[:-1]) & (last[:-1] != 0))[0] + 1
    if len(switches) == 0:
        warnings.warn("trajectory never visits both regions; no transitions extracted")
        return []
    qvals = None
    if q is not None:
        qvals = np.interp(x, q.x, q.values)
    out: List[TransitionTrajectory] = []
    for e in switches:
        j = int(pos[e - 1])            # last state inside the source closure
        src = a if codes[j] == 1 else b
        direction = "AB" if codes[j] == 1 else "BA"
        cross = float("nan")
        if direction == "AB" and qvals is not None:
            seg = qvals[j + 1:e + 1]
            hits = np.nonzero(seg >= q_level)[0]
            if len(hits):
                cross = float(x[j + 1 + hits[0]])
        segment = None
        if keep_segments:
            flags = np.asarray(traj.jump_flags)
            segment = Trajectory(dt=traj.dt, states=x[j:e + 1].copy(),
                                 jump_flags=flags[j:e + 1].copy(),
                                 t0=traj.t0 + j * traj.dt)
        tt = TransitionTrajectory(
            direction=direction,
            exit_point=float(x[j]), start_point=float(x[j + 1]),
            entrance_point=float(x[e]),
            exit_time=traj.t0 + j * traj.dt,
            entrance_time=traj.t0 + e * traj.dt,
            duration=(e - j) * traj.dt,
            type_flag="I", cross_point=cross, segment=segment)
        tt.type_flag = classify_type(tt, src, tol)
        out.append(tt)
    return out


def scan_to_transitions(scan: ReactiveScan, a: Region, b: Region,
                        tol: float = TYPE_TOL) -> List[TransitionTrajectory]:
    """Transition records of a streaming scan as TransitionTrajectory objects
    (no segments; the scan never stores the path)."""
    out = []
    for k in range(scan.n_transitions):
        direction = "AB" if scan.direction[k] == 0 else "BA"
        src = a if direction == "AB" else b
        tt = TransitionTrajectory(
            direction=direction,
            exit_point=float(scan.exit_x[k]),
            start_point=float(scan.start_x[k]),
            entrance_point=float(scan.ent_x[k]),
            exit_time=scan.exit_step[k] * scan.dt,
            entrance_time=scan.ent_step[k] * scan.dt,
            duration=(scan.ent_step[k] - scan.exit_step[k]) * scan.dt,
            type_flag="I",
            cross_point=float(scan.cross_x[k]))
        tt.type_flag = classify_type(tt, src, tol)
        out.append(tt)
    return out


@dataclasses.dataclass
class RateEstimate:
    """Counting statistics of one equilibrium window.

    t_ab is the mean time from an entrance into the source to the next
    entrance into the destination (residence plus crossing); t_ba the
    reverse.  1/k_ab and t_ab + t_ba agree up to sampling noise and an
    O(1/N) edge effect from the unpaired first and last legs.
    """

    n_transitions: int          # completed source -> destination legs
    window: float
    k_ab: float
    k_stderr: float
    t_ab: float
    t_ab_stderr: float
    t_ba: float
    t_ba_stderr: float
    n_batches: int

    def summary(self) -> dict:
        return {
            "n_transitions": self.n_transitions, "window": self.window,
            "k_ab": self.k_ab, "k_stderr": self.k_stderr,
            "t_ab": self.t_ab, "t_ab_stderr": self.t_ab_stderr,
            "t_ba": self.t_ba, "t_ba_stderr": self.t_ba_stderr,
            "inverse_rate_gap": abs(1.0 / self.k_ab - self.t_ab - self.t_ba)
            if self.k_ab > 0 else float("nan"),
        }


def _batch_stderr(samples: np.ndarray) -> tuple:
    n = len(samples)
    if n < 2:
        return float("nan"), 1
    if n < 10:
        warnings.warn("fewer than 10 transition cycles; error bars are wide")
        return float(np.std(samples, ddof=1) / np.sqrt(n)), 1
    m = max(10, min(30, n // 10))
    edges = np.linspace(0, n, m + 1).astype(int)
    means = np.array([samples[edges[i]:edges[i + 1]].mean() for i in range(m)])
    return float(np.std(means, ddof=1) / np.sqrt(m)), m


def _rate_from_events(directions: np.ndarray, ent_times: np.ndarray,
                      window: float) -> RateEstimate:
    ab = directions == 0
    n_ab = int(ab.sum())
    if n_ab == 0:
        raise EmptyResultError("no transitions observed; increase T or noise")
    k = n_ab / window
    # batch means over equal time windows for the counting rate
    m = max(10, min(30, n_ab // 10)) if n_ab >= 10 else 1
    if m > 1:
        counts = np.histogram(ent_times[ab], bins=m, range=(0.0, window))[0]
        k_se = float(np.std(counts / (window / m), ddof=1) / np.sqrt(m))
    else:
        warnings.warn("fewer than 10 transitions; error bars are wide")
        k_se = k / np.sqrt(max(n_ab, 1))
    # consecutive entrance gaps, labeled by the direction of the later leg
    gaps = np.diff(ent_times)
    later = directions[1:]
    t_ab_samples = gaps[later == 0]
    t_ba_samples = gaps[later == 1]
    t_ab = float(t_ab_samples.mean()) if len(t_ab_samples) else float("nan")
    t_ba = float(t_ba_samples.mean()) if len(t_ba_samples) else float("nan")
    se_ab, _ = _batch_stderr(t_ab_samples)
    se_ba, _ = _batch_stderr(t_ba_samples)
    return RateEstimate(n_transitions=n_ab, window=window, k_ab=k, k_stderr=k_se,
                        t_ab=t_ab, t_ab_stderr=se_ab,
                        t_ba=t_ba, t_ba_stderr=se_ba, n_batches=m)


def empirical_rate(traj: Trajectory, a: Region, b: Region) -> RateEstimate:
    """Counting rate and mean cycle times from a stored path."""
    tts = extract_transitions(traj, a, b, keep_segments=False)
    if not tts:
        raise EmptyResultError("no transitions observed; increase T or noise")
    directions = np.array([0 if t.direction == "AB" else 1 for t in tts])
    ent_times = np.array([t.entrance_time for t in tts]) - traj.t0
    return _rate_from_events(directions, ent_times, traj.n_steps * traj.dt)


def rate_from_scan(scan: ReactiveScan) -> RateEstimate:
    """Counting rate and mean cycle times from a streaming scan."""
    if scan.n_transitions == 0:
        raise EmptyResultError("no transitions observed; increase T or noise")
    return _rate_from_events(np.asarray(scan.direction),
                             np.asarray(scan.ent_step) * scan.dt,
                             scan.total_time)


def empirical_boundary_distributions(tts: List[TransitionTrajectory],
                                     grid) -> tuple:
    """Normalized histograms (exit, start, entrance) of the A-to-B legs.

    Bins are centered on the grid nodes; each histogram integrates to one,
    so grid-computed boundary densities compare directly.
    """
    x = grid.x if hasattr(grid, "x") else np.asarray(grid, dtype=float)
    ab = [t for t in tts if t.direction == "AB"]
    if not ab:
        raise EmptyResultError("no A-to-B transitions to histogram")
    if len(ab) < 100:
        warnings.warn("fewer than 100 transitions; boundary histograms are noisy")
    dx = x[1] - x[0]
    edges = np.concatenate([x - 0.5 * dx, [x[-1] + 0.5 * dx]])

    def hist(vals, name):
        h = np.histogram(vals, bins=edges)[0].astype(float)
        total = h.sum() * dx
        if total > 0:
            h /= total
        return ScalarField1D(x=x, values=h, name=name)

    return (hist(np.array([t.exit_point for t in ab]), "exit_distribution"),
            hist(np.array([t.start_point for t in ab]), "start_distribution"),
            hist(np.array([t.entrance_point for t in ab]), "entrance_distribution"))


def transitions_to_csv(tts: List[TransitionTrajectory], path) -> None:
    with open(path, "w") as fh:
        fh.write("n,direction,exit,start,entrance,duration,type\n")
        for i, t in enumerate(tts, start=1):
            fh.write(f"{i},{t.direction},{t.exit_point:.17g},{t.start_point:.17g},"
                     f"{t.entrance_point:.17g},{t.duration:.17g},{t.type_flag}\n")
