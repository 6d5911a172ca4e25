"""Plain Monte Carlo estimators used to cross-check the grid solvers.

Every estimator here realizes a definition directly (hit B before A, time
occupation, last-touched flag, mean hitting time) so it shares no code with
the grid discretizations it validates.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Optional

import numpy as np

from .errors import NumericError
from .fields import ScalarField1D
from .models import LevyModel, Region
from .simulate import ReactiveScan, Trajectory, until_hit_ensemble

MIN_BIN_VISITS = 50


@dataclasses.dataclass
class CommittorEstimate:
    x: float
    q_hat: float
    stderr: float
    n: int
    n_timeout: int


def estimate_committor_mc(model: LevyModel, x: float, a: Region, b: Region,
                          n: int = 10000, t_cap: float = 400.0,
                          dt: float = 1e-3, seed: int = 0,
                          threads: int = 1) -> CommittorEstimate:
    """Fraction of paths from x that reach the closure of b before a's.

    Timed-out replicas are excluded from the fraction and counted; more than
    10% of them means the cap is too small to decide the race.
    """
    if b.contains_closure(x):
        return CommittorEstimate(x=float(x), q_hat=1.0, stderr=0.0, n=n, n_timeout=0)
    if a.contains_closure(x):
        return CommittorEstimate(x=float(x), q_hat=0.0, stderr=0.0, n=n, n_timeout=0)
    hits = until_hit_ensemble(model, float(x), {"a": a, "b": b}, t_cap, dt,
                              seed, n, threads=threads)
    n_b = sum(1 for h in hits if h.label == "b")
    n_timeout = sum(1 for h in hits if h.label == "timeout")
    if n_timeout >= 0.1 * n:
        raise NumericError(f"{n_timeout}/{n} replicas timed out before deciding "
                           "the race; increase t_cap")
    if n_timeout >= 0.01 * n:
        warnings.warn(f"{n_timeout}/{n} replicas timed out; estimate may be biased")
    decided = n - n_timeout
    q = n_b / decided
    return CommittorEstimate(x=float(x), q_hat=q,
                             stderr=float(np.sqrt(q * (1.0 - q) / decided)),
                             n=n, n_timeout=n_timeout)


def mean_hitting_time_mc(model: LevyModel, x: float, target: Region,
                         n: int = 10000, t_cap: float = 2000.0,
                         dt: float = 1e-3, seed: int = 0,
                         threads: int = 1) -> tuple:
    """(mean, stderr, n_timeout) of the first hitting time of the target
    closure from x.  Timed-out replicas are excluded and counted; they bias
    the mean low, so more than 10% of them is an error."""
    if target.contains_closure(x):
        return 0.0, 0.0, 0
    hits = until_hit_ensemble(model, float(x), {"t": target}, t_cap, dt,
                              seed, n, threads=threads)
    times = np.array([h.time for h in hits if h.label == "t"])
    n_timeout = n - len(times)
    if n_timeout >= 0.1 * n:
        raise NumericError(f"{n_timeout}/{n} replicas never hit the target; "
                           "increase t_cap")
    if n_timeout > 0:
        warnings.warn(f"{n_timeout}/{n} replicas timed out; mean hitting time "
                      "is biased low")
    return (float(times.mean()),
            float(times.std(ddof=1) / np.sqrt(len(times))), n_timeout)


def _node_edges(x: np.ndarray) -> np.ndarray:
    dx = x[1] - x[0]
    return np.concatenate([x - 0.5 * dx, [x[-1] + 0.5 * dx]])


def estimate_density_mc(traj: Trajectory, grid) -> ScalarField1D:
    """Time-occupation histogram of a stored path, normalized to unit mass,
    in bins centered on the grid nodes."""
    x = grid.x if hasattr(grid, "x") else np.asarray(grid, dtype=float)
    h = np.histogram(traj.states, bins=_node_edges(x))[0].astype(float)
    dx = x[1] - x[0]
    total = h.sum() * dx
    if total > 0:
        h /= total
    return ScalarField1D(x=x, values=h, edge="zero", name="density_mc")


def estimate_backward_committor_mc(traj: Trajectory, a: Region, b: Region,
                                   grid) -> ScalarField1D:
    """Per-bin fraction of visits whose most recent touch of the two sets
    was the source set a.  Bins with fewer than 50 visits (and bins never
    visited after a first touch) are NaN."""
    x = grid.x if hasattr(grid, "x") else np.asarray(grid, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    codes = np.zeros(len(states), dtype=np.int8)
    codes[np.asarray(a.contains_closure(states))] = 1
    codes[np.asarray(b.contains_closure(states))] = 2
    touched = codes != 0
    pos = np.where(touched, np.arange(len(states)), 0)
    np.maximum.accumulate(pos, out=pos)
    last = codes[pos]
    keep = last != 0
    edges = _node_edges(x)
    visits = np.histogram(states[keep], bins=edges)[0].astype(float)
    from_a = np.histogram(states[keep & (last == 1)], bins=edges)[0].astype(float)
    vals = np.full(len(x), np.nan)
    ok = visits >= MIN_BIN_VISITS
    vals[ok] = from_a[ok] / visits[ok]
    return ScalarField1D(x=x, values=vals, name="backward_committor_mc")


def backward_committor_from_scan(scan: ReactiveScan,
                                 min_visits: int = MIN_BIN_VISITS) -> ScalarField1D:
    """Same last-touched fraction, read off a streaming scan's split
    histograms; returned on the scan's bin centers."""
    nodes = scan.hist_lo + scan.hist_dx * (np.arange(len(scan.hist)) + 0.5)
    visits = (scan.last_a + scan.last_b).astype(float)
    vals = np.full(len(nodes), np.nan)
    ok = visits >= min_visits
    vals[ok] = scan.last_a[ok] / visits[ok]
    return ScalarField1D(x=nodes, values=vals, name="backward_committor_mc")


def density_from_scan(scan: ReactiveScan) -> ScalarField1D:
    """The scan's occupation histogram as a normalized field on bin centers."""
    nodes, rho = scan.density_estimate()
    return ScalarField1D(x=nodes, values=rho, edge="zero", name="density_mc")
