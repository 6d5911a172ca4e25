"""Path simulation: scheme accuracy, jump statistics, determinism, hitting."""

import numpy as np
import pytest

import levytpt as lt


def test_ode_limit_tracks_exponential():
    # No noise at all: Euler steps of dx = -x dt.
    m = lt.build_model({"family": "ornstein-uhlenbeck", "theta": 1.0, "sigma": 0.0})
    traj = lt.simulate_path(m, x0=1.0, T=1.0, dt=1e-3, seed=0)
    t = traj.times
    assert np.max(np.abs(traj.states - np.exp(-t))) < 2e-3


def test_pure_jump_event_count_is_poisson():
    m = lt.build_model({
        "family": "pure-jump", "sigma_l": 1.0,
        "measure": {"kind": "uniform", "r_min": 0.1, "r_max": 1.0, "mass": 2.0},
    })
    T = 1000.0
    traj = lt.simulate_path(m, x0=0.0, T=T, dt=1e-3, seed=5)
    rate = len(traj.jump_steps) / T
    assert abs(rate - 2.0) < 3 * np.sqrt(2.0 / T)


def test_ou_weak_moments_shrink_with_dt():
    # E[X_T] = x0 e^{-T}, Var[X_T] = (1 - e^{-2T}) for b=-x, sigma=sqrt(2).
    m = lt.build_model({"family": "ornstein-uhlenbeck", "theta": 1.0, "sigma": np.sqrt(2.0)})
    T, n_rep = 2.0, 4000
    errs = {}
    for dt in (1e-2, 1e-3):
        finals = np.array([
            lt.simulate_path(m, x0=1.0, T=T, dt=dt, seed=s).states[-1]
            for s in range(n_rep)
        ])
        mean_exact = np.exp(-T)
        var_exact = 1 - np.exp(-2 * T)
        stderr = np.sqrt(var_exact / n_rep)
        assert abs(finals.mean() - mean_exact) < 8 * dt + 3 * stderr
        errs[dt] = abs(finals.var() - var_exact)
        assert errs[dt] < 8 * dt + 0.1
    assert errs[1e-3] < errs[1e-2] + 0.05


def test_compensator_keeps_symmetric_jumps_drift_free():
    # With b folded to b - int F nu and symmetric nu, a linear observable
    # keeps the ODE drift: no systematic push from the jump part.
    m = lt.build_model({
        "family": "pure-jump",
        "sigma_l": 0.3,
        "measure": {"kind": "uniform", "r_min": 0.1, "r_max": 1.0, "mass": 2.0},
    })
    finals = np.array([
        lt.simulate_path(m, x0=0.0, T=10.0, dt=1e-3, seed=s).states[-1]
        for s in range(2000)
    ])
    # Var of X_T = T * sl^2 * m2 for the compensated compound Poisson part.
    var_t = 10.0 * 0.3**2 * m.levy_measure.moment(2)
    assert abs(finals.mean()) < 3 * np.sqrt(var_t / len(finals))


def test_seed_determinism_bytes(model, tmp_path):
    t1 = lt.simulate_path(model, x0=-1.0, T=50.0, dt=1e-3, seed=9)
    t2 = lt.simulate_path(model, x0=-1.0, T=50.0, dt=1e-3, seed=9)
    assert np.array_equal(t1.states, t2.states)
    assert np.array_equal(t1.jump_marks, t2.jump_marks)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    t1.to_csv(p1)
    t2.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seeds_differ(model):
    t1 = lt.simulate_path(model, x0=-1.0, T=20.0, dt=1e-3, seed=1)
    t2 = lt.simulate_path(model, x0=-1.0, T=20.0, dt=1e-3, seed=2)
    assert not np.array_equal(t1.jump_steps, t2.jump_steps)


def test_trajectory_csv_round_trip(model, tmp_path):
    traj = lt.simulate_path(model, x0=-1.0, T=2.0, dt=1e-3, seed=4)
    p = tmp_path / "traj.csv"
    traj.to_csv(p)
    assert p.read_text().splitlines()[0] == "t,x1,jump_flag"
    back = lt.Trajectory.from_csv(p)
    assert back.dt == pytest.approx(traj.dt)
    assert np.allclose(back.states, traj.states)
    assert np.array_equal(back.jump_flags, traj.jump_flags)


def test_jump_steps_strictly_within_range(model):
    traj = lt.simulate_path(model, x0=-1.0, T=100.0, dt=1e-3, seed=13)
    js = traj.jump_steps
    assert np.all(js >= 0)
    assert np.all(js < traj.n_steps)
    assert np.all(np.diff(js) >= 0)


class TestUntilHit:
    def test_immediate_when_started_inside(self, model, regions):
        a, b = regions
        res = lt.simulate_until_hit(model, -1.0, {"A": a, "B": b}, t_cap=10.0, dt=1e-3, seed=0)
        assert res.label == "A"
        assert res.time == 0.0
        assert res.state == -1.0

    def test_symmetric_split_from_origin(self, model, regions):
        a, b = regions
        hits = [
            lt.simulate_until_hit(model, 0.0, {"A": a, "B": b}, t_cap=400.0, dt=1e-3, seed=s).label
            for s in range(400)
        ]
        frac_b = np.mean([h == "B" for h in hits])
        assert abs(frac_b - 0.5) < 3 * np.sqrt(0.25 / 400)

    def test_hit_state_in_target(self, model, regions):
        a, b = regions
        for seed in range(20):
            res = lt.simulate_until_hit(model, 0.2, {"A": a, "B": b}, t_cap=400.0, dt=1e-3, seed=seed)
            assert res.label in ("A", "B")
            tgt = a if res.label == "A" else b
            assert tgt.contains_closure(res.state)

    def test_jump_hit_records_left_limit(self, model, regions):
        a, b = regions
        found = False
        for seed in range(200):
            res = lt.simulate_until_hit(model, 0.0, {"A": a, "B": b}, t_cap=400.0, dt=1e-3, seed=seed)
            if res.hit_by_jump:
                found = True
                assert np.isfinite(res.pre_jump_state)
                tgt = a if res.label == "A" else b
                assert not tgt.contains_closure(res.pre_jump_state)
        assert found  # jump-dominated transitions should produce some


def test_blowup_aborts_with_step_index():
    from levytpt.errors import SimulationError
    m = lt.build_model({"family": "custom", "drift_coeffs": [0.0, 0.0, 0.0, 1.0], "sigma": 0.0})
    with pytest.raises(SimulationError, match=r"step"):
        lt.simulate_path(m, x0=2.0, T=10.0, dt=1e-2, seed=0)
