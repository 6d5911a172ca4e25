"""Tilted (transition path) sampler: drift, thinning, and distributional checks."""

import numpy as np
import pytest

import levytpt as lt
from levytpt.errors import ConfigError, EmptyResultError, NumericError


@pytest.fixture(scope="module")
def q_field(solved):
    return solved["q"].field


@pytest.fixture(scope="module")
def flat_q():
    x = np.linspace(-3, 3, 601)
    return lt.ScalarField1D(x, np.full_like(x, 0.5), name="flat")


@pytest.fixture(scope="module")
def scan_run(model, regions, q_field):
    a, b = regions
    scan = lt.run_reactive_scan(model, a, b, 2e4, 1e-3, seed=41, x0=-1.0,
                                q=q_field, q_level=0.5)
    tts = lt.scan_to_transitions(scan, a, b)
    return scan, [t for t in tts if t.direction == "AB"]


class TestEffectiveDrift:
    def test_flat_committor_leaves_bare_drift(self, model, flat_q):
        # sigma^2 q'/q drops out and the symmetric compensator is zero.
        for y in (-0.5, 0.0, 0.4, 1.6):
            k = lt.effective_drift(model, flat_q, y)
            b = float(model.drift(np.array(y)))
            assert abs(k - b) < 1e-12

    def test_diffusion_formula_on_logistic_profile(self, diffusion_model):
        # q(x) = 1/(1+e^{-4x}) has q' = 4q(1-q), so K = b + 4 sigma^2 (1-q).
        s2 = 0.25
        y = 0.3
        b = float(diffusion_model.drift(np.array(y)))
        q_true = 1.0 / (1.0 + np.exp(-4 * y))
        k_true = b + 4 * s2 * (1 - q_true)

        errs = []
        for n in (601, 1201):
            x = np.linspace(-3, 3, n)
            q = lt.ScalarField1D(x, 1.0 / (1.0 + np.exp(-4 * x)))
            errs.append(abs(lt.effective_drift(diffusion_model, q, y) - k_true))
        assert errs[0] < 1e-3
        assert errs[1] < errs[0] / 2  # second order stencil

    def test_undefined_on_vanishing_committor(self, model, q_field):
        with pytest.raises(NumericError, match="vanishes"):
            lt.effective_drift(model, q_field, -1.0)


class TestJumpTilt:
    def test_flat_committor_gives_unit_tilt(self, model, flat_q):
        for y, r in ((0.0, 0.5), (-0.4, -0.2), (1.0, 0.9)):
            assert lt.jump_rate_lambda(flat_q, y, r, model) == 1.0

    def test_jump_into_source_is_suppressed(self, model, q_field):
        # displacement is sigma_l * r = -0.27, landing at -0.77 where q = 0
        disp = float(model.jump_amplitude(np.array(-0.5), -0.9))
        assert disp == pytest.approx(-0.27)
        lam = lt.jump_rate_lambda(q_field, -0.5, -0.9, model)
        assert lam < 1e-9

    def test_jump_into_target_is_amplified(self, model, q_field):
        # 0.5 + 0.27 = 0.77 sits inside the target where q = 1
        lam = lt.jump_rate_lambda(q_field, 0.5, 0.9, model)
        assert lam == pytest.approx(1.0 / float(q_field(0.5)), rel=1e-12)
        assert lam > 1.0

    def test_halfway_launch_doubles_the_rate(self, model):
        # q = 0.5 at the launch point and 1 at the destination gives tilt 2.
        x = np.linspace(-3, 3, 601)
        q = lt.ScalarField1D(x, np.clip((x - 0.35) / 0.5, 0.0, 1.0))
        assert float(q(0.6)) == pytest.approx(0.5)
        lam = lt.jump_rate_lambda(q, 0.6, 0.9, model)
        assert lam == pytest.approx(2.0, rel=1e-12)

    def test_out_of_window_destination_rejected(self, model, q_field):
        with pytest.raises(ConfigError, match="destination"):
            lt.jump_rate_lambda(q_field, 2.8, 0.9, model)


class TestThinning:
    def test_flat_committor_always_accepts(self, model, flat_q):
        for um, ua in ((0.1, 0.0), (0.5, 0.5), (0.93, 0.999)):
            out = lt.thinning_sampler(flat_q, 0.2, model, (um, ua))
            assert out.tilt == 1.0
            assert out.acceptance == 1.0
            assert out.accepted

    def test_outcome_is_internally_consistent(self, model, q_field):
        y = 0.3
        qy = float(q_field(y))
        for um in np.linspace(0.01, 0.99, 23):
            out = lt.thinning_sampler(q_field, y, model, (um, 0.4))
            assert 0.1 <= abs(out.mark) <= 1.0
            assert out.destination == pytest.approx(y + model.sigma_l * out.mark,
                                                    abs=1e-12)
            assert out.tilt == pytest.approx(float(q_field(out.destination)) / qy,
                                             rel=1e-12)
            assert out.accepted == (0.4 < out.acceptance)

    def test_frozen_state_acceptance_frequency(self, model, q_field):
        # Averaging the acceptance ratio over the mark variable must reproduce
        # int q(y+r) nu(dr) / (mass * qmax) for the window majorant qmax.
        y = 0.3
        um = np.linspace(0.0, 1.0, 4001)[1:-1]
        outs = [lt.thinning_sampler(q_field, y, model, (u, 0.5)) for u in um]
        qmax = float(q_field(outs[0].destination)) / outs[0].acceptance
        freq = np.mean([o.acceptance for o in outs])

        meas = model.levy_measure
        r, w = meas.quadrature(512)
        dest = y + model.sigma_l * r
        want = np.sum(w * np.interp(dest, q_field.x, q_field.values))
        want /= meas.moment(0) * qmax
        assert freq == pytest.approx(want, rel=2e-3)

    def test_marks_into_dead_zone_never_accepted(self, model):
        # Ramp committor that vanishes left of 0.48: every negative-side mark
        # from y = 0.5 displaces by at most -0.03 into the dead zone and must
        # be rejected even at u_accept = 0.
        x = np.linspace(-3, 3, 601)
        vals = np.clip((x - 0.48) / 2.52, 0.0, 1.0)
        q = lt.ScalarField1D(x, vals)
        saw_negative = False
        for um in np.linspace(0.01, 0.99, 99):
            out = lt.thinning_sampler(q, 0.5, model, (um, 0.0))
            if out.mark < 0:
                saw_negative = True
                assert out.acceptance == 0.0
                assert not out.accepted
        assert saw_negative

    def test_vanishing_committor_state_rejected(self, model):
        x = np.linspace(-3, 3, 601)
        q = lt.ScalarField1D(x, np.clip((x - 0.4) / 2.6, 0.0, 1.0))
        with pytest.raises(NumericError, match="vanishes"):
            lt.thinning_sampler(q, 0.0, model, (0.5, 0.5))

    def test_diffusion_model_has_no_thinning(self, diffusion_model, flat_q):
        with pytest.raises(ConfigError, match="jumps"):
            lt.thinning_sampler(flat_q, 0.0, diffusion_model, (0.5, 0.5))


class TestSinglePath:
    def test_start_inside_target_is_trivial(self, model, regions, q_field):
        a, b = regions
        traj, hit, path = lt.sample_tpp_path(model, q_field, a, b, 1.0, seed=0)
        assert path.status == "B"
        assert path.duration == 0.0
        assert hit.time == 0.0

    def test_start_inside_source_rejected(self, model, regions, q_field):
        a, b = regions
        with pytest.raises(ConfigError, match="source"):
            lt.sample_tpp_path(model, q_field, a, b, -1.0, seed=0)

    def test_path_never_returns_to_source(self, model, regions, q_field):
        a, b = regions
        cfg = lt.TppConfig(record=True)
        for seed in range(6):
            traj, hit, path = lt.sample_tpp_path(model, q_field, a, b, -0.7,
                                                 cfg=cfg, seed=seed)
            assert traj is not None
            inside = [x for x in traj.states if a.contains(float(x))]
            assert inside == []

    def test_recorded_path_ends_at_hit(self, model, regions, q_field):
        a, b = regions
        traj, hit, path = lt.sample_tpp_path(model, q_field, a, b, -0.7,
                                             cfg=lt.TppConfig(record=True), seed=3)
        if path.status == "B":
            assert b.contains_closure(path.y_end)
            assert traj.states[-1] == pytest.approx(path.y_end)
            assert path.duration > 0.0


@pytest.fixture(scope="module")
def ensemble(model, regions, q_field, scan_run):
    a, b = regions
    _, ab = scan_run
    starts = np.array([t.start_point for t in ab])
    return lt.sample_tpp_ensemble(model, q_field, a, b, starts, n=400, seed=9)


class TestEnsemble:

    def test_statuses_partition(self, ensemble):
        ens = ensemble
        assert ens.n_b + ens.n_a + ens.n_floor + ens.n_timeout == ens.n == 400
        assert ens.n_b >= 396  # tilting makes source returns rare

    def test_rejection_rate_small(self, ensemble):
        assert ensemble.rejection_rate < 0.02

    def test_b_paths_land_in_target(self, ensemble, regions, model):
        _, b = regions
        ends = np.array([p.y_end for p in ensemble.paths if p.status == "B"])
        reach = model.max_jump_reach()
        assert np.all(ends >= 0.75 - 1e-12)
        assert np.all(ends <= 1.25 + reach)

    def test_durations_and_crossings(self, ensemble):
        d = ensemble.durations("B")
        assert np.all(d > 0)
        c = ensemble.crossings()
        assert np.all((c > -0.75) & (c < 0.75))

    def test_deterministic_and_thread_invariant(self, model, regions, q_field):
        a, b = regions
        starts = np.array([-0.7, -0.6])
        e1 = lt.sample_tpp_ensemble(model, q_field, a, b, starts, n=60, seed=5)
        e2 = lt.sample_tpp_ensemble(model, q_field, a, b, starts, n=60, seed=5,
                                    threads=3)
        assert np.array_equal(e1.durations("B"), e2.durations("B"))
        e3 = lt.sample_tpp_ensemble(model, q_field, a, b, starts, n=60, seed=6)
        assert not np.array_equal(e1.durations("B"), e3.durations("B"))

    def test_empty_bank_rejected(self, model, regions, q_field):
        a, b = regions
        with pytest.raises(ConfigError, match="bank"):
            lt.sample_tpp_ensemble(model, q_field, a, b, np.array([]), n=10)


class TestMartingale:
    BANK = np.array([-0.5, -0.3, 0.0])

    def test_honest_committor_passes(self, model, regions, q_field):
        a, b = regions
        rep = lt.martingale_check(model, q_field, a, b,
                                  starts=self.BANK, n=1500, seed=13)
        assert rep.ok
        assert rep.drift < rep.threshold
        assert rep.m0 > 1.0  # mean of 1/q over the bank

    def test_corrupted_committor_fails(self, model, regions, q_field):
        a, b = regions
        bad = lt.corrupted_committor(q_field, amplitude=0.1, wavenumber=10.0)
        rep = lt.martingale_check(model, bad, a, b,
                                  starts=self.BANK, n=1500, seed=13)
        assert not rep.ok
        assert rep.drift > rep.threshold

    def test_floor_filters_bank(self, model, regions, q_field):
        a, b = regions
        with pytest.raises(ConfigError, match="floor"):
            lt.martingale_check(model, q_field, a, b,
                                starts=np.array([-1.2]), n=100, q_floor=0.05)


class TestEquivalence:
    def test_matched_distributions_pass(self, model, regions, q_field, scan_run):
        a, b = regions
        _, ab = scan_run
        starts = np.array([t.start_point for t in ab])
        ens = lt.sample_tpp_ensemble(model, q_field, a, b, starts,
                                     n=len(ab), seed=17)
        rep = lt.equivalence_report(ab, ens, dt=1e-3)
        assert set(rep.stats) == {"duration", "entrance", "crossing"}
        assert rep.ok, rep.lines()
        assert all(p > rep.alpha for _, p, _, _ in rep.stats.values())
        assert rep.failures() == []

    def test_report_prints_one_line_per_statistic(self, model, regions, q_field,
                                                  scan_run):
        a, b = regions
        _, ab = scan_run
        ens = lt.sample_tpp_ensemble(model, q_field, a, b,
                                     np.array([t.start_point for t in ab]),
                                     n=150, seed=23)
        rep = lt.equivalence_report(ab, ens, dt=1e-3)
        lines = rep.lines()
        assert len(lines) == 4  # three statistics plus the verdict
        assert any("duration" in ln for ln in lines)

    def test_empty_sides_rejected(self, model, regions, q_field, scan_run):
        a, b = regions
        _, ab = scan_run
        ens = lt.sample_tpp_ensemble(model, q_field, a, b,
                                     np.array([t.start_point for t in ab]),
                                     n=30, seed=29)
        with pytest.raises(EmptyResultError):
            lt.equivalence_report([], ens, dt=1e-3)
