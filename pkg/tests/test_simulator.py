import numpy as np
import pytest

import switchpred as sp
from switchpred.errors import ConfigError


def short_config(system, horizon=2.0, h=1e-2, x0=(1.0, -0.5), **kw):
    return sp.SimConfig(system=system, delay=1.0, step=h, horizon=horizon,
                        x0=np.array(x0), **kw)


class TestConfig:
    def test_misaligned_delay_rejected(self, two_mode):
        with pytest.raises(ConfigError, match="integer multiple"):
            sp.SimConfig(system=two_mode, delay=1.0, step=3e-4, horizon=1.0,
                         x0=np.zeros(2))

    def test_bad_method_rejected(self, two_mode):
        with pytest.raises(ConfigError, match="predictor_method"):
            short_config(two_mode, predictor_method="magic")

    def test_sampled_initial_inputs(self, two_mode):
        u0 = np.linspace(-1, 1, 100)
        cfg = short_config(two_mode, u0=u0)
        assert np.array_equal(cfg.initial_inputs(), u0)
        with pytest.raises(ConfigError, match="samples"):
            short_config(two_mode, u0=np.zeros(7))


class TestClosedLoop:
    def test_equilibrium_stays_at_zero(self, two_mode):
        cfg = short_config(two_mode, x0=(0.0, 0.0))
        res = sp.simulate_closed_loop(cfg)
        assert np.all(res.states == 0.0)
        assert np.all(res.inputs == 0.0)
        assert res.switches == []
        assert not res.diagnostics.guard_tripped

    def test_decision_identity(self, bundled_run):
        # the logged input is exactly the predictor-mode gain applied to
        # the logged predictor snapshot
        res = bundled_run
        system = res.config.system
        gains = system.K_stack[res.predictor_modes]
        u = np.einsum("ij,ij->i", gains, res.predictor)
        assert np.array_equal(u, res.inputs)

    def test_delay_lookup_ring_identity(self, bundled_run):
        # the input entering the plant at step j was decided at step j - N
        res = bundled_run
        N = res.config.n_delay_steps
        assert np.array_equal(res.u_all[N:], res.inputs)
        assert np.array_equal(res.u_all[: N], res.initial_inputs)

    def test_state_continuity_across_switches(self, bundled_run):
        # switching changes dynamics only; the state array has no jumps
        # beyond one Euler increment
        res = bundled_run
        h = res.config.step
        steps = np.linalg.norm(np.diff(res.states, axis=0), axis=1)
        bound = h * (6.0 * np.linalg.norm(res.states, axis=1)[:-1]
                     + 1.0 * np.abs(res.u_all[: len(steps)]))
        assert np.all(steps <= bound + 1e-12)

    def test_modes_piecewise_constant_finite_switches(self, bundled_run):
        changes = np.count_nonzero(np.diff(bundled_run.plant_modes))
        assert changes == bundled_run.diagnostics.switch_count
        assert changes == len(bundled_run.switches)
        assert 0 < changes < 100

    def test_determinism(self, bundled_config):
        a = sp.simulate_closed_loop(bundled_config)
        b = sp.simulate_closed_loop(bundled_config)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.lyapunov, b.lyapunov)
        assert a.switches == b.switches

    def test_degenerate_two_mode_equals_single_mode(self, two_mode):
        # both modes identical: switching is vacuous, and the run must
        # match a hand-rolled single-mode delay-compensating loop
        m = two_mode.modes[0]
        twin = sp.QuadraticPartition((m, m), hysteresis=0.0)
        h, D, T = 1e-2, 1.0, 3.0
        cfg = sp.SimConfig(system=twin, delay=D, step=h, horizon=T,
                           x0=np.array([0.4, -0.3]))
        res = sp.simulate_closed_loop(cfg)
        assert res.switches == []

        N, M = cfg.n_delay_steps, cfg.n_steps
        u_all = np.zeros(M + N + 1)
        X = np.zeros((M + 1, 2))
        X[0] = cfg.x0
        for j in range(M + 1):
            p = X[j].copy()
            for l in range(N):
                p = p + h * (m.A @ p + m.B * u_all[j + l])
            u_all[N + j] = float(m.K @ p)
            if j < M:
                X[j + 1] = X[j] + h * (m.A @ X[j] + m.B * u_all[j])
        assert np.allclose(res.states, X, rtol=0, atol=1e-12)

    def test_semiexplicit_method_runs(self, two_mode):
        cfg = short_config(two_mode, predictor_method="semiexplicit")
        res = sp.simulate_closed_loop(cfg)
        assert not res.diagnostics.guard_tripped
        assert np.all(np.isfinite(res.states))


class TestGuards:
    def test_divergence_guard(self, two_mode):
        # zero gains leave both open-loop unstable modes uncontrolled
        modes = tuple(
            sp.ModeDynamics(A=m.A, B=m.B, K=np.zeros(2), P=m.P, Q=m.Q)
            for m in two_mode.modes
        )
        runaway = sp.QuadraticPartition(modes, hysteresis=0.0)
        cfg = sp.SimConfig(system=runaway, delay=1.0, step=1e-2, horizon=20.0,
                           x0=np.array([2.0, -1.0]), divergence_norm=1e6)
        res = sp.simulate_closed_loop(cfg)
        assert res.diagnostics.diverged
        assert res.diagnostics.trip_time is not None
        assert res.states.shape[0] < cfg.n_steps + 1

    def test_chattering_guard(self, bundled_config):
        import dataclasses

        cfg = dataclasses.replace(bundled_config, max_switch_rate=0.0)
        res = sp.simulate_closed_loop(cfg)
        assert res.diagnostics.chattering
        assert res.diagnostics.trip_time is not None
        assert res.times[-1] == pytest.approx(res.diagnostics.trip_time)


class TestOpenLoop:
    def test_zero_everything(self, two_mode):
        cfg = short_config(two_mode, x0=(0.0, 0.0))
        res = sp.simulate_open_loop(cfg, lambda t: 0.0)
        assert np.all(res.states == 0.0)

    def test_unforced_instability(self, two_mode):
        cfg = sp.SimConfig(system=two_mode, delay=1.0, step=1e-3, horizon=10.0,
                           x0=np.array([2.0, -1.0]))
        res = sp.simulate_open_loop(cfg, lambda t: 0.0)
        assert np.linalg.norm(res.final_state) > 1e3 * np.linalg.norm(cfg.x0)

    def test_replays_closed_loop_before_feedback_arrives(self, bundled_config,
                                                         bundled_run):
        # during the first delay interval the loop sees only the pre-start
        # inputs, so it coincides with the driven open-loop system
        N = bundled_config.n_delay_steps
        res_open = sp.simulate_open_loop(bundled_config, lambda t: 0.0)
        assert np.array_equal(res_open.states[: N + 1],
                              bundled_run.states[: N + 1])


class TestNominal:
    def test_zero_state(self, two_mode):
        cfg = short_config(two_mode, x0=(0.0, 0.0))
        res = sp.simulate_nominal(cfg)
        assert np.all(res.states == 0.0)

    def test_delay_free_loop_decays(self, bundled_config):
        res = sp.simulate_nominal(bundled_config)
        assert np.linalg.norm(res.final_state) < 1e-2
        assert not res.diagnostics.guard_tripped

    def test_closed_loop_shifts_to_nominal(self, bundled_run_pure):
        # after the dead time, exact compensation makes the closed loop
        # follow the delay-free loop started from the state one delay in
        res = bundled_run_pure
        cfg = res.config
        N = cfg.n_delay_steps
        import dataclasses

        nom_cfg = dataclasses.replace(
            cfg, horizon=cfg.horizon - cfg.delay, x0=res.states[N])
        nom = sp.simulate_nominal(nom_cfg)
        diff = np.linalg.norm(res.states[N:] - nom.states, axis=1)
        scale = 1.0 + np.linalg.norm(nom.states, axis=1)
        assert np.max(diff / scale) <= 1e-9


class TestInstants:
    def test_no_switches_constant_mode(self, toy_single):
        cfg = sp.SimConfig(system=toy_single, delay=0.5, step=1e-2,
                           horizon=1.0, x0=np.array([1.0, 0.0]))
        res = sp.simulate_closed_loop(cfg)
        assert sp.switching_instants(res) == []

    def test_bundled_run_has_early_switch(self, bundled_run):
        instants = sp.switching_instants(bundled_run)
        assert instants == bundled_run.switches
        assert instants[0][0] < 1.0
        for t, a, b in instants:
            assert a != b

    def test_count_matches_logged_changes(self, bundled_run):
        changes = np.count_nonzero(np.diff(bundled_run.plant_modes))
        assert len(sp.switching_instants(bundled_run)) == changes


class TestConvergenceStudy:
    def test_level_validation(self, bundled_config):
        with pytest.raises(ConfigError, match="at least 2"):
            sp.convergence_study(bundled_config, 1)

    def test_pure_law_prediction_is_exact(self, two_mode):
        # same switching law on both sides: the discrete predictor
        # reproduces the discrete plant bit for bit
        cfg = sp.SimConfig(system=two_mode.with_hysteresis(0.0), delay=1.0,
                           step=1e-2, horizon=3.0, x0=np.array([2.0, -1.0]))
        study = sp.convergence_study(cfg, 2)
        assert study.exact

    def test_semiexplicit_first_order(self, two_mode):
        cfg = sp.SimConfig(system=two_mode.with_hysteresis(0.0), delay=1.0,
                           step=2e-3, horizon=3.0, x0=np.array([2.0, -1.0]),
                           predictor_method="semiexplicit")
        study = sp.convergence_study(cfg, 3)
        assert not study.exact
        for order in study.orders:
            assert 0.7 <= order <= 1.5
