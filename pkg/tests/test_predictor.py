import numpy as np
import pytest

import switchpred as sp
from switchpred.errors import (
    ChatteringError,
    MatrixExponentialOverflowError,
    PredictorDivergedError,
)
from switchpred.model import InputHistory


def expm_series(A, s, terms=60):
    """Independent exponential oracle: scaled truncated series, squared back."""
    M = np.asarray(A, dtype=float) * s
    norm = np.linalg.norm(M, np.inf)
    k = 0
    while norm / 2**k > 0.5:
        k += 1
    Ms = M / 2**k
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for i in range(1, terms):
        term = term @ Ms / i
        E = E + term
    for _ in range(k):
        E = E @ E
    return E


def rk4_window(system, x0, u, h, substeps=100):
    """Fourth-order window integration at h/substeps, the sharp oracle."""
    x = np.asarray(x0, dtype=float).copy()
    hs = h / substeps

    def f(y, ul):
        m = sp.sigma_of(system, y)
        return system.modes[m].A @ y + system.modes[m].B * ul

    for l in range(len(u)):
        for _ in range(substeps):
            k1 = f(x, u[l])
            k2 = f(x + 0.5 * hs * k1, u[l])
            k3 = f(x + 0.5 * hs * k2, u[l])
            k4 = f(x + hs * k3, u[l])
            x = x + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


class TestMatExp:
    def test_zero_matrix(self):
        assert np.array_equal(sp.mat_exp(np.zeros((3, 3)), 1.7), np.eye(3))

    def test_diagonal(self):
        A = np.diag([0.3, -1.2])
        E = sp.mat_exp(A, 2.0)
        assert np.allclose(np.diag(E), np.exp(np.diag(A) * 2.0), rtol=1e-14)
        assert E[0, 1] == 0.0 and E[1, 0] == 0.0

    def test_matches_series_oracle(self, two_mode):
        A = two_mode.modes[0].A
        E = sp.mat_exp(A, 1.0)
        E_ref = expm_series(A, 1.0)
        assert np.linalg.norm(E - E_ref, 2) <= 1e-12 * np.linalg.norm(E_ref, 2)

    def test_semigroup(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            A = rng.normal(size=(3, 3))
            s1, s2 = rng.uniform(0.1, 2, size=2)
            lhs = sp.mat_exp(A, s1) @ sp.mat_exp(A, s2)
            rhs = sp.mat_exp(A, s1 + s2)
            assert np.linalg.norm(lhs - rhs, 2) <= 1e-10 * np.linalg.norm(rhs, 2)

    def test_overflow_guard(self):
        with pytest.raises(MatrixExponentialOverflowError, match="exponent too large"):
            sp.mat_exp(np.eye(2) * 500.0, 1.0)


class TestImplicitTrace:
    def test_pure_integrator_constant_input(self, toy_single):
        hist = InputHistory.constant(2.0, 0.01, 1.0)
        x0 = np.array([0.5, -0.5])
        trace = sp.implicit_predictor_trace(toy_single, x0, hist)
        assert np.allclose(trace.final, x0 + np.array([2.0, 0.0]), rtol=1e-12)

    def test_anchor_is_exact(self, two_mode_pure):
        x0 = np.array([2.0, -1.0])
        hist = InputHistory.constant(0.3, 1e-2, 1.0)
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        assert np.array_equal(trace.values[0], x0)
        assert trace.modes[0] == sp.sigma_of(two_mode_pure, x0)

    def test_single_mode_matches_exponential_oracle(self, two_mode):
        # one mode alone: the window flow is linear, the sweep is first order
        m = two_mode.modes[0]
        single = sp.QuadraticPartition(
            (sp.ModeDynamics(A=m.A, B=m.B, K=m.K, P=np.eye(2)),), 0.0)
        x0 = np.array([1.0, 0.5])
        errs = []
        for h in (1e-3, 5e-4):
            hist = InputHistory.constant(0.0, h, 1.0)
            trace = sp.implicit_predictor_trace(single, x0, hist)
            exact = expm_series(m.A, 1.0) @ x0
            errs.append(np.linalg.norm(trace.final - exact) / np.linalg.norm(exact))
        assert errs[0] < 2e-2
        assert 1.7 <= errs[0] / errs[1] <= 2.3  # first order in the step

    def test_bundled_window_against_rk4(self, two_mode_pure):
        x0 = np.array([2.0, -1.0])
        hist = InputHistory.constant(0.0, 1e-3, 1.0)
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        ref = rk4_window(two_mode_pure, x0, np.zeros(1000), 1e-3, substeps=10)
        rel = np.linalg.norm(trace.final - ref) / np.linalg.norm(ref)
        assert rel <= 1e-2

    def test_mode_annotation_matches_pure_law(self, two_mode_pure):
        x0 = np.array([1.5, 0.2])
        hist = InputHistory.constant(-0.4, 5e-3, 1.0)
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        for j in range(0, trace.values.shape[0], 97):
            assert trace.modes[j] == sp.sigma_of(two_mode_pure, trace.values[j])

    def test_divergence_reported(self):
        blow = sp.ModeDynamics(A=900 * np.eye(2), B=[1, 0], K=[0, 0], P=np.eye(2))
        system = sp.QuadraticPartition((blow,), 0.0)
        hist = InputHistory.constant(0.0, 1e-2, 10.0)
        with pytest.raises(PredictorDivergedError, match="predictor diverged"):
            sp.implicit_predictor_trace(system, np.array([1.0, 1.0]), hist)


class TestModeSequence:
    def test_constant_mode_window(self, toy_single):
        hist = InputHistory.constant(0.0, 0.01, 1.0)
        trace = sp.implicit_predictor_trace(toy_single, np.array([1.0, 0.0]), hist)
        seq = sp.detect_mode_sequence(toy_single, trace, hist)
        assert seq.modes == (0,)
        assert np.allclose(seq.times, [0.0, 1.0])

    def test_single_crossing_located(self, two_mode_pure):
        h = 1e-3
        hist = InputHistory.constant(0.0, h, 1.0)
        x0 = np.array([2.0, -1.0])
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        seq = sp.detect_mode_sequence(two_mode_pure, trace, hist)
        assert seq.modes[:2] == (0, 1)
        s1 = seq.times[1]
        # oracle: dense sweep at h/100 locates the same exit
        fine = 100
        hist_f = InputHistory.constant(0.0, h / fine, 1.0)
        trace_f = sp.implicit_predictor_trace(two_mode_pure, x0, hist_f)
        j = int(np.argmax(np.diff(trace_f.modes) != 0)) + 1
        s1_fine = j * (h / fine)
        assert abs(s1 - s1_fine) <= 2 * h
        # the refined time lies inside the grid interval that flipped
        k = int(np.argmax(np.diff(trace.modes) != 0)) + 1
        assert (k - 1) * h <= s1 <= k * h

    def test_chattering_guard(self, two_mode_pure):
        hist = InputHistory.constant(0.0, 1e-3, 1.0)
        x0 = np.array([2.0, -1.0])
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        with pytest.raises(ChatteringError, match="chattering"):
            sp.detect_mode_sequence(two_mode_pure, trace, hist, max_switches=0)


class TestSemiExplicit:
    def test_single_mode_closed_form(self, two_mode):
        # no exits: exponential of the full window plus forced response
        m = two_mode.modes[0]
        single = sp.QuadraticPartition(
            (sp.ModeDynamics(A=m.A, B=m.B, K=m.K, P=np.eye(2)),), 0.0)
        h, D = 1e-3, 1.0
        rng = np.random.default_rng(6)
        u = rng.uniform(-1, 1, size=1000)
        hist = InputHistory(np.concatenate([u, [0.0]]), h, D)
        x0 = np.array([0.3, -0.2])
        p_t, seq = sp.semi_explicit_predictor(single, x0, hist)
        assert seq.modes == (0,)
        # oracle: homogeneous part by the series exponential, forcing by
        # the same left-endpoint rule evaluated directly
        E = expm_series(m.A, D)
        forced = np.zeros(2)
        for l in range(1000):
            forced += h * (expm_series(m.A, D - l * h) @ (m.B * u[l]))
        ref = E @ x0 + forced
        assert np.linalg.norm(p_t - ref) / np.linalg.norm(ref) < 1e-10

    def test_pure_integrator_constant_input(self, toy_single):
        hist = InputHistory.constant(1.5, 0.01, 2.0)
        x0 = np.array([0.0, 1.0])
        p_t, seq = sp.semi_explicit_predictor(toy_single, x0, hist)
        assert np.allclose(p_t, x0 + np.array([3.0, 0.0]), rtol=1e-12)
        assert seq.modes == (0,)

    def test_agrees_with_implicit_on_bundled_window(self, two_mode_pure):
        x0 = np.array([2.0, -1.0])
        hist = InputHistory.constant(0.0, 1e-3, 1.0)
        trace = sp.implicit_predictor_trace(two_mode_pure, x0, hist)
        p_t, seq = sp.semi_explicit_predictor(two_mode_pure, x0, hist)
        rel = np.linalg.norm(trace.final - p_t) / (1 + np.linalg.norm(trace.final))
        assert rel <= 5e-3
        det = sp.detect_mode_sequence(two_mode_pure, trace, hist)
        assert det.modes == seq.modes

    def test_close_to_rk4_oracle(self, two_mode_pure):
        # exact homogeneous integration: much sharper than the Euler sweep
        x0 = np.array([2.0, -1.0])
        hist = InputHistory.constant(0.0, 1e-3, 1.0)
        p_t, _ = sp.semi_explicit_predictor(two_mode_pure, x0, hist)
        ref = rk4_window(two_mode_pure, x0, np.zeros(1000), 1e-3, substeps=10)
        assert np.linalg.norm(p_t - ref) / np.linalg.norm(ref) < 1e-4


class TestMethodAgreement:
    def test_random_stable_systems(self, clean_window_factory):
        rng = np.random.default_rng(7)
        gaps = []
        for _ in range(10):
            system, x0, hist, trace = clean_window_factory(rng)
            p_t, seq = sp.semi_explicit_predictor(system, x0, hist)
            gap = np.linalg.norm(trace.final - p_t) / (1 + np.linalg.norm(trace.final))
            gaps.append(gap)
            assert gap <= 5e-3
        assert max(gaps) > 0  # the two routes are genuinely different

    def test_gap_shrinks_linearly_with_step(self, stable_two_mode_factory):
        rng = np.random.default_rng(8)
        D = 1.0
        checked = 0
        while checked < 5:
            system = stable_two_mode_factory(rng)
            x0 = rng.normal(size=2)
            u_coarse = rng.uniform(-1, 1, size=100)
            gaps = []
            clean = True
            for h in (1e-2, 5e-3):
                N = int(round(D / h))
                u = np.repeat(u_coarse, N // 100)  # same signal at each level
                hist = InputHistory(np.concatenate([u, [0.0]]), h, D)
                trace = sp.implicit_predictor_trace(system, x0, hist)
                if np.count_nonzero(np.diff(trace.modes)) > 10:
                    clean = False
                    break
                p_t, _ = sp.semi_explicit_predictor(system, x0, hist)
                gaps.append(np.linalg.norm(trace.final - p_t))
            if not clean or min(gaps) < 1e-14:
                continue
            assert 1.5 <= gaps[0] / gaps[1] <= 3.0
            checked += 1
