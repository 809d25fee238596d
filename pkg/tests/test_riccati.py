import math

import numpy as np
import pytest

from mjls import (
    InvalidInput,
    InvalidState,
    MjlsModel,
    NotStabilizable,
    ObservabilityViolation,
    PreconditionFailed,
    RiccatiBreakdown,
    care_residual,
    cdre_step,
    optimal_cost_finite,
    solve_care,
    solve_finite,
    write_riccati_csv,
)

from conftest import scalar_model
from corpus import classical_finite_riccati, random_model


def zeros_terminal(model):
    n = model.state_dim
    return [np.zeros((n, n)) for _ in range(model.mode_count)]


def identity_terminal(model):
    return [np.eye(model.state_dim) for _ in range(model.mode_count)]


class TestCdreStep:
    def test_zero_terminal_kills_coupling(self):
        model = scalar_model(a=1.0, b=1.0, q=1.0, r=1.0)
        P, U, M, K, _ = cdre_step([np.zeros((1, 1))], model)
        assert U[0][0, 0] == pytest.approx(1.0)
        assert M[0][0, 0] == pytest.approx(0.0)
        assert P[0][0, 0] == pytest.approx(1.0)
        assert K[0][0, 0] == pytest.approx(0.0)

    def test_scalar_hand_evaluation(self):
        # a = b = q = r = 1, previous value 1:
        # ups = 1*1*1 + 1 = 2; m = 1; p = 1 + 1 - 1/2 = 1.5; gain = -1/2
        model = scalar_model(a=1.0, b=1.0, q=1.0, r=1.0)
        P, U, M, K, _ = cdre_step([np.ones((1, 1))], model)
        assert U[0][0, 0] == pytest.approx(2.0)
        assert M[0][0, 0] == pytest.approx(1.0)
        assert P[0][0, 0] == pytest.approx(1.5)
        assert K[0][0, 0] == pytest.approx(-0.5)

    def test_zero_weights_break_down(self):
        model = scalar_model(a=1.0, b=1.0, q=0.0, r=0.0)
        with pytest.raises(RiccatiBreakdown) as info:
            cdre_step([np.zeros((1, 1))], model, stage=4)
        assert info.value.stage == 4
        assert info.value.mode == 0
        assert info.value.eigenvalue == pytest.approx(0.0, abs=1e-15)

    def test_benchmark_input_terms_at_identity(self, bench):
        # mode 0: B'B + 1 = 2 + 1 = 3; mode 1: B'B + 1 = 5 + 1 = 6
        _, U, _, _, _ = cdre_step(identity_terminal(bench), bench)
        assert U[0][0, 0] == pytest.approx(3.0)
        assert U[1][0, 0] == pytest.approx(6.0)

    def test_result_symmetric(self, bench):
        P, _, _, _, _ = cdre_step(identity_terminal(bench), bench)
        for mat in P:
            assert np.array_equal(mat, mat.T)

    def test_wrong_count_rejected(self, bench):
        with pytest.raises(InvalidInput):
            cdre_step([np.eye(2)], bench)


class TestSolveFinite:
    def test_zero_horizon_is_single_step(self, bench):
        term = identity_terminal(bench)
        sol = solve_finite(bench, term, 0)
        P, U, M, K, _ = cdre_step(term, bench, stage=0)
        for i in range(2):
            assert np.allclose(sol.P[0][i], P[i])
            assert np.allclose(sol.K[0][i], K[i])
        assert sol.solvable

    def test_benchmark_long_horizon_solvable(self, bench):
        sol = solve_finite(bench, identity_terminal(bench), 20)
        assert sol.solvable
        assert all(eig > 0.0 for stage in sol.upsilon_min_eig for eig in stage)
        assert len(sol.K) == 21
        assert len(sol.P) == 22

    def test_semidefinite_input_weight_with_invertible_b(self):
        # With square invertible B and no input penalty the recursion stays
        # well defined: the input term inherits positivity from the averaged
        # cost-to-go, and the optimal controller deadbeats the state.
        model = MjlsModel(
            A=[[[1.3, 0.2], [0.4, 0.9]], [[0.7, -0.3], [0.2, 1.1]]],
            B=[np.eye(2), [[1.0, 0.5], [0.0, 1.0]]],
            Q=[np.eye(2), np.eye(2)],
            R=[np.zeros((2, 2)), np.zeros((2, 2))],
            transition=[[0.6, 0.4], [0.2, 0.8]],
            initial_distribution=[0.3, 0.7], x0=[1.0, -2.0])
        sol = solve_finite(model, identity_terminal(model), 6)
        assert sol.solvable
        assert all(eig > 0.0 for stage in sol.upsilon_min_eig for eig in stage)
        for k in range(7):
            for i in range(2):
                assert np.allclose(sol.P[k][i], np.eye(2), atol=1e-12)

    def test_breakdown_carries_stage_and_mode(self):
        model = scalar_model(a=1.0, b=1.0, q=0.0, r=0.0)
        with pytest.raises(RiccatiBreakdown) as info:
            solve_finite(model, [np.zeros((1, 1))], 3)
        assert info.value.stage == 3  # first backward stage
        assert info.value.mode == 0

    def test_non_raising_breakdown_mode(self):
        model = scalar_model(a=1.0, b=1.0, q=0.0, r=0.0)
        sol = solve_finite(model, [np.zeros((1, 1))], 3,
                           raise_on_breakdown=False)
        assert not sol.solvable
        assert sol.breakdown is not None
        with pytest.raises(InvalidState):
            sol.policy()
        with pytest.raises(InvalidState):
            optimal_cost_finite(sol, model)

    def test_invalid_terminal_rejected(self, bench):
        with pytest.raises(InvalidInput):
            solve_finite(bench, [np.eye(2), -np.eye(2)], 2)
        with pytest.raises(InvalidInput):
            solve_finite(bench, [np.eye(3), np.eye(3)], 2)

    def test_positive_semidefinite_iterates_with_zero_terminal(self):
        # Zero-terminal cost-to-go matrices stay PSD at every stage.
        rng = np.random.default_rng(21)
        for _ in range(100):
            model = random_model(rng)
            sol = solve_finite(model, zeros_terminal(model), 6)
            for stage in sol.P:
                for mat in stage:
                    scale = 1.0 + np.linalg.norm(mat, 2)
                    assert np.linalg.eigvalsh(mat)[0] >= -1e-10 * scale

    def test_positive_input_weight_never_breaks_down(self):
        # With positive definite R the recursion is always well defined.
        rng = np.random.default_rng(22)
        for _ in range(500):
            model = random_model(rng)
            sol = solve_finite(model, zeros_terminal(model), 5)
            assert sol.solvable

    def test_value_monotone_in_horizon(self, bench):
        # With zero terminal, lengthening the horizon can only raise the
        # cost-to-go: successive iterates from zero are PSD-ordered.
        rng = np.random.default_rng(23)
        models = [bench] + [random_model(rng) for _ in range(10)]
        for model in models:
            P = zeros_terminal(model)
            for _ in range(20):
                nxt, _, _, _, _ = cdre_step(P, model)
                for i in range(model.mode_count):
                    diff = nxt[i] - P[i]
                    scale = 1.0 + np.linalg.norm(nxt[i], 2)
                    assert np.linalg.eigvalsh(diff)[0] >= -1e-10 * scale
                P = nxt

    def test_single_mode_matches_classical_recursion(self):
        rng = np.random.default_rng(24)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 3))
            A = rng.uniform(-1.0, 1.0, (n, n))
            B = rng.uniform(-1.0, 1.0, (n, m))
            G = rng.uniform(-1.0, 1.0, (n, n))
            Q = G.T @ G
            H = rng.uniform(-1.0, 1.0, (m, m))
            R = H.T @ H + 0.3 * np.eye(m)
            model = MjlsModel(A=[A], B=[B], Q=[Q], R=[R], transition=[[1.0]],
                              initial_distribution=[1.0],
                              x0=rng.uniform(-1.0, 1.0, n))
            N = 8
            sol = solve_finite(model, [np.eye(n)], N)
            P_ref, K_ref = classical_finite_riccati(A, B, Q, R, np.eye(n), N)
            for k in range(N + 1):
                scale = 1.0 + np.linalg.norm(P_ref[k], "fro")
                assert np.linalg.norm(sol.P[k][0] - P_ref[k], "fro") \
                    <= 1e-12 * scale
                assert np.allclose(sol.K[k][0], K_ref[k], atol=1e-11)

    def test_gain_solves_its_linear_system(self, bench):
        sol = solve_finite(bench, identity_terminal(bench), 15)
        for k in range(16):
            for i in range(2):
                defect = sol.Upsilon[k][i] @ sol.K[k][i] + sol.M[k][i]
                scale = 1.0 + np.linalg.norm(sol.M[k][i])
                assert np.linalg.norm(defect) <= 1e-11 * scale


class TestOptimalCost:
    def test_zero_state(self):
        model = scalar_model(x0=0.0)
        sol = solve_finite(model, [np.eye(1)], 4)
        assert optimal_cost_finite(sol, model) == 0.0

    def test_identity_quadratic_form(self):
        # With A = 0 and Q = I the stage-0 value matrix is exactly the
        # identity, so the cost is the initial-mode-weighted form x0'x0 = 2.
        model = MjlsModel(
            A=[np.zeros((2, 2)), np.eye(2)],
            B=[np.ones((2, 1)), np.ones((2, 1))],
            Q=[np.eye(2), np.eye(2)],
            R=[[[1.0]], [[1.0]]],
            transition=[[1.0, 0.0], [0.0, 1.0]],
            initial_distribution=[1.0, 0.0], x0=[1.0, 1.0])
        sol = solve_finite(model, identity_terminal(model), 0)
        assert np.allclose(sol.P[0][0], np.eye(2))
        assert optimal_cost_finite(sol, model) == pytest.approx(2.0)


class TestSolveCare:
    def test_scalar_closed_form_root(self):
        # p = a^2 p + q - (abp)^2/(b^2 p + r) collapses to
        # p^2 - 0.25 p - 1 = 0 for a = 0.5, b = q = r = 1.
        root = (0.25 + math.sqrt(0.0625 + 4.0)) / 2.0
        sol = solve_care(scalar_model(a=0.5))
        assert sol.P[0][0, 0] == pytest.approx(root, abs=1e-8)
        assert sol.residual <= 1e-8
        assert sol.p_min_eig[0] > 0.0

    def test_uncontrollable_unstable_mode_diverges(self):
        with pytest.raises(NotStabilizable) as info:
            solve_care(scalar_model(a=2.0, b=0.0))
        assert info.value.reason == "diverged"

    def test_budget_exhaustion_reported_distinctly(self):
        # A marginally unstable uncontrollable mode grows only linearly, so
        # the divergence bound is never hit inside a small budget.
        with pytest.raises(NotStabilizable) as info:
            solve_care(scalar_model(a=1.0, b=0.0), max_iter=200)
        assert info.value.reason == "budget"

    def test_benchmark_fixed_point(self, bench):
        sol = solve_care(bench)
        assert all(eig > 0.0 for eig in sol.p_min_eig)
        assert sol.residual <= 1e-8
        assert care_residual(sol.P, bench) <= 1e-8

    def test_zero_state_weight_flags_observability(self):
        with pytest.raises(ObservabilityViolation):
            solve_care(scalar_model(a=0.5, q=0.0))

    def test_semidefinite_input_weight_rejected(self):
        with pytest.raises(PreconditionFailed):
            solve_care(scalar_model(r=0.0))

    def test_fixed_point_unique_across_initializations(self, bench):
        rng = np.random.default_rng(25)
        models = [bench]
        while len(models) < 8:
            model = random_model(rng, pd_state_weight=True,
                                 target_radius=float(rng.uniform(0.3, 0.9)))
            models.append(model)
        for model in models:
            from_zero = solve_care(model, tol=1e-12)
            from_identity = solve_care(
                model, tol=1e-12,
                initial=[np.eye(model.state_dim)] * model.mode_count)
            for i in range(model.mode_count):
                gap = np.linalg.norm(from_zero.P[i] - from_identity.P[i],
                                     "fro")
                assert gap <= 1e-8

    def test_gains_are_stationary_fixed_point_quantities(self, bench):
        sol = solve_care(bench)
        _, U, M, K, _ = cdre_step(sol.P, bench)
        for i in range(2):
            assert np.allclose(sol.Upsilon[i], U[i], atol=1e-12)
            assert np.allclose(sol.K[i], K[i], atol=1e-12)


class TestCareResidual:
    def test_zero_matrices_have_positive_residual(self):
        model = scalar_model(a=0.5)
        assert care_residual([np.zeros((1, 1))], model) > 0.1

    def test_perturbation_increases_residual(self, bench):
        sol = solve_care(bench)
        base = care_residual(sol.P, bench)
        bumped = [mat + 0.01 * np.eye(2) for mat in sol.P]
        assert care_residual(bumped, bench) > base

    def test_breakdown_propagates(self):
        model = scalar_model(a=1.0, b=1.0, q=0.0, r=0.0)
        with pytest.raises(RiccatiBreakdown):
            care_residual([np.zeros((1, 1))], model)


class TestRiccatiCsv:
    def test_schema_and_roundtrip_values(self, bench, tmp_path):
        sol = solve_finite(bench, identity_terminal(bench), 2)
        path = tmp_path / "riccati.csv"
        write_riccati_csv(sol, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,mode,row,col,P,gain_row,gain_col,K"
        # stages 0..3, 2 modes, 2x2 entries each
        assert len(lines) == 1 + 4 * 2 * 4
        first = lines[1].split(",")
        assert float(first[4]) == pytest.approx(sol.P[0][0][0, 0])
        assert float(first[7]) == pytest.approx(sol.K[0][0][0, 0])
        # terminal stage rows carry no gain entries
        terminal_rows = [l for l in lines[1:] if l.startswith("3,")]
        assert terminal_rows and all(r.endswith(",,,") for r in terminal_rows)
