import math

import numpy as np
import pytest

from oracle import DT, TAU
from qubit_arrow.state import QubitState, QubitValidationError, SimParams
from qubit_arrow.trajectory import (
    BACKWARD_ORDER,
    IrreversibleTrajectoryError,
    MeasurementRecord,
    Trajectory,
    arrow_increment,
    arrow_statistic,
    arrow_statistic_continuous,
    generate_trajectory,
    reconstruct_batch,
    reconstruct_trajectory,
    reverse_trajectory,
)

EPS = DT / TAU


class TestMeasurementRecord:
    def test_rejects_non_finite(self):
        with pytest.raises(QubitValidationError):
            MeasurementRecord(np.array([1.0, np.nan]), DT, 1 / TAU)

    def test_reversed_negated(self):
        rec = MeasurementRecord(np.array([1.0, 2.0, -3.0]), DT, 1 / TAU)
        assert rec.reversed_negated().values.tolist() == [3.0, -2.0, -1.0]
        assert rec.eps == pytest.approx(EPS)

    def test_trajectory_shape_checked(self):
        rec = MeasurementRecord(np.zeros(3), DT, 1 / TAU)
        with pytest.raises(QubitValidationError):
            Trajectory(states=np.zeros((3, 3)), record=rec, q_increments=np.zeros(3))


class TestGenerate:
    def test_deterministic(self, driven_params):
        a = generate_trajectory(driven_params, QubitState.preset("z+"), np.random.default_rng(1))
        b = generate_trajectory(driven_params, QubitState.preset("z+"), np.random.default_rng(1))
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.record.values, b.record.values)

    def test_step_count_and_bookkeeping(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(2))
        assert traj.n_steps == 20
        assert traj.states.shape == (21, 3)
        assert traj.q_total == pytest.approx(arrow_statistic(traj, 1 / TAU), abs=1e-12)

    def test_pure_states_stay_pure(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(3))
        assert np.allclose(np.linalg.norm(traj.states, axis=1), 1.0, atol=1e-9)

    def test_zero_duration(self):
        params = SimParams(dt=DT, tau=TAU, duration=0.0)
        traj = generate_trajectory(params, QubitState.preset("x+"), np.random.default_rng(0))
        assert traj.n_steps == 0
        assert arrow_statistic(traj, 1 / TAU) == 0.0
        assert np.array_equal(traj.final.as_array(), [1.0, 0.0, 0.0])


class TestClosedForms:
    def test_eigenstate_q_is_linear_in_record(self, qnd_params):
        rng = np.random.default_rng(4)
        for _ in range(20):
            traj = generate_trajectory(qnd_params, QubitState.preset("z+"), rng)
            expected = 2 * EPS * traj.record.values.sum()
            assert arrow_statistic(traj, 1 / TAU) == pytest.approx(expected, abs=1e-12)

    def test_x_plus_q_telescopes(self, qnd_params):
        rng = np.random.default_rng(5)
        for _ in range(20):
            traj = generate_trajectory(qnd_params, QubitState.preset("x+"), rng)
            expected = 2 * math.log(math.cosh(EPS * traj.record.values.sum()))
            assert traj.q_total == pytest.approx(expected, abs=1e-9)
            assert traj.q_total >= 0.0

    def test_batch_matches_closed_form(self, qnd_params):
        rng = np.random.default_rng(6)
        readouts = 1.0 + rng.standard_normal((50, 100)) / math.sqrt(EPS)
        q = reconstruct_batch(readouts, qnd_params, QubitState.preset("z+")).q_at[:, 0]
        assert np.allclose(q, 2 * EPS * readouts.sum(axis=1), atol=1e-12)

    def test_single_increment(self):
        pre = QubitState.preset("z+")
        assert arrow_increment(pre, pre, 2.0, 1 / TAU, DT) == pytest.approx(4 * EPS, abs=1e-14)
        with pytest.raises(QubitValidationError):
            arrow_increment(pre, pre, float("nan"), 1 / TAU, DT)


class TestReconstruct:
    def test_reproduces_generated_states(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(7))
        rebuilt = reconstruct_trajectory(traj.record, driven_params, QubitState.preset("x+"))
        assert np.allclose(rebuilt.states, traj.states, atol=1e-12)
        assert np.allclose(rebuilt.q_increments, traj.q_increments, atol=1e-12)

    def test_dephasing_lowers_purity(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(8))
        rebuilt = reconstruct_trajectory(traj.record, driven_params, QubitState.preset("x+"), dephase_extra=5e5)
        norms = np.linalg.norm(rebuilt.states, axis=1)
        assert np.all(norms[1:] < 1.0)

    def test_dt_mismatch(self, driven_params):
        rec = MeasurementRecord(np.zeros(5), 2 * DT, 1 / TAU)
        with pytest.raises(QubitValidationError, match="dt"):
            reconstruct_trajectory(rec, driven_params, QubitState.preset("x+"))


class TestReverse:
    def test_backward_increments_negate_forward(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("z+"), np.random.default_rng(9))
        back = reverse_trajectory(traj, driven_params)
        assert back.step_order == BACKWARD_ORDER
        assert np.allclose(back.q_increments, -traj.q_increments[::-1], atol=1e-9)
        assert np.allclose(back.final.as_array(), traj.initial.as_array(), atol=1e-9)
        assert arrow_statistic(back, 1 / TAU) == pytest.approx(-traj.q_total, abs=1e-9)

    def test_double_reverse_restores_trajectory(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(10))
        again = reverse_trajectory(reverse_trajectory(traj, driven_params), driven_params)
        assert np.allclose(again.states, traj.states, atol=1e-9)
        assert np.allclose(again.record.values, traj.record.values)

    def test_dephased_trajectory_is_irreversible(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(11))
        rebuilt = reconstruct_trajectory(traj.record, driven_params, QubitState.preset("x+"), dephase_extra=1e5)
        with pytest.raises(IrreversibleTrajectoryError):
            reverse_trajectory(rebuilt, driven_params)


class TestContinuousLimit:
    def test_eigenstate_conventions_agree(self, qnd_params):
        traj = generate_trajectory(qnd_params, QubitState.preset("z+"), np.random.default_rng(12))
        exact = arrow_statistic(traj, 1 / TAU)
        assert arrow_statistic_continuous(traj, 1 / TAU, "pre") == pytest.approx(exact, abs=1e-12)
        assert arrow_statistic_continuous(traj, 1 / TAU, "midpoint") == pytest.approx(exact, abs=1e-12)

    def test_zero_record(self, driven_params):
        rec = MeasurementRecord(np.zeros(20), DT, 1 / TAU)
        traj = reconstruct_trajectory(rec, driven_params, QubitState.preset("x+"))
        assert arrow_statistic_continuous(traj, 1 / TAU) == 0.0

    def test_midpoint_tracks_exact_q_better(self, driven_params):
        rng = np.random.default_rng(13)
        err_mid, err_pre = [], []
        for _ in range(200):
            traj = generate_trajectory(driven_params, QubitState.preset("x+"), rng)
            exact = arrow_statistic(traj, 1 / TAU)
            err_mid.append(abs(arrow_statistic_continuous(traj, 1 / TAU, "midpoint") - exact))
            err_pre.append(abs(arrow_statistic_continuous(traj, 1 / TAU, "pre") - exact))
        assert np.mean(err_mid) < np.mean(err_pre)

    def test_unknown_convention(self, driven_params):
        traj = generate_trajectory(driven_params, QubitState.preset("x+"), np.random.default_rng(14))
        with pytest.raises(ValueError):
            arrow_statistic_continuous(traj, 1 / TAU, "left")
