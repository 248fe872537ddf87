import math

import numpy as np
import pytest

from oracle import DT, RABI, TAU
from qubit_arrow.state import QubitState, QubitValidationError, SimParams
from qubit_arrow.trajectory import MeasurementRecord, generate_trajectory, reconstruct_trajectory
from qubit_arrow.unraveling import (
    ALICE,
    BOB,
    ROB,
    UnravelConfig,
    alice_arrow_from_ensemble,
    bob_step_xyz,
    channel_probabilities,
    channel_rates,
    charlie_arrow_from_ensemble,
    full_strength,
    rob_step_xyz,
    sample_bob_z,
    sample_rob_phi,
    unravel_record,
    unraveled_dephasing,
    unraveling_consistency,
)

ETA = 0.4
SCHEMES = ["segmented", "beamsplitter"]


def efficiency_params(basis, eta=ETA, rabi=RABI):
    return SimParams.for_efficiency(DT, TAU, eta, basis, rabi=rabi, duration=0.32e-6)


def alice_record(seed=0, eta=ETA, rabi=RABI):
    params = efficiency_params("compatible_z", eta=eta, rabi=rabi)
    traj = generate_trajectory(params, QubitState.preset("x+"), np.random.default_rng(seed),
                               dephase_extra=unraveled_dephasing(params))
    return traj.record


class TestConfig:
    def test_validation(self):
        with pytest.raises(QubitValidationError):
            UnravelConfig(eta=0.0)
        with pytest.raises(QubitValidationError):
            UnravelConfig(basis="x")
        with pytest.raises(QubitValidationError):
            UnravelConfig(n_samples=0)
        with pytest.raises(QubitValidationError, match="scheme"):
            UnravelConfig(scheme="continuous")

    def test_channel_probabilities(self):
        params = efficiency_params("compatible_z")
        assert channel_probabilities(params, UnravelConfig(basis="compatible_z")) == pytest.approx((ETA, 1 - ETA, 0.0))
        assert channel_probabilities(params, UnravelConfig(basis="incompatible_phi")) == pytest.approx(
            (ETA, 0.0, 1 - ETA))

    def test_mixed_split_follows_rates(self):
        params = SimParams(dt=DT, tau=TAU, gamma_z=0.5 / TAU, gamma_phi=1.0 / TAU)
        p = channel_probabilities(params, UnravelConfig(basis="mixed"))
        assert p == pytest.approx((0.25, 0.25, 0.5))
        assert channel_rates(params, "mixed") == pytest.approx((0.5 / TAU, 0.5 / TAU, 1.0 / TAU))
        assert full_strength(params) == pytest.approx(2 * (2.0 / TAU))
        assert unraveled_dephasing(params) == pytest.approx(1.5 / TAU)

    def test_mixed_needs_explicit_rates(self):
        with pytest.raises(QubitValidationError, match="gamma_z"):
            channel_rates(SimParams(dt=DT, tau=TAU, eta=0.5), "mixed")

    def test_rates_add_up_to_total_dephasing(self):
        params = efficiency_params("incompatible_phi")
        for basis in ("compatible_z", "incompatible_phi"):
            assert sum(channel_rates(params, basis)) == pytest.approx(params.total_dephasing)

    def test_full_strength(self):
        params = efficiency_params("compatible_z")
        assert full_strength(params) == pytest.approx(1 / (ETA * TAU))
        assert unraveled_dephasing(params) == pytest.approx((1 - ETA) / (2 * ETA * TAU))

    def test_eta_must_match_params(self):
        with pytest.raises(QubitValidationError, match="eta=0.5"):
            unravel_record(alice_record(0), efficiency_params("compatible_z"),
                           UnravelConfig(eta=0.5, n_samples=2), QubitState.preset("x+"))


class TestSamplers:
    def test_bob_keeps_pure_states_pure(self):
        params = efficiency_params("compatible_z")
        theta, out = sample_bob_z(QubitState.preset("x+"), params, np.random.default_rng(1))
        assert math.isfinite(theta)
        assert out.is_pure()
        again = sample_bob_z(QubitState.preset("x+"), params, np.random.default_rng(1))
        assert again == (theta, out)

    def test_bob_sampler_uses_the_ensemble_kernel(self):
        params = efficiency_params("compatible_z")
        state = QubitState(0.8, 0.0, 0.6)
        for strength in (None, 2 * params.gamma_z):
            theta, out = sample_bob_z(state, params, np.random.default_rng(4), strength=strength)
            rng = np.random.default_rng(4)
            eps = DT * (full_strength(params) if strength is None else strength)
            expected = bob_step_xyz(state.x, state.y, state.z, rng.random(), rng.standard_normal(), eps)
            assert theta == pytest.approx(float(expected[0]), abs=1e-12)
            assert out.as_array() == pytest.approx(np.array(expected[1:], dtype=float), abs=1e-12)

    def test_bob_readout_statistics(self):
        params = efficiency_params("compatible_z")
        eps = DT * full_strength(params)
        rng = np.random.default_rng(5)
        n = 100_000
        theta, _, _, _ = bob_step_xyz(np.zeros(n), np.zeros(n), np.ones(n), rng.random(n), rng.standard_normal(n), eps)
        assert np.var(theta) == pytest.approx(ETA * TAU / DT, rel=0.05)
        theta, _, _, _ = bob_step_xyz(np.full(n, 0.8), np.zeros(n), np.full(n, 0.6), rng.random(n),
                                      rng.standard_normal(n), eps)
        assert np.mean(theta) == pytest.approx(0.6, abs=0.06)

    def test_rob_only_rotates_the_phase(self):
        params = efficiency_params("incompatible_phi")
        state = QubitState(0.6, 0.0, 0.8)
        theta, out = sample_rob_phi(params, np.random.default_rng(2), state)
        assert out.z == state.z
        assert math.hypot(out.x, out.y) == pytest.approx(0.6, abs=1e-12)
        eps = DT * 2 * params.total_dephasing
        assert math.atan2(out.y, out.x) == pytest.approx(eps * theta, abs=1e-12)

    def test_rob_kicks_average_to_dephasing(self):
        params = efficiency_params("incompatible_phi")
        eps = DT * full_strength(params)
        n = 100_000
        g = np.random.default_rng(6).standard_normal(n)
        theta, x, y, z = rob_step_xyz(np.ones(n), np.zeros(n), np.zeros(n), g, eps)
        assert np.var(theta) == pytest.approx(ETA * TAU / DT, rel=0.05)
        assert np.mean(x) == pytest.approx(math.exp(-params.total_dephasing * DT), abs=1e-3)
        assert np.mean(y) == pytest.approx(0.0, abs=4e-3)
        assert np.all(z == 0.0)


class TestUnravelRecord:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_unit_efficiency_reproduces_reconstruction(self, scheme):
        record = alice_record(eta=1.0)
        params = efficiency_params("compatible_z", eta=1.0)
        cfg = UnravelConfig(eta=1.0, n_samples=5, scheme=scheme)
        ens = unravel_record(record, params, cfg, QubitState.preset("x+"))
        reference = reconstruct_trajectory(record, params, QubitState.preset("x+"))
        assert np.all(ens.channels == ALICE)
        for i in range(5):
            assert np.allclose(ens.bloch[i], reference.states, atol=1e-12)
        report = unraveling_consistency(ens, params, QubitState.preset("x+"))
        assert report.max_deviation == 0.0

    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("basis", ["compatible_z", "incompatible_phi"])
    def test_states_stay_pure(self, basis, scheme):
        ens = unravel_record(alice_record(1), efficiency_params(basis),
                             UnravelConfig(basis=basis, n_samples=100, scheme=scheme), QubitState.preset("x+"))
        assert np.allclose(np.linalg.norm(ens.bloch, axis=2), 1.0, atol=1e-9)

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_compatible_basis_keeps_y_zero(self, scheme):
        ens = unravel_record(alice_record(2), efficiency_params("compatible_z"),
                             UnravelConfig(basis="compatible_z", n_samples=100, scheme=scheme),
                             QubitState.preset("x+"))
        assert np.max(np.abs(ens.bloch[:, :, 1])) < 1e-9
        assert set(np.unique(ens.channels)) <= {ALICE, BOB}
        assert np.all(ens.theta_phi == 0.0)

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_incompatible_basis_populates_y(self, scheme):
        ens = unravel_record(alice_record(2), efficiency_params("incompatible_phi"),
                             UnravelConfig(basis="incompatible_phi", n_samples=100, scheme=scheme),
                             QubitState.preset("x+"))
        assert np.max(np.abs(ens.bloch[:, :, 1])) > 0.05
        assert set(np.unique(ens.channels)) <= {ALICE, ROB}
        assert np.all(ens.bob_q == 0.0)
        assert np.array_equal(charlie_arrow_from_ensemble(ens), alice_arrow_from_ensemble(ens))

    def test_alice_fraction_matches_efficiency(self):
        ens = unravel_record(alice_record(3), efficiency_params("compatible_z"),
                             UnravelConfig(n_samples=400), QubitState.preset("x+"))
        sigma = math.sqrt(ETA * (1 - ETA) / ens.channels.size)
        assert abs(ens.alice_fraction - ETA) < 5 * sigma

    def test_beamsplitter_applies_every_readout(self):
        record = alice_record(3)
        ens = unravel_record(record, efficiency_params("compatible_z"),
                             UnravelConfig(n_samples=50, scheme="beamsplitter"), QubitState.preset("x+"))
        assert ens.alice_fraction == 1.0
        assert ens.strength == pytest.approx(1 / TAU)
        assert np.array_equal(ens.readouts, np.broadcast_to(record.values, ens.readouts.shape))
        assert np.all(ens.theta_z != 0.0)

    def test_rob_steps_leave_z_unchanged(self):
        params = efficiency_params("incompatible_phi", rabi=0.0)
        ens = unravel_record(alice_record(4, rabi=0.0), params, UnravelConfig(basis="incompatible_phi", n_samples=50),
                             QubitState.preset("x+"))
        rob = ens.channels == ROB
        assert rob.any()
        assert np.array_equal(ens.bloch[:, 1:, 2][rob], ens.bloch[:, :-1, 2][rob])

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_deterministic_per_seed(self, scheme):
        record = alice_record(5)
        params = efficiency_params("compatible_z")
        a = unravel_record(record, params, UnravelConfig(n_samples=20, seed=9, scheme=scheme), QubitState.preset("x+"))
        b = unravel_record(record, params, UnravelConfig(n_samples=20, seed=9, scheme=scheme), QubitState.preset("x+"))
        c = unravel_record(record, params, UnravelConfig(n_samples=20, seed=10, scheme=scheme),
                           QubitState.preset("x+"))
        assert np.array_equal(a.bloch, b.bloch)
        assert not np.array_equal(a.bloch, c.bloch)

    def test_trajectory_view(self):
        ens = unravel_record(alice_record(6), efficiency_params("compatible_z"), UnravelConfig(n_samples=3),
                             QubitState.preset("x+"))
        traj = ens.trajectory(1)
        assert traj.channels is not None and len(traj.channels) == traj.n_steps
        assert traj.q_total == pytest.approx(charlie_arrow_from_ensemble(ens)[1])
        assert len(ens.trajectories) == 3

    def test_needs_pure_initial_state(self):
        with pytest.raises(QubitValidationError):
            unravel_record(alice_record(7), efficiency_params("compatible_z"), UnravelConfig(n_samples=2),
                           QubitState(0.5, 0.0, 0.0))

    def test_dt_mismatch(self):
        record = MeasurementRecord(np.zeros(10), 2 * DT, 1 / TAU)
        with pytest.raises(QubitValidationError, match="dt"):
            unravel_record(record, efficiency_params("compatible_z"), UnravelConfig(n_samples=2),
                           QubitState.preset("x+"))


class TestArrows:
    def test_eigenstate_alice_arrow(self):
        params = efficiency_params("compatible_z", rabi=0.0)
        rng = np.random.default_rng(8)
        record = MeasurementRecord(1.0 + rng.standard_normal(20) / math.sqrt(DT / TAU), DT, 1 / TAU)
        ens = unravel_record(record, params, UnravelConfig(n_samples=30), QubitState.preset("z+"))
        eps = DT * full_strength(params)
        is_alice = ens.channels == ALICE
        expected = 2 * eps * np.where(is_alice, record.values[None, :], 0.0).sum(axis=1)
        assert np.allclose(alice_arrow_from_ensemble(ens), expected, atol=1e-12)
        assert np.allclose(alice_arrow_from_ensemble(ens, form="continuous"), expected, atol=1e-12)

    def test_eigenstate_alice_arrow_beamsplitter(self):
        params = efficiency_params("compatible_z", rabi=0.0)
        rng = np.random.default_rng(8)
        record = MeasurementRecord(1.0 + rng.standard_normal(20) / math.sqrt(DT / TAU), DT, 1 / TAU)
        ens = unravel_record(record, params, UnravelConfig(n_samples=30, scheme="beamsplitter"),
                             QubitState.preset("z+"))
        expected = 2 * (DT / TAU) * record.values.sum()
        assert np.allclose(alice_arrow_from_ensemble(ens), expected, atol=1e-12)
        theta_sum = ens.theta_z.sum(axis=1)
        assert np.allclose(charlie_arrow_from_ensemble(ens), expected + 4 * DT * params.gamma_z * theta_sum,
                           atol=1e-12)

    def test_unknown_form(self):
        ens = unravel_record(alice_record(9), efficiency_params("compatible_z"), UnravelConfig(n_samples=2),
                             QubitState.preset("x+"))
        with pytest.raises(ValueError):
            alice_arrow_from_ensemble(ens, form="approximate")


class TestConsistency:
    def test_weights_are_normalised(self):
        ens = unravel_record(alice_record(10), efficiency_params("compatible_z"), UnravelConfig(n_samples=200),
                             QubitState.preset("x+"))
        assert ens.weights().sum() == pytest.approx(1.0)
        assert 1.0 <= ens.effective_sample_size() <= 200.0

    def test_report_shapes(self):
        params = efficiency_params("incompatible_phi")
        cfg = UnravelConfig(basis="incompatible_phi", n_samples=200)
        ens = unravel_record(alice_record(11), params, cfg, QubitState.preset("x+"))
        for weighted in (True, False):
            report = unraveling_consistency(ens, params, QubitState.preset("x+"), weighted=weighted)
            assert report.mean.shape == (ens.n_steps + 1, 3)
            assert report.reconstruction.shape == report.mean.shape
            assert np.all(report.deviation >= 0)
            assert report.weighted is weighted

    @pytest.mark.parametrize("basis", ["compatible_z", "incompatible_phi"])
    def test_beamsplitter_mean_follows_dephased_reconstruction(self, basis):
        params = efficiency_params(basis)
        initial = QubitState.preset("x+")
        ens = unravel_record(alice_record(12), params,
                             UnravelConfig(basis=basis, n_samples=1000, seed=3, scheme="beamsplitter"), initial)
        report = unraveling_consistency(ens, params, initial)
        assert report.effective_samples > 50
        # 20 steps × 3 components, strongly correlated along the record
        assert report.max_deviation < 4.0
        assert np.max(np.abs(report.mean - report.reconstruction)) < 0.1
