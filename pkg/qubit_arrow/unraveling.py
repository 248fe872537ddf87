"""
Unraveling of a finite-efficiency record into pure-state trajectories.

Two beamsplitter schemes split the dephasing budget Γ = 1/(2τ) + γ_z + γ_φ
between the monitored observer (Alice) and the unmonitored ones:

- "segmented": in every step exactly one channel fires at the full strength
  2Γ, Alice with probability 1/(2τΓ) = η. Alice's r_k updates the state, Bob
  draws a z readout ϑ_z from it, Rob draws ϑ_φ ~ N(0, 1/(2Γδt)) and kicks the
  phase by 2Γδt·ϑ_φ.
- "beamsplitter": every step applies Alice's r_k at her own strength 1/τ,
  then Bob's ϑ_z at 2γ_z drawn from the updated state, then Rob's kick at
  2γ_φ. Samples carry the likelihood Π_k P(r_k|ρ_k) of Alice's record, and
  the weighted ensemble mean is the dephased reconstruction exactly.

A Rabi rotation follows every step. Each sample draws its channel choices and
noise from its own stream keyed by (record_index, sample_index).
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .ensemble import stream_for
from .state import (
    ArrayLike,
    QubitState,
    QubitValidationError,
    SimParams,
    arrow_increment_z,
    log_readout_density_z,
    phase_kick_xyz,
    povm_update_xyz,
    rabi_rotate_xyz,
    sample_readout_from_noise,
)
from .trajectory import (
    MeasurementRecord,
    Trajectory,
    check_record_dt,
    continuous_weight,
    reconstruct_trajectory,
)

BASES = ("compatible_z", "incompatible_phi", "mixed")
SCHEMES = ("segmented", "beamsplitter")

ALICE, BOB, ROB = "a", "b", "r"


# ---------- types ----------
@dataclass(frozen=True)
class UnravelConfig:
    """
    Attributes:
        eta: efficiency η of Alice's record; must match params.efficiency
             (ignored for basis="mixed", which takes its split from
             SimParams.gamma_z / gamma_phi)
        basis: compatible_z (Bob), incompatible_phi (Rob) or mixed (both)
        n_samples: number of unraveled trajectories per record
        seed: base seed of the per-sample streams
        scheme: segmented (one channel per step at 2Γ) or beamsplitter
                (all channels every step at their own rates)
    """

    eta: float = 0.4
    basis: str = "compatible_z"
    n_samples: int = 1000
    seed: int = 0
    scheme: str = "segmented"

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise QubitValidationError(f"eta must lie in (0, 1] (got {self.eta})")
        if self.basis not in BASES:
            raise QubitValidationError(f"basis must be one of {', '.join(BASES)} (got '{self.basis}')")
        if self.n_samples < 1:
            raise QubitValidationError(f"n_samples must be >= 1 (got {self.n_samples})")
        if self.scheme not in SCHEMES:
            raise QubitValidationError(f"scheme must be one of {', '.join(SCHEMES)} (got '{self.scheme}')")


def channel_rates(params: SimParams, basis: str) -> Tuple[float, float, float]:
    """
    Rates (1/2τ, γ_z, γ_φ) of Alice, Bob and Rob; they add up to params.total_dephasing.

    The limiting bases route the whole missing rate Γ - 1/(2τ) to one channel;
    "mixed" takes the explicit split from params.
    """
    alice = 0.5 / params.tau
    missing = max(0.0, params.total_dephasing - alice)
    if basis == "compatible_z":
        return alice, missing, 0.0
    if basis == "incompatible_phi":
        return alice, 0.0, missing
    if basis != "mixed":
        raise QubitValidationError(f"basis must be one of {', '.join(BASES)} (got '{basis}')")
    if missing > 0 and params.gamma_z == 0.0 and params.gamma_phi == 0.0:
        raise QubitValidationError("basis 'mixed' needs explicit gamma_z / gamma_phi rates")
    return alice, params.gamma_z, params.gamma_phi


def channel_probabilities(params: SimParams, cfg: UnravelConfig) -> Tuple[float, float, float]:
    """Per-step probabilities of the (Alice, Bob, Rob) channels in the segmented scheme."""
    rates = np.array(channel_rates(params, cfg.basis))
    return tuple(float(v) for v in rates / rates.sum())


def full_strength(params: SimParams) -> float:
    """2Γ, the strength of every segmented step and of the synthetic readouts."""
    return 2.0 * params.total_dephasing


def unraveled_dephasing(params: SimParams) -> float:
    """Γ - 1/(2τ): the extra dephasing of the finite-efficiency reconstruction."""
    return max(0.0, params.total_dephasing - 0.5 / params.tau)


def check_efficiency(params: SimParams, cfg: UnravelConfig):
    if cfg.basis == "mixed":
        return
    if not math.isclose(params.efficiency, cfg.eta, rel_tol=1e-9, abs_tol=1e-12):
        raise QubitValidationError(
            f"UnravelConfig eta={cfg.eta:g} does not match the efficiency "
            f"{params.efficiency:.6g} implied by the simulation parameters"
        )


@dataclass
class UnravelEnsemble:
    """
    n_samples pure trajectories unraveled from one Alice record.

    Per-sample arrays have shape (n_samples, n) or (n_samples, n+1, 3):
    `bloch` the states, `readouts` the value of the firing channel (r_k, ϑ_z
    or ϑ_φ; always r_k in the beamsplitter scheme), `theta_z` / `theta_phi`
    the synthetic readouts (zero where not drawn), `channels` the firing
    channel ('a', 'b' or 'r'; 'a' everywhere in the beamsplitter scheme),
    `alice_q` and `bob_q` the exact Q increments of Alice's and Bob's
    measurements. `strength` is the strength Alice's readouts are applied at.

    `log_weights` is the log-likelihood of Alice's record along each sample:
    ln Π_k P(r_k|ρ_k) at strength 1/τ in the beamsplitter scheme, and
    ln Π_alice P(r_k|ρ)/N(r_k; 0, 1/(2Γδt)) in the segmented one.
    """

    alice_record: MeasurementRecord
    strength: float
    rabi_angle: float
    bloch: np.ndarray
    readouts: np.ndarray
    channels: np.ndarray
    alice_q: np.ndarray
    bob_q: np.ndarray
    log_weights: np.ndarray
    theta_z: Optional[np.ndarray] = None
    theta_phi: Optional[np.ndarray] = None
    basis: str = "compatible_z"
    scheme: str = "segmented"

    @property
    def n_samples(self) -> int:
        return int(self.bloch.shape[0])

    @property
    def n_steps(self) -> int:
        return len(self.alice_record)

    @property
    def channel_masks(self) -> np.ndarray:
        return self.channels

    def trajectory(self, i: int) -> Trajectory:
        record = MeasurementRecord(self.readouts[i], self.alice_record.dt, self.strength)
        return Trajectory(
            states=self.bloch[i],
            record=record,
            q_increments=self.alice_q[i] + self.bob_q[i],
            rabi_angle=self.rabi_angle,
            channels=self.channels[i],
        )

    @property
    def trajectories(self) -> List[Trajectory]:
        return [self.trajectory(i) for i in range(self.n_samples)]

    @property
    def alice_fraction(self) -> float:
        if self.channels.size == 0:
            return float("nan")
        return float(np.mean(self.channels == ALICE))

    def weights(self) -> np.ndarray:
        """Normalised likelihood weights of the samples."""
        shifted = self.log_weights - np.max(self.log_weights)
        w = np.exp(shifted)
        return w / w.sum()

    def effective_sample_size(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w * w))

    def mean_bloch(self, weighted: bool = False) -> np.ndarray:
        """(n+1, 3) ensemble mean Bloch vector per step."""
        if weighted:
            return np.einsum("i,ijk->jk", self.weights(), self.bloch)
        return self.bloch.mean(axis=0)

    def stderr_bloch(self, weighted: bool = False) -> np.ndarray:
        """Standard error of mean_bloch; delta-method form for the weighted mean."""
        if weighted:
            w = self.weights()
            centred = self.bloch - self.mean_bloch(weighted=True)[None, :, :]
            return np.sqrt(np.einsum("i,ijk->jk", w * w, centred ** 2))
        if self.n_samples < 2:
            return np.zeros(self.bloch.shape[1:])
        return self.bloch.std(axis=0, ddof=1) / math.sqrt(self.n_samples)


# ---------- single-step kernels ----------
def bob_step_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, u: ArrayLike, g: ArrayLike, eps: float):
    """Bob's ϑ_z drawn from the state (one uniform, one normal), then its update. Returns (ϑ_z, x, y, z)."""
    theta = sample_readout_from_noise(z, u, g, eps)
    xm, ym, zm = povm_update_xyz(x, y, z, theta * eps)
    return theta, xm, ym, zm


def rob_step_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, g: ArrayLike, eps: float):
    """Rob's ϑ_φ = g/√ε and the phase kick by ε·ϑ_φ. Returns (ϑ_φ, x, y, z)."""
    theta = np.asarray(g) / math.sqrt(eps)
    xk, yk, zk = phase_kick_xyz(x, y, z, eps * theta)
    return theta, xk, yk, zk


def _strength_or_default(params: SimParams, strength: Optional[float]) -> float:
    strength = full_strength(params) if strength is None else strength
    if not (math.isfinite(strength) and strength > 0):
        raise QubitValidationError(f"strength must be > 0 (got {strength})")
    return strength


def sample_bob_z(state: QubitState, params: SimParams, rng: np.random.Generator,
                 strength: Optional[float] = None) -> Tuple[float, QubitState]:
    """
    Bob's compatible z readout: ϑ_z drawn from the state, then the POVM update.

    The strength defaults to 2Γ (segmented steps); the beamsplitter scheme
    passes 2γ_z. Consumes one uniform, then one standard normal.

    Returns (ϑ_z, updated state).
    """
    eps = params.dt * _strength_or_default(params, strength)
    u = rng.random()
    g = rng.standard_normal()
    theta, x, y, z = bob_step_xyz(state.x, state.y, state.z, u, g, eps)
    return float(theta), QubitState(float(x), float(y), float(z))


def sample_rob_phi(params: SimParams, rng: np.random.Generator, state: QubitState,
                   strength: Optional[float] = None) -> Tuple[float, QubitState]:
    """
    Rob's incompatible φ readout: ϑ_φ ~ N(0, 1/(strength·δt)) and a z-rotation by strength·δt·ϑ_φ.

    The strength defaults to 2Γ; the beamsplitter scheme passes 2γ_φ.

    Returns (ϑ_φ, kicked state).
    """
    eps = params.dt * _strength_or_default(params, strength)
    theta, x, y, z = rob_step_xyz(state.x, state.y, state.z, rng.standard_normal(), eps)
    return float(theta), QubitState(float(x), float(y), float(z))


# ---------- ensemble ----------
def _gaussian_noise_log_density(r: np.ndarray, eps: float) -> np.ndarray:
    return 0.5 * np.log(eps / (2.0 * np.pi)) - 0.5 * eps * r * r


def _draw_sample_noise(seed: int, record_index: int, n_samples: int, n_steps: int):
    """Per sample: channel uniforms, branch uniforms, Bob normals, then Rob normals."""
    blocks = np.empty((4, n_samples, n_steps))
    for i in range(n_samples):
        rng = stream_for(seed, record_index, i)
        blocks[0, i] = rng.random(n_steps)
        blocks[1, i] = rng.random(n_steps)
        blocks[2, i] = rng.standard_normal(n_steps)
        blocks[3, i] = rng.standard_normal(n_steps)
    return blocks


class _Arrays:
    """Per-sample histories filled step by step."""

    def __init__(self, n_samples: int, n: int, initial: QubitState):
        self.bloch = np.empty((n_samples, n + 1, 3))
        self.bloch[:, 0, :] = initial.as_array()
        self.readouts = np.empty((n_samples, n))
        self.theta_z = np.zeros((n_samples, n))
        self.theta_phi = np.zeros((n_samples, n))
        self.channels = np.full((n_samples, n), ALICE, dtype="<U1")
        self.alice_q = np.zeros((n_samples, n))
        self.bob_q = np.zeros((n_samples, n))
        self.log_w = np.zeros(n_samples)

    def store(self, k: int, x, y, z):
        self.bloch[:, k + 1, 0] = x
        self.bloch[:, k + 1, 1] = y
        self.bloch[:, k + 1, 2] = z


def _segmented_steps(record: MeasurementRecord, params: SimParams, cfg: UnravelConfig,
                     noise: np.ndarray, out: _Arrays) -> float:
    strength = full_strength(params)
    eps = params.dt * strength
    p_alice, p_bob, _ = channel_probabilities(params, cfg)
    chan_u, branch_u, normals, _ = noise
    n_samples = chan_u.shape[0]
    x, y, z = (out.bloch[:, 0, j].copy() for j in range(3))
    for k in range(len(record)):
        is_alice = chan_u[:, k] < p_alice
        is_bob = ~is_alice & (chan_u[:, k] < p_alice + p_bob)
        is_rob = ~is_alice & ~is_bob

        r = np.full(n_samples, record.values[k])
        xa, ya, za = povm_update_xyz(x, y, z, r * eps)
        theta_z, xb, yb, zb = bob_step_xyz(x, y, z, branch_u[:, k], normals[:, k], eps)
        theta_phi, xr, yr, zr = rob_step_xyz(x, y, z, normals[:, k], eps)

        out.alice_q[:, k] = np.where(is_alice, arrow_increment_z(z, za, r, eps), 0.0)
        out.bob_q[:, k] = np.where(is_bob, arrow_increment_z(z, zb, theta_z, eps), 0.0)
        out.log_w += np.where(
            is_alice,
            log_readout_density_z(z, r, eps) - _gaussian_noise_log_density(r, eps),
            0.0,
        )
        choice = [is_alice, is_bob, is_rob]
        x = np.select(choice, [xa, xb, xr])
        y = np.select(choice, [ya, yb, yr])
        z = np.select(choice, [za, zb, zr])

        x, y, z = rabi_rotate_xyz(x, y, z, params.rabi_angle)
        out.store(k, x, y, z)
        out.readouts[:, k] = np.select(choice, [r, theta_z, theta_phi])
        out.theta_z[:, k] = np.where(is_bob, theta_z, 0.0)
        out.theta_phi[:, k] = np.where(is_rob, theta_phi, 0.0)
        out.channels[is_bob, k] = BOB
        out.channels[is_rob, k] = ROB
    return strength


def _beamsplitter_steps(record: MeasurementRecord, params: SimParams, cfg: UnravelConfig,
                        noise: np.ndarray, out: _Arrays) -> float:
    alice_rate, bob_rate, rob_rate = channel_rates(params, cfg.basis)
    strength = 2.0 * alice_rate
    eps_a = params.dt * strength
    eps_b = 2.0 * params.dt * bob_rate
    eps_r = 2.0 * params.dt * rob_rate
    _, branch_u, normals_z, normals_phi = noise
    n_samples = branch_u.shape[0]
    x, y, z = (out.bloch[:, 0, j].copy() for j in range(3))
    for k in range(len(record)):
        r = np.full(n_samples, record.values[k])
        out.log_w += log_readout_density_z(z, r, eps_a)
        xa, ya, za = povm_update_xyz(x, y, z, r * eps_a)
        out.alice_q[:, k] = arrow_increment_z(z, za, r, eps_a)
        x, y, z = xa, ya, za
        if eps_b > 0:
            theta_z, xb, yb, zb = bob_step_xyz(x, y, z, branch_u[:, k], normals_z[:, k], eps_b)
            out.bob_q[:, k] = arrow_increment_z(z, zb, theta_z, eps_b)
            out.theta_z[:, k] = theta_z
            x, y, z = xb, yb, zb
        if eps_r > 0:
            theta_phi, x, y, z = rob_step_xyz(x, y, z, normals_phi[:, k], eps_r)
            out.theta_phi[:, k] = theta_phi

        x, y, z = rabi_rotate_xyz(x, y, z, params.rabi_angle)
        out.store(k, x, y, z)
        out.readouts[:, k] = r
    return strength


def unravel_record(
    record: MeasurementRecord,
    params: SimParams,
    cfg: UnravelConfig,
    initial: QubitState,
    record_index: int = 0,
) -> UnravelEnsemble:
    """
    Build cfg.n_samples pure trajectories consistent with Alice's record.

    Segmented: every step picks one channel (Alice w.p. η, otherwise Bob or
    Rob per cfg.basis) and applies it at strength 2Γ. Beamsplitter: every
    step applies Alice at 1/τ, Bob at 2γ_z and Rob at 2γ_φ. Either way the
    Rabi rotation Ω·δt follows. All strengths come from params.
    """
    check_record_dt(record, params)
    check_efficiency(params, cfg)
    if not initial.is_pure():
        raise QubitValidationError(
            f"Unraveling needs a pure initial state (|r| = {initial.norm:.12g})"
        )
    n = len(record)
    noise = _draw_sample_noise(cfg.seed, record_index, cfg.n_samples, n)
    out = _Arrays(cfg.n_samples, n, initial)
    if cfg.scheme == "beamsplitter":
        strength = _beamsplitter_steps(record, params, cfg, noise, out)
    else:
        strength = _segmented_steps(record, params, cfg, noise, out)

    return UnravelEnsemble(
        alice_record=record,
        strength=strength,
        rabi_angle=params.rabi_angle,
        bloch=out.bloch,
        readouts=out.readouts,
        channels=out.channels,
        alice_q=out.alice_q,
        bob_q=out.bob_q,
        log_weights=out.log_w,
        theta_z=out.theta_z,
        theta_phi=out.theta_phi,
        basis=cfg.basis,
        scheme=cfg.scheme,
    )


# ---------- arrows of time ----------
def alice_arrow_from_ensemble(ensemble: UnravelEnsemble, params: Optional[SimParams] = None,
                              form: str = "exact", convention: str = "midpoint") -> np.ndarray:
    """
    Alice's Q per unraveled trajectory, summed over her own steps only.

    form="exact" sums the discrete increments (at ensemble.strength) on
    Charlie's states; form="continuous" gives 2·δt·strength·Σ_alice r_k z_k
    with z_k picked by `convention` ("midpoint" or "pre").
    """
    if params is not None:
        check_record_dt(ensemble.alice_record, params)
    if form == "exact":
        return ensemble.alice_q.sum(axis=1)
    if form != "continuous":
        raise ValueError(f"Unknown arrow form '{form}' (use exact or continuous)")
    if ensemble.n_steps == 0:
        return np.zeros(ensemble.n_samples)
    eps = ensemble.alice_record.dt * ensemble.strength
    is_alice = ensemble.channels == ALICE
    r = ensemble.readouts
    z_pre = ensemble.bloch[:, :-1, 2]
    _, _, z_post = povm_update_xyz(ensemble.bloch[:, :-1, 0], ensemble.bloch[:, :-1, 1], z_pre, r * eps)
    weights = continuous_weight(z_pre, z_post, convention)
    return 2.0 * eps * np.sum(np.where(is_alice, r * weights, 0.0), axis=1)


def charlie_arrow_from_ensemble(ensemble: UnravelEnsemble) -> np.ndarray:
    """Charlie's Q: Alice's plus Bob's exact terms. Rob's phase kicks add nothing."""
    return ensemble.alice_q.sum(axis=1) + ensemble.bob_q.sum(axis=1)


# ---------- consistency ----------
@dataclass
class ConsistencyReport:
    """Per-step comparison of the ensemble mean with the dephased reconstruction."""

    mean: np.ndarray
    stderr: np.ndarray
    reconstruction: np.ndarray
    deviation: np.ndarray
    weighted: bool
    effective_samples: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation)) if self.deviation.size else 0.0


def _deviation_in_stderr(diff: np.ndarray, stderr: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    out = np.zeros_like(diff)
    resolved = stderr > floor
    out[resolved] = diff[resolved] / stderr[resolved]
    # a collapsed ensemble must reproduce the reconstruction itself
    out[~resolved & (diff > 1e-9)] = np.inf
    return out


def unraveling_consistency(
    ensemble: UnravelEnsemble,
    params: SimParams,
    initial: QubitState,
    weighted: bool = True,
) -> ConsistencyReport:
    """
    Compare the ensemble mean Bloch vector with reconstruct_trajectory at
    dephase_extra = Γ - 1/(2τ), step by step, in standard-error units.

    With weighted=True each sample counts with the likelihood of Alice's
    record along it. The weighted beamsplitter mean matches the reconstruction
    up to Monte Carlo error; the segmented mean drifts by about
    -z(1-z²)(1/η - 1)δt/τ per step and is reported, not corrected.
    """
    reference = reconstruct_trajectory(
        MeasurementRecord(ensemble.alice_record.values, ensemble.alice_record.dt, params.measurement_rate),
        params,
        initial,
        dephase_extra=unraveled_dephasing(params),
    )
    mean = ensemble.mean_bloch(weighted=weighted)
    stderr = ensemble.stderr_bloch(weighted=weighted)
    diff = np.abs(mean - reference.states)
    return ConsistencyReport(
        mean=mean,
        stderr=stderr,
        reconstruction=reference.states,
        deviation=_deviation_in_stderr(diff, stderr),
        weighted=weighted,
        effective_samples=ensemble.effective_sample_size() if weighted else float(ensemble.n_samples),
    )
