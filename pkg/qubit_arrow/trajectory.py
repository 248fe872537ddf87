"""
Forward simulation, reconstruction and time reversal of measurement trajectories,
plus the arrow-of-time statistic Q.

Each simulation step is one measurement followed by one Rabi rotation (with an
optional dephasing in between for finite-efficiency observers). Q only collects
terms from the measurement sub-steps:

    Q_k = ln P(r_k | ρ_k) - ln P(-r_k | ρ_k')

where ρ_k' is the state right after the measurement. The unitary part is its
own reverse under Ω → -Ω and adds nothing.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .state import (
    QubitState,
    QubitValidationError,
    SimParams,
    arrow_increment_z,
    dephase_xyz,
    povm_update,
    povm_update_xyz,
    rabi_rotate,
    rabi_rotate_xyz,
    sample_readout_from_noise,
)


class IrreversibleTrajectoryError(ValueError):
    """Raised when a dephased (finite-efficiency) trajectory is asked to run backwards."""
    pass


class StepKind(Enum):
    """Sub-steps of one simulation step."""
    MEASURE = "measure"
    ROTATE = "rotate"


FORWARD_ORDER: Tuple[StepKind, StepKind] = (StepKind.MEASURE, StepKind.ROTATE)
BACKWARD_ORDER: Tuple[StepKind, StepKind] = (StepKind.ROTATE, StepKind.MEASURE)


# ---------- types ----------
@dataclass
class MeasurementRecord:
    """Time-ordered dimensionless readouts r_k, sampled every dt at the given strength."""

    values: np.ndarray
    dt: float
    strength: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise QubitValidationError("Measurement record contains non-finite values")
        if not (self.dt > 0 and self.strength > 0):
            raise QubitValidationError(
                f"Record needs dt > 0 and strength > 0 (got dt={self.dt}, strength={self.strength})"
            )

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def eps(self) -> float:
        """Dimensionless measurement strength per step, δt·strength."""
        return self.dt * self.strength

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def reversed_negated(self) -> "MeasurementRecord":
        """The time-reversed record r̃_k = -r_{n-1-k}."""
        return MeasurementRecord(-self.values[::-1], self.dt, self.strength)


@dataclass
class Trajectory:
    """
    States ρ_0..ρ_n, the record r_0..r_{n-1} and the per-step Q increments.

    `rabi_angle` is the rotation applied in every step and `step_order` the
    order of the measure/rotate sub-steps. `dephase_extra` > 0 marks a
    finite-efficiency reconstruction; `channels` tags unraveled steps.
    """

    states: np.ndarray
    record: MeasurementRecord
    q_increments: np.ndarray
    rabi_angle: float = 0.0
    step_order: Tuple[StepKind, StepKind] = FORWARD_ORDER
    dephase_extra: float = 0.0
    channels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        self.q_increments = np.asarray(self.q_increments, dtype=float).reshape(-1)
        n = len(self.record)
        if self.states.shape[0] != n + 1 or self.q_increments.size != n:
            raise QubitValidationError(
                f"Inconsistent trajectory: {self.states.shape[0]} states, "
                f"{n} readouts, {self.q_increments.size} increments"
            )

    @property
    def n_steps(self) -> int:
        return len(self.record)

    @property
    def q_total(self) -> float:
        return float(np.sum(self.q_increments))

    def state(self, k: int) -> QubitState:
        return QubitState.from_array(self.states[k])

    @property
    def initial(self) -> QubitState:
        return self.state(0)

    @property
    def final(self) -> QubitState:
        return self.state(-1)


@dataclass
class BatchResult:
    """Output of a batched propagation over N trajectories."""

    final: np.ndarray                      # (N, 3)
    q_at: np.ndarray                       # (N, n_checkpoints) exact Q at each checkpoint
    q_continuous_at: np.ndarray            # (N, n_checkpoints) continuous-limit Q
    states: Optional[np.ndarray] = None    # (N, n+1, 3)
    readouts: Optional[np.ndarray] = None  # (N, n)
    q_increments: Optional[np.ndarray] = None  # (N, n)
    checkpoints: Sequence[int] = field(default_factory=tuple)


# ---------- batched engine ----------
def draw_step_noise(rng: np.random.Generator, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """The per-trajectory noise block: n uniforms (branch choice), then n standard normals."""
    return rng.random(n_steps), rng.standard_normal(n_steps)


def continuous_weight(z_pre, z_post, convention: str = "midpoint"):
    """
    The z value multiplying r_k in the continuous-limit statistic.

    "midpoint" averages the pre- and post-measurement z and converges to the
    exact Q linearly in δt; "pre" uses ρ_k alone and keeps an O(T/τ) drift term.
    """
    if convention == "midpoint":
        return 0.5 * (z_pre + z_post)
    if convention == "pre":
        return z_pre
    raise ValueError(f"Unknown continuous-limit convention: {convention}")


def propagate_batch(
    initial: np.ndarray,
    n_steps: int,
    eps: float,
    angle: float,
    dt: float,
    dephase_rate: float = 0.0,
    readouts: Optional[np.ndarray] = None,
    uniforms: Optional[np.ndarray] = None,
    normals: Optional[np.ndarray] = None,
    keep_history: bool = True,
    checkpoints: Sequence[int] = (),
    convention: str = "midpoint",
) -> BatchResult:
    """
    Run measure → (dephase) → rotate steps for N trajectories at once.

    Readouts are either given (reconstruction, shape (N, n)) or sampled from
    pre-drawn noise blocks `uniforms`/`normals` (shape (N, n)).

    Args:
        initial: (N, 3) initial Bloch vectors
        n_steps: number of steps n
        eps: δt·strength of every measurement
        angle: Rabi angle per step
        dt: time step (used by the dephasing factor)
        dephase_rate: extra dephasing λ applied after each measurement
        keep_history: store all states, readouts and increments
        checkpoints: step counts at which the running Q is recorded
        convention: continuous-limit z convention (see continuous_weight)
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    n_traj = initial.shape[0]
    if readouts is None and (uniforms is None or normals is None):
        raise ValueError("propagate_batch needs either readouts or noise blocks")

    x = initial[:, 0].copy()
    y = initial[:, 1].copy()
    z = initial[:, 2].copy()

    states = hist_r = hist_q = None
    if keep_history:
        states = np.empty((n_traj, n_steps + 1, 3))
        states[:, 0, :] = initial
        hist_r = np.empty((n_traj, n_steps))
        hist_q = np.empty((n_traj, n_steps))

    checkpoints = tuple(int(c) for c in checkpoints)
    q_at = np.zeros((n_traj, len(checkpoints)))
    qc_at = np.zeros((n_traj, len(checkpoints)))
    q = np.zeros(n_traj)
    qc = np.zeros(n_traj)

    for k in range(n_steps):
        if readouts is not None:
            r = readouts[:, k]
        else:
            r = sample_readout_from_noise(z, uniforms[:, k], normals[:, k], eps)
        xm, ym, zm = povm_update_xyz(x, y, z, r * eps)
        inc = arrow_increment_z(z, zm, r, eps)
        q = q + inc
        qc = qc + 2.0 * eps * r * continuous_weight(z, zm, convention)
        if dephase_rate:
            xm, ym, zm = dephase_xyz(xm, ym, zm, dephase_rate, dt)
        x, y, z = rabi_rotate_xyz(xm, ym, zm, angle)

        if keep_history:
            states[:, k + 1, 0] = x
            states[:, k + 1, 1] = y
            states[:, k + 1, 2] = z
            hist_r[:, k] = r
            hist_q[:, k] = inc
        for j, steps in enumerate(checkpoints):
            if steps == k + 1:
                q_at[:, j] = q
                qc_at[:, j] = qc

    return BatchResult(
        final=np.stack([x, y, z], axis=1),
        q_at=q_at,
        q_continuous_at=qc_at,
        states=states,
        readouts=hist_r,
        q_increments=hist_q,
        checkpoints=checkpoints,
    )


# ---------- operations ----------
def generate_trajectory(
    params: SimParams,
    initial: QubitState,
    rng: np.random.Generator,
    dephase_extra: float = 0.0,
) -> Trajectory:
    """
    Simulate n = floor(T/δt) steps: sample r_k from ρ_k, measure, rotate by Ω·δt.

    With dephase_extra > 0 the same loop simulates a finite-efficiency observer
    whose own state is dephased after every measurement; records drawn that way
    have the statistics of an inefficient experiment.
    """
    if dephase_extra < 0:
        raise QubitValidationError(f"dephase_extra must be >= 0 (got {dephase_extra})")
    n = params.n_steps
    uniforms, normals = draw_step_noise(rng, n)
    eps = params.dt * params.measurement_rate
    batch = propagate_batch(
        initial.as_array()[None, :], n, eps, params.rabi_angle, params.dt,
        dephase_rate=dephase_extra, uniforms=uniforms[None, :], normals=normals[None, :],
    )
    record = MeasurementRecord(batch.readouts[0], params.dt, params.measurement_rate)
    return Trajectory(
        states=batch.states[0],
        record=record,
        q_increments=batch.q_increments[0],
        rabi_angle=params.rabi_angle,
        dephase_extra=dephase_extra,
    )


def check_record_dt(record: MeasurementRecord, params: SimParams):
    if not math.isclose(record.dt, params.dt, rel_tol=1e-9, abs_tol=0.0):
        raise QubitValidationError(
            f"Record dt ({record.dt:.6g} s) does not match params dt ({params.dt:.6g} s)"
        )


def reconstruct_trajectory(
    record: MeasurementRecord,
    params: SimParams,
    initial: QubitState,
    dephase_extra: float = 0.0,
) -> Trajectory:
    """
    Rebuild the state sequence an observer infers from a given record.

    Each step applies povm_update at the record's strength, then
    dephase(dephase_extra), then the Rabi rotation. dephase_extra = Γ - 1/(2τ)
    gives the finite-efficiency observer; 0 the unit-efficiency one.
    """
    check_record_dt(record, params)
    if dephase_extra < 0:
        raise QubitValidationError(f"dephase_extra must be >= 0 (got {dephase_extra})")
    n = len(record)
    batch = propagate_batch(
        initial.as_array()[None, :], n, record.eps, params.rabi_angle, params.dt,
        dephase_rate=dephase_extra, readouts=record.values[None, :],
    )
    return Trajectory(
        states=batch.states[0],
        record=record,
        q_increments=batch.q_increments[0],
        rabi_angle=params.rabi_angle,
        dephase_extra=dephase_extra,
    )


def reconstruct_batch(
    readouts: np.ndarray,
    params: SimParams,
    initial: QubitState,
    strength: Optional[float] = None,
    dephase_extra: float = 0.0,
    convention: str = "midpoint",
) -> BatchResult:
    """Reconstruct many records (rows of `readouts`) from a common initial state."""
    readouts = np.atleast_2d(np.asarray(readouts, dtype=float))
    strength = params.measurement_rate if strength is None else strength
    n_traj, n = readouts.shape
    initial_rows = np.repeat(initial.as_array()[None, :], n_traj, axis=0)
    return propagate_batch(
        initial_rows, n, params.dt * strength, params.rabi_angle, params.dt,
        dephase_rate=dephase_extra, readouts=readouts, checkpoints=(n,), convention=convention,
    )


def _measurement_brackets(traj: Trajectory, strength: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """z right before and right after every measurement sub-step."""
    eps = traj.record.dt * strength
    pre = traj.states[:-1]
    if traj.step_order[0] is StepKind.ROTATE:
        x, y, z = rabi_rotate_xyz(pre[:, 0], pre[:, 1], pre[:, 2], traj.rabi_angle)
    else:
        x, y, z = pre[:, 0], pre[:, 1], pre[:, 2]
    _, _, z_post = povm_update_xyz(x, y, z, traj.record.values * eps)
    return z, z_post, eps


def arrow_increment(pre_state: QubitState, post_state: QubitState, r: float,
                    strength: float, dt: float) -> float:
    """
    Q_k = ln P(r|ρ_pre) - ln P(-r|ρ_post) at identical strength and dt.

    post_state is expected to be povm_update(pre_state, r, strength, dt); this
    is not re-checked. The √(ε/2π) prefactors cancel.
    """
    if not math.isfinite(r):
        raise QubitValidationError(f"readout r must be finite (got {r})")
    if not (strength > 0 and dt > 0):
        raise QubitValidationError(f"strength and dt must be > 0 (got {strength}, {dt})")
    return float(arrow_increment_z(pre_state.z, post_state.z, r, dt * strength))


def arrow_statistic(traj: Trajectory, strength: float) -> float:
    """Q = Σ_k [ln P(r_k|ρ_k) - ln P(-r_k|ρ_k')] over the measurement sub-steps."""
    if traj.n_steps == 0:
        return 0.0
    z_pre, z_post, eps = _measurement_brackets(traj, strength)
    return float(np.sum(arrow_increment_z(z_pre, z_post, traj.record.values, eps)))


def arrow_statistic_continuous(traj: Trajectory, strength: float, convention: str = "midpoint") -> float:
    """Continuous-limit form Q ≈ 2·δt·strength·Σ r_k z_k."""
    if traj.n_steps == 0:
        return 0.0
    z_pre, z_post, eps = _measurement_brackets(traj, strength)
    weights = continuous_weight(z_pre, z_post, convention)
    return float(2.0 * eps * np.sum(traj.record.values * weights))


def reverse_trajectory(traj: Trajectory, params: SimParams) -> Trajectory:
    """
    Replay a unit-efficiency trajectory backwards from its final state.

    Every step is undone in reverse sub-step order with the negated readout and
    the negated Rabi angle. The result starts at ρ_n and ends at ρ_0; its
    increments are the backward-process Q_k, equal to minus the forward ones.
    """
    if traj.dephase_extra > 0:
        raise IrreversibleTrajectoryError(
            f"Trajectory was reconstructed with dephasing {traj.dephase_extra:.6g} 1/s "
            "and cannot be reversed"
        )
    if traj.channels is not None:
        raise IrreversibleTrajectoryError("Unraveled trajectories carry phase kicks and are not replayed backwards")
    check_record_dt(traj.record, params)

    backward_record = traj.record.reversed_negated()
    order = (traj.step_order[1], traj.step_order[0])
    angle = -traj.rabi_angle
    strength = traj.record.strength
    dt = traj.record.dt

    current = traj.final
    states = [current.as_array()]
    increments = []
    for r in backward_record.values:
        for kind in order:
            if kind is StepKind.MEASURE:
                post = povm_update(current, float(r), strength, dt)
                increments.append(arrow_increment(current, post, float(r), strength, dt))
                current = post
            else:
                current = rabi_rotate(current, angle)
        states.append(current.as_array())

    return Trajectory(
        states=np.array(states).reshape(-1, 3),
        record=backward_record,
        q_increments=np.array(increments, dtype=float),
        rabi_angle=angle,
        step_order=order,
    )
