"""
Qubit state representation and the elementary update maps.

States are Bloch vectors (x, y, z) = (<σx>, <σy>, <σz>). Every map comes in
two flavours:

- a QubitState-level operation (povm_update, rabi_rotate, ...) that validates
  its inputs and returns a new QubitState
- an array kernel (povm_update_xyz, rabi_rotate_xyz, ...) working on numpy
  arrays of Bloch components, used by the batched ensemble engines

Both flavours share the same arithmetic, so a single trajectory and a batched
one agree to floating-point rounding.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

PHYSICALITY_TOL = 1e-9

ArrayLike = Union[float, np.ndarray]


class QubitValidationError(ValueError):
    """Raised for unphysical states, non-finite readouts or invalid parameters."""
    pass


# ---------- types ----------
@dataclass(frozen=True)
class QubitState:
    """Bloch-vector representation of a single-qubit density operator."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise QubitValidationError(f"Bloch component {name} is not finite: {value}")
            if abs(value) > 1.0 + PHYSICALITY_TOL:
                raise QubitValidationError(f"Bloch component {name}={value} outside [-1, 1]")
        if self.norm_squared > 1.0 + PHYSICALITY_TOL:
            raise QubitValidationError(
                f"Unphysical state: |r|^2 = {self.norm_squared:.12g} exceeds 1"
            )

    @property
    def norm_squared(self) -> float:
        return self.x * self.x + self.y * self.y + self.z * self.z

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_squared)

    @property
    def purity(self) -> float:
        """tr(ρ²) = (1 + |r|²) / 2."""
        return 0.5 * (1.0 + self.norm_squared)

    def is_pure(self, tol: float = PHYSICALITY_TOL) -> bool:
        return abs(self.norm - 1.0) <= tol

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, values) -> "QubitState":
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)

    @classmethod
    def preset(cls, name: str) -> "QubitState":
        """Named initial states: z+, z-, x+, x-, y+, y-, mixed."""
        presets = {
            "z+": (0.0, 0.0, 1.0),
            "z-": (0.0, 0.0, -1.0),
            "x+": (1.0, 0.0, 0.0),
            "x-": (-1.0, 0.0, 0.0),
            "y+": (0.0, 1.0, 0.0),
            "y-": (0.0, -1.0, 0.0),
            "mixed": (0.0, 0.0, 0.0),
        }
        if name not in presets:
            raise QubitValidationError(
                f"Unknown state preset '{name}' (use one of: {', '.join(presets)})"
            )
        return cls(*presets[name])

    def density_matrix(self) -> np.ndarray:
        """ρ = (1 + xσx + yσy + zσz) / 2 as a complex 2×2 array."""
        return 0.5 * np.array(
            [[1.0 + self.z, self.x - 1j * self.y],
             [self.x + 1j * self.y, 1.0 - self.z]],
            dtype=complex,
        )


@dataclass(frozen=True)
class SimParams:
    """
    Physical and numerical parameters of a simulation (SI units).

    Attributes:
        dt: integration step δt (s)
        tau: characteristic measurement time τ (s)
        eta: quantum efficiency η in (0, 1]
        rabi: Rabi angular frequency Ω (rad/s)
        gamma_z: extra dephasing rate of the unmonitored z channel (1/s)
        gamma_phi: extra dephasing rate of the unmonitored φ channel (1/s)
        duration: total time T (s)
        seed: RNG seed
    """

    dt: float
    tau: float
    eta: float = 1.0
    rabi: float = 0.0
    gamma_z: float = 0.0
    gamma_phi: float = 0.0
    duration: float = 0.0
    seed: int = 0

    def __post_init__(self):
        checks = [
            (math.isfinite(self.dt) and self.dt > 0, f"dt must be > 0 (got {self.dt})"),
            (math.isfinite(self.tau) and self.tau > 0, f"tau must be > 0 (got {self.tau})"),
            (math.isfinite(self.duration) and self.duration >= 0,
             f"duration must be >= 0 (got {self.duration})"),
            (0.0 < self.eta <= 1.0, f"eta must lie in (0, 1] (got {self.eta})"),
            (math.isfinite(self.rabi), f"rabi must be finite (got {self.rabi})"),
            (self.gamma_z >= 0, f"gamma_z must be >= 0 (got {self.gamma_z})"),
            (self.gamma_phi >= 0, f"gamma_phi must be >= 0 (got {self.gamma_phi})"),
        ]
        for ok, message in checks:
            if not ok:
                raise QubitValidationError(message)
        if self.dt / self.tau > 0.5:
            raise QubitValidationError(
                f"dt/tau = {self.dt / self.tau:.3g} exceeds 0.5; weak-measurement steps require dt << tau"
            )

    @classmethod
    def for_efficiency(cls, dt: float, tau: float, eta: float, basis: str = "compatible_z",
                       **kwargs) -> "SimParams":
        """
        Build parameters whose whole inefficiency sits in one unmonitored channel.

        With Γ = 1/(2ητ), the missing rate Γ - 1/(2τ) goes to γ_z for the
        compatible basis and to γ_φ for the incompatible one.
        """
        missing = (1.0 - eta) / (2.0 * eta * tau)
        if basis == "compatible_z":
            return cls(dt=dt, tau=tau, eta=eta, gamma_z=missing, gamma_phi=0.0, **kwargs)
        if basis == "incompatible_phi":
            return cls(dt=dt, tau=tau, eta=eta, gamma_z=0.0, gamma_phi=missing, **kwargs)
        raise QubitValidationError(f"Unknown basis '{basis}' for an efficiency split")

    @property
    def measurement_rate(self) -> float:
        return 1.0 / self.tau

    @property
    def total_dephasing(self) -> float:
        """
        Γ = 1/(2τ) + γ_z + γ_φ.

        With no explicit channel rates the whole inefficiency is implied by η,
        giving Γ = 1/(2ητ).
        """
        if self.gamma_z == 0.0 and self.gamma_phi == 0.0:
            return 0.5 / (self.eta * self.tau)
        return 0.5 / self.tau + self.gamma_z + self.gamma_phi

    @property
    def efficiency(self) -> float:
        """Fraction of the dephasing budget carried by the monitored channel."""
        return 0.5 / (self.tau * self.total_dephasing)

    @property
    def rabi_angle(self) -> float:
        return self.rabi * self.dt

    @property
    def n_steps(self) -> int:
        return steps_for(self.duration, self.dt)


def steps_for(duration: float, dt: float) -> int:
    """n = floor(T/δt), tolerant of round-off at exact multiples."""
    return int(math.floor(duration / dt + 1e-9))


# ---------- array kernels ----------
def _branch_log_weights(z: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """log((1+z)/2), log((1-z)/2) with z clipped to [-1, 1]; eigenstates give -inf."""
    zc = np.clip(z, -1.0, 1.0)
    with np.errstate(divide="ignore"):
        return np.log(0.5 * (1.0 + zc)), np.log(0.5 * (1.0 - zc))


def povm_update_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, s: ArrayLike):
    """
    Measurement update for s = r·δt·strength.

    z' = ((1+z)e^s - (1-z)e^-s) / ((1+z)e^s + (1-z)e^-s), evaluated as the tanh
    of half the log-weight difference; x and y are divided by
    cosh s + z sinh s = exp(logaddexp(la, lb)), which never overflows.
    """
    log_up, log_down = _branch_log_weights(z)
    la = log_up + s
    lb = log_down - s
    with np.errstate(invalid="ignore"):
        z_new = np.tanh(0.5 * (la - lb))
    scale = np.exp(-np.logaddexp(la, lb))
    return x * scale, y * scale, z_new


def log_readout_density_z(z: ArrayLike, r: ArrayLike, eps: ArrayLike) -> np.ndarray:
    """
    log P(r|ρ) for ε = δt·strength, as a two-branch log-sum-exp.

    P(r|ρ) = √(ε/2π) [ (1+z)/2 e^{-ε(r-1)²/2} + (1-z)/2 e^{-ε(r+1)²/2} ]
    """
    log_up, log_down = _branch_log_weights(z)
    mixture = np.logaddexp(log_up - 0.5 * eps * (r - 1.0) ** 2,
                           log_down - 0.5 * eps * (r + 1.0) ** 2)
    return 0.5 * np.log(eps / (2.0 * np.pi)) + mixture


def arrow_increment_z(z_pre: ArrayLike, z_post: ArrayLike, r: ArrayLike, eps: ArrayLike) -> np.ndarray:
    """Q_k = ln P(r|ρ_pre) - ln P(-r|ρ_post); only σz populations enter."""
    return log_readout_density_z(z_pre, r, eps) - log_readout_density_z(z_post, -r, eps)


def rabi_rotate_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, angle: ArrayLike):
    """Right-handed rotation about +y: +z turns toward +x."""
    c = np.cos(angle)
    s = np.sin(angle)
    return x * c + z * s, y, -x * s + z * c


def phase_kick_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, angle: ArrayLike):
    """Right-handed rotation about +z: +x turns toward +y."""
    c = np.cos(angle)
    s = np.sin(angle)
    return x * c - y * s, x * s + y * c, z


def dephase_xyz(x: ArrayLike, y: ArrayLike, z: ArrayLike, rate: float, dt: float):
    factor = math.exp(-rate * dt)
    return x * factor, y * factor, z


def sample_readout_from_noise(z: ArrayLike, u: ArrayLike, g: ArrayLike, eps: ArrayLike) -> np.ndarray:
    """Readout from one uniform (branch choice) and one standard normal (Gaussian noise)."""
    branch = np.where(u < 0.5 * (1.0 + np.asarray(z)), 1.0, -1.0)
    return branch + g / np.sqrt(eps)


# ---------- state operations ----------
def _require_finite(name: str, value: float):
    if not math.isfinite(value):
        raise QubitValidationError(f"{name} must be finite (got {value})")


def _require_positive(name: str, value: float):
    if not (math.isfinite(value) and value > 0):
        raise QubitValidationError(f"{name} must be > 0 (got {value})")


def povm_update(state: QubitState, r: float, strength: float, dt: float) -> QubitState:
    """
    Apply the Gaussian POVM M_r ∝ exp[-δt·strength (r - σz)² / 4] and normalise.

    Args:
        state: pre-measurement state
        r: dimensionless readout
        strength: measurement rate 1/τ_eff (1/s)
        dt: integration step (s)

    Returns:
        The post-measurement state. Pure states stay pure.
    """
    _require_finite("readout r", r)
    _require_positive("strength", strength)
    _require_positive("dt", dt)
    s = r * dt * strength
    _require_finite("r·dt·strength", s)
    x, y, z = povm_update_xyz(state.x, state.y, state.z, s)
    return QubitState(float(x), float(y), float(z))


def readout_density(state: QubitState, r: float, strength: float, dt: float) -> float:
    """Probability density P(r|ρ) = tr(M_r ρ M_r†) per unit r."""
    _require_finite("readout r", r)
    _require_positive("strength", strength)
    _require_positive("dt", dt)
    return float(np.exp(log_readout_density_z(state.z, r, dt * strength)))


def log_readout_density(state: QubitState, r: float, strength: float, dt: float) -> float:
    _require_finite("readout r", r)
    _require_positive("strength", strength)
    _require_positive("dt", dt)
    return float(log_readout_density_z(state.z, r, dt * strength))


def sample_readout(state: QubitState, strength: float, dt: float, rng: np.random.Generator) -> float:
    """
    Draw r: branch ±1 with probability (1±z)/2, then Gaussian noise of variance 1/(δt·strength).

    Consumes exactly one uniform followed by one standard normal from rng.
    """
    _require_positive("strength", strength)
    _require_positive("dt", dt)
    u = rng.random()
    g = rng.standard_normal()
    return float(sample_readout_from_noise(state.z, u, g, dt * strength))


def rabi_rotate(state: QubitState, angle: float) -> QubitState:
    x, y, z = rabi_rotate_xyz(state.x, state.y, state.z, angle)
    return QubitState(float(x), float(y), float(z))


def dephase(state: QubitState, rate: float, dt: float) -> QubitState:
    """Scale the transverse components by e^{-λ·δt}."""
    if not (math.isfinite(rate) and rate >= 0):
        raise QubitValidationError(f"dephasing rate must be >= 0 (got {rate})")
    x, y, z = dephase_xyz(state.x, state.y, state.z, rate, dt)
    return QubitState(float(x), float(y), float(z))


def phase_kick(state: QubitState, angle: float) -> QubitState:
    x, y, z = phase_kick_xyz(state.x, state.y, state.z, angle)
    return QubitState(float(x), float(y), float(z))


def undo_weight(r: float, strength: float, dt: float) -> float:
    """
    Scalar weight c of the undo composition M_{-r} M_r ρ M_r† M_{-r}† = c·ρ.

    M_{-r} M_r = √(ε/2π) exp[-ε(r²+1)/2] · 1 with ε = δt·strength, hence
    c = (ε/2π) exp[-ε(r²+1)].
    """
    _require_finite("readout r", r)
    eps = dt * strength
    return eps / (2.0 * math.pi) * math.exp(-eps * (r * r + 1.0))
