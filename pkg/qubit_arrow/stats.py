"""
Ensemble statistics of the arrow-of-time Q.

- symmetric histograms with bins centred on multiples of the bin width
- the detailed fluctuation-theorem curve ln P(Q)/P(-Q) with a weighted slope fit
- the integral fluctuation theorem <e^{-Q}> with a jackknife error
- the closed-form QND law of Q from x+ (density, CDF, sampler)
- Kolmogorov-Smirnov distance to an analytic CDF
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, is_dataclass
from typing import Any, Callable

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

from .state import QubitValidationError


class StatisticsError(ValueError):
    """Raised for empty ensembles, malformed histograms or FT curves without data."""
    pass


# ---------- types ----------
@dataclass
class QEnsemble:
    """Q samples of one ensemble at propagation time `duration` (s)."""

    values: np.ndarray
    duration: float = 0.0
    params_fingerprint: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise StatisticsError("Q ensemble contains non-finite values")

    def __len__(self) -> int:
        return int(self.values.size)

    def require_nonempty(self):
        if self.values.size == 0:
            raise StatisticsError("Q ensemble is empty")


@dataclass
class Histogram:
    """
    Uniform bins of width w centred on k·w for k = -m..m.

    Binning mirrors about 0: k = sign(Q)·floor(|Q|/w + 1/2), so a value on
    an edge goes to the bin farther from 0 (Q = ±w/2 lands in bin ±1).
    Samples beyond the outer edges are tallied in underflow / overflow.
    """

    edges: np.ndarray
    counts: np.ndarray
    total: int
    underflow: int = 0
    overflow: int = 0

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def half_bins(self) -> int:
        """m, the number of bins on each side of the central one."""
        return (len(self.counts) - 1) // 2

    @property
    def n_samples(self) -> int:
        return self.total + self.underflow + self.overflow

    def density(self) -> np.ndarray:
        """Counts normalised by all samples (including out-of-range ones) and bin width."""
        n = self.n_samples
        if n == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / (n * self.bin_width)


@dataclass
class FtCurve:
    """Points (Q, ln P(Q)/P(-Q), stderr) and a weighted straight-line fit over |Q| <= window."""

    q: np.ndarray
    ln_ratio: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    window: float
    min_count: int

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.q, self.ln_ratio, self.stderr])

    @property
    def n_fit_points(self) -> int:
        return int(np.sum(np.abs(self.q) <= self.window + 1e-12))


@dataclass
class IntegralFt:
    """<e^{-Q}> with its jackknife error, plus median and log-mean-exp diagnostics."""

    mean: float
    stderr: float
    median: float
    log_mean: float
    n: int

    @property
    def deficit(self) -> float:
        return 1.0 - self.mean


# ---------- histogram and FT ----------
def _bin_index(values: np.ndarray, width: float) -> np.ndarray:
    return (np.sign(values) * np.floor(np.abs(values) / width + 0.5)).astype(np.int64)


def build_histogram(ensemble: QEnsemble, bin_width: float, q_max: float) -> Histogram:
    """Mirror-symmetric histogram covering [-q_max, q_max]."""
    if not (bin_width > 0 and math.isfinite(bin_width)):
        raise StatisticsError(f"bin_width must be > 0 (got {bin_width})")
    if not (q_max > 0 and math.isfinite(q_max)):
        raise StatisticsError(f"q_max must be > 0 (got {q_max})")
    ensemble.require_nonempty()

    m = max(0, int(math.ceil(q_max / bin_width - 0.5 - 1e-12)))
    edges = bin_width * (np.arange(-m, m + 2) - 0.5)
    idx = _bin_index(ensemble.values, bin_width)
    inside = np.abs(idx) <= m
    counts = np.bincount(idx[inside] + m, minlength=2 * m + 1)
    return Histogram(
        edges=edges,
        counts=counts,
        total=int(counts.sum()),
        underflow=int(np.sum(idx < -m)),
        overflow=int(np.sum(idx > m)),
    )


def validate_symmetry(hist: Histogram, tol: float = 1e-9):
    """Bins must be uniform, odd in number and mirror-symmetric about 0."""
    edges = np.asarray(hist.edges, dtype=float)
    if edges.size < 2 or len(hist.counts) != edges.size - 1:
        raise StatisticsError("Histogram edges and counts are inconsistent")
    if len(hist.counts) % 2 != 1:
        raise StatisticsError("Histogram needs an odd number of bins centred on 0")
    widths = np.diff(edges)
    if np.any(widths <= 0) or not np.allclose(widths, widths[0], rtol=0.0, atol=tol * widths[0]):
        raise StatisticsError("Histogram bins are not uniform and increasing")
    if not np.allclose(edges, -edges[::-1], rtol=0.0, atol=tol * widths[0]):
        raise StatisticsError("Histogram bins are not symmetric about Q = 0")
    if int(np.sum(hist.counts)) != hist.total:
        raise StatisticsError(f"Histogram counts sum to {int(np.sum(hist.counts))}, expected {hist.total}")


def _weighted_line(q: np.ndarray, y: np.ndarray, err: np.ndarray):
    if q.size < 2:
        return float("nan"), float("nan"), float("nan")
    coeffs, cov = np.polyfit(q, y, 1, w=1.0 / err, cov="unscaled")
    return float(coeffs[0]), float(math.sqrt(cov[0, 0])), float(coeffs[1])


def detailed_ft_curve(hist: Histogram, min_count: int = 10, window: float = 3.0) -> FtCurve:
    """
    ln(n₊/n₋) for every positive bin centre whose mirror pair both hold at least
    min_count samples; Poisson error √(1/n₊ + 1/n₋).
    """
    validate_symmetry(hist)
    m = hist.half_bins
    w = hist.bin_width
    counts = np.asarray(hist.counts)
    plus = counts[m + 1:]
    minus = counts[:m][::-1]
    keep = (plus >= min_count) & (minus >= min_count)
    if not np.any(keep):
        raise StatisticsError(
            f"No histogram bin pair reaches the minimum count of {min_count} on both sides of Q = 0; "
            "lower min_bin_count, widen bin_width or simulate more trajectories"
        )
    centers = w * np.arange(1, m + 1)
    n_plus = plus[keep].astype(float)
    n_minus = minus[keep].astype(float)
    q = centers[keep]
    ln_ratio = np.log(n_plus / n_minus)
    err = np.sqrt(1.0 / n_plus + 1.0 / n_minus)

    in_window = np.abs(q) <= window + 1e-12
    slope, slope_err, intercept = _weighted_line(q[in_window], ln_ratio[in_window], err[in_window])
    return FtCurve(
        q=q, ln_ratio=ln_ratio, stderr=err,
        slope=slope, slope_stderr=slope_err, intercept=intercept,
        window=window, min_count=min_count,
    )


def integral_ft(ensemble: QEnsemble) -> IntegralFt:
    """Sample mean of e^{-Q} (compensated sum) with its leave-one-out jackknife error."""
    ensemble.require_nonempty()
    q = ensemble.values
    n = q.size
    weights = np.exp(-q)
    total = math.fsum(weights)
    mean = total / n
    if n > 1:
        loo = (total - weights) / (n - 1)
        loo_mean = math.fsum(loo) / n
        stderr = math.sqrt((n - 1) / n * math.fsum((loo - loo_mean) ** 2))
    else:
        stderr = float("nan")
    return IntegralFt(
        mean=mean,
        stderr=stderr,
        median=float(np.median(weights)),
        log_mean=float(logsumexp(-q) - math.log(n)),
        n=n,
    )


# ---------- closed-form QND law ----------
def _require_times(T: float, tau: float):
    if not (math.isfinite(T) and T > 0):
        raise QubitValidationError(f"T must be > 0 (got {T})")
    if not (math.isfinite(tau) and tau > 0):
        raise QubitValidationError(f"tau must be > 0 (got {tau})")


def _u_of_q(q: np.ndarray) -> np.ndarray:
    """arcosh(e^{q/2}) for q > 0, without overflow."""
    return 0.5 * q + np.log1p(np.sqrt(-np.expm1(-q)))


def _q_of_u(u: np.ndarray) -> np.ndarray:
    """2 ln cosh u, without overflow."""
    u = np.abs(u)
    return 2.0 * (u + np.log1p(np.exp(-2.0 * u)) - math.log(2.0))


def analytic_qnd_density(q, T: float, tau: float):
    """
    P(Q) of the QND ensemble started in x+ after time T, zero for Q <= 0.

    P(Q) = √(τ/(2πT)) · e^Q/√(e^Q - 1) · exp(-T/(2τ) - (τ/(2T))·arcosh(e^{Q/2})²)
    """
    _require_times(T, tau)
    q_arr = np.atleast_1d(np.asarray(q, dtype=float))
    a = T / tau
    out = np.zeros_like(q_arr)
    pos = q_arr > 0
    qp = q_arr[pos]
    u = _u_of_q(qp)
    log_p = (-0.5 * math.log(2.0 * math.pi * a) + 0.5 * qp - 0.5 * np.log(-np.expm1(-qp))
             - 0.5 * a - u * u / (2.0 * a))
    out[pos] = np.exp(log_p)
    return float(out[0]) if np.ndim(q) == 0 else out


def analytic_qnd_cdf(q, T: float, tau: float):
    """P(Q <= q) = Φ((u-a)/√a) + Φ((u+a)/√a) - 1 with u = arcosh(e^{q/2}), a = T/τ."""
    _require_times(T, tau)
    q_arr = np.atleast_1d(np.asarray(q, dtype=float))
    a = T / tau
    u = _u_of_q(np.clip(q_arr, 0.0, None))
    sd = math.sqrt(a)
    cdf = stats.norm.cdf((u - a) / sd) + stats.norm.cdf((u + a) / sd) - 1.0
    cdf = np.where(q_arr > 0, np.clip(cdf, 0.0, 1.0), 0.0)
    return float(cdf[0]) if np.ndim(q) == 0 else cdf


def sample_analytic_qnd(T: float, tau: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw Q = 2 ln cosh S with S ~ ½N(a, a) + ½N(-a, a), a = T/τ."""
    _require_times(T, tau)
    a = T / tau
    branch = np.where(rng.random(size) < 0.5, 1.0, -1.0)
    s = branch * a + math.sqrt(a) * rng.standard_normal(size)
    return _q_of_u(s)


def analytic_qnd_normalization(T: float, tau: float) -> float:
    """∫ P(Q) dQ, integrated in u = arcosh(e^{Q/2}) so the Q → 0⁺ edge is regular."""
    _require_times(T, tau)
    a = T / tau

    def integrand(u: float) -> float:
        q = float(_q_of_u(np.array(u)))
        if q <= 0:
            return 0.0
        return analytic_qnd_density(q, T, tau) * 2.0 * math.tanh(u)

    upper = a + 40.0 * math.sqrt(a) + 10.0
    value, _ = integrate.quad(integrand, 0.0, upper, limit=200, epsabs=1e-12, epsrel=1e-10, points=[a])
    return float(value)


# ---------- distances ----------
def ks_distance(ensemble: QEnsemble, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup-norm distance between the empirical CDF and `cdf`."""
    ensemble.require_nonempty()
    return float(stats.kstest(ensemble.values, cdf).statistic)


def params_fingerprint(*objects: Any) -> str:
    """Stable short hash of parameter objects (dataclasses, pydantic models or dicts)."""
    payload = []
    for obj in objects:
        if obj is None:
            payload.append(None)
        elif is_dataclass(obj):
            payload.append(asdict(obj))
        elif hasattr(obj, "model_dump"):
            payload.append(obj.model_dump(mode="json"))
        else:
            payload.append(obj)
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
