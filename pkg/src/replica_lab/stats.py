"""Distribution evidence from ensembles of per-realization probabilities.

The stationary claim under test: the probability of ending in a given well,
viewed as a random variable over noise realizations, is uniform on (0, 1).
Moments against 1/(n+1), cross moments against the exact Beta(1,1) values,
histogram densities, and a one-sample Kolmogorov-Smirnov test provide the
evidence at sample scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import beta_cross_moment

_VALUE_TOL = 1e-9


@dataclass(frozen=True)
class SampleSet:
    """Probabilities in [0, 1], one per independent trajectory."""

    values: np.ndarray
    provenance: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("need a non-empty 1-d sample array")
        if not np.all(np.isfinite(values)):
            raise ValueError("samples must be finite")
        if values.min() < -_VALUE_TOL or values.max() > 1.0 + _VALUE_TOL:
            raise ValueError("samples must lie in [0, 1] within 1e-9")
        object.__setattr__(self, "values", np.clip(values, 0.0, 1.0))

    @property
    def size(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class MomentReport:
    order: tuple[int, int]  # powers of P and (1 - P)
    sample_moment: float
    standard_error: float
    reference: float
    z_score: float


def _report(xs: np.ndarray, order: tuple[int, int], reference: float) -> MomentReport:
    mean = float(xs.mean())
    se = float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else 0.0
    if se > 0:
        z = (mean - reference) / se
    else:
        z = 0.0 if mean == reference else math.inf * math.copysign(1.0, mean - reference)
    return MomentReport(order, mean, se, reference, z)


def moments(samples: SampleSet, max_order: int) -> list[MomentReport]:
    """Sample moments <P^n> for n = 1..max_order against the uniform references."""
    if not 1 <= max_order <= 10:
        raise ValueError("max_order must be in 1..10")
    if samples.size < 100:
        raise ValueError(f"need >= 100 samples for moment reports, got {samples.size}")
    return [
        _report(samples.values**n, (n, 0), 1.0 / (n + 1)) for n in range(1, max_order + 1)
    ]


def cross_moment(samples: SampleSet, n: int, m: int) -> MomentReport:
    """Sample <P^n (1-P)^m> against the exact n! m! / (n+m+1)! reference."""
    reference = float(beta_cross_moment(n, m))
    if n == 0 and m == 0:
        return MomentReport((0, 0), 1.0, 0.0, reference, 0.0)
    if samples.size < 100:
        raise ValueError(f"need >= 100 samples for moment reports, got {samples.size}")
    xs = samples.values**n * (1.0 - samples.values) ** m
    return _report(xs, (n, m), reference)


@dataclass(frozen=True)
class HistogramResult:
    edges: np.ndarray
    counts: np.ndarray
    densities: np.ndarray


def histogram(samples: SampleSet, bins: int = 50) -> HistogramResult:
    """Uniform bins on [0, 1], left-closed right-open, last bin closed."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    counts, edges = np.histogram(samples.values, bins=bins, range=(0.0, 1.0))
    densities = counts / (samples.size * (1.0 / bins))
    return HistogramResult(edges=edges, counts=counts, densities=densities)


def ks_uniform(samples: SampleSet) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic against Uniform(0,1) and its p-value.

    The p-value uses the asymptotic Kolmogorov distribution, evaluated from
    whichever of its two series representations converges fast at the given
    argument.
    """
    n = samples.size
    if n < 50:
        raise ValueError(f"need >= 50 samples for the asymptotic p-value, got {n}")
    xs = np.sort(samples.values)
    ranks = np.arange(1, n + 1)
    d_plus = float(np.max(ranks / n - xs))
    d_minus = float(np.max(xs - (ranks - 1) / n))
    stat = max(d_plus, d_minus, 0.0)
    return stat, _kolmogorov_sf(math.sqrt(n) * stat)


def _kolmogorov_sf(y: float) -> float:
    """Survival function of the Kolmogorov distribution."""
    if y < 1e-8:
        return 1.0
    if y < 1.1:
        # theta-transformed series: accurate where the alternating form stalls
        factor = math.pi**2 / (8.0 * y * y)
        total = 0.0
        for k in range(1, 40):
            term = math.exp(-((2 * k - 1) ** 2) * factor)
            total += term
            if term < 1e-17 * max(total, 1e-300):
                break
        return max(0.0, min(1.0, 1.0 - math.sqrt(2.0 * math.pi) / y * total))
    total = 0.0
    sign = 1.0
    for k in range(1, 200):
        term = math.exp(-2.0 * k * k * y * y)
        total += sign * term
        if term < 1e-17:
            break
        sign = -sign
    return max(0.0, min(1.0, 2.0 * total))
