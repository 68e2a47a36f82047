"""Photon-number distribution handling for an untrusted source.

Covers the truncated distribution type, the Bernoulli (binomial) loss
transform, vacuum probabilities with truncation bounds, the monitor-arm
attenuation balance and Hoeffding confidence radii for sampled estimates.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import stats

from .errors import ParameterError

# Truncation tail above which construction warns.
TAIL_WARN_THRESHOLD = 1e-10
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class PhotonDistribution:
    """Photon-number probabilities P(0..n_max) with tracked truncation tail."""

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise ParameterError("probs must be a non-empty 1-d vector")
        if np.any(arr < 0.0):
            raise ParameterError("probabilities must be non-negative")
        if self.tail_mass < 0.0:
            raise ParameterError(f"tail_mass must be >= 0, got {self.tail_mass}")
        total = math.fsum(arr.tolist()) + self.tail_mass
        if abs(total - 1.0) > _SUM_TOL:
            raise ParameterError(
                f"probabilities plus tail must sum to 1 within {_SUM_TOL}, got {total!r}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        """Mean photon number of the truncated part."""
        return float(np.dot(np.arange(self.probs.size), self.probs))

    @classmethod
    def point_mass(cls, n: int) -> "PhotonDistribution":
        if n < 0:
            raise ParameterError(f"photon number must be >= 0, got {n}")
        probs = np.zeros(n + 1)
        probs[n] = 1.0
        return cls(probs=probs)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist(), "tail_mass": self.tail_mass}

    @classmethod
    def from_dict(cls, data: dict) -> "PhotonDistribution":
        return cls(probs=np.asarray(data["probs"], dtype=float),
                   tail_mass=float(data.get("tail_mass", 0.0)))


def default_poisson_truncation(nu: float) -> int:
    """Truncation order for a coherent source; keeps the tail below ~1e-12."""
    return int(math.ceil(10.0 * nu + 50.0))


def poisson_distribution(nu: float, n_max: Optional[int] = None) -> PhotonDistribution:
    """Truncated Poisson distribution of mean ``nu`` with exact tail tracking."""
    if nu < 0.0:
        raise ParameterError(f"mean photon number must be >= 0, got {nu}")
    if n_max is None:
        n_max = default_poisson_truncation(nu)
    if n_max < 0:
        raise ParameterError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1)
    probs = stats.poisson.pmf(n, nu)
    tail = float(stats.poisson.sf(n_max, nu))
    if tail > TAIL_WARN_THRESHOLD:
        warnings.warn(
            f"Poisson truncation at n_max={n_max} leaves tail mass {tail:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    # absorb the rounding drift of the pmf into the tail
    drift = 1.0 - math.fsum(probs.tolist()) - tail
    tail = max(0.0, tail + drift)
    return PhotonDistribution(probs=probs, tail_mass=tail)


def bernoulli_transform(dist: PhotonDistribution, xi: float) -> PhotonDistribution:
    """Distribution after independent per-photon survival probability ``xi``.

    D(m) = sum_{n>=m} P(n) C(n,m) xi^m (1-xi)^(n-m).  The input tail cannot be
    transformed and is carried through as output tail mass (pessimistic: its
    photons may land anywhere).
    """
    if not (0.0 <= xi <= 1.0):
        raise ParameterError(f"xi must lie in [0, 1], got {xi}")
    n_max = dist.n_max
    n = np.arange(n_max + 1)
    # kernel[i, j] = P(j survivors | i photons)
    kernel = stats.binom.pmf(n[None, :], n[:, None], xi)
    out = dist.probs @ kernel
    out = np.clip(out, 0.0, None)
    tail = max(0.0, 1.0 - math.fsum(out.tolist()))
    return PhotonDistribution(probs=out, tail_mass=tail)


def vacuum_probability(dist: PhotonDistribution, xi: float) -> Tuple[float, float]:
    """Bounds (lo, hi) on the vacuum probability after thinning by ``xi``.

    tau = sum_n P(n) (1-xi)^n; the truncation tail contributes 0 (lower bound)
    or survives entirely as vacuum (upper bound).
    """
    if not (0.0 <= xi <= 1.0):
        raise ParameterError(f"xi must lie in [0, 1], got {xi}")
    n = np.arange(dist.n_max + 1)
    lo = float(np.dot(dist.probs, np.power(1.0 - xi, n)))
    lo = min(max(lo, 0.0), 1.0)
    hi = min(lo + dist.tail_mass, 1.0)
    return lo, hi


def monitor_attenuation(eta_bs: float, eta_det: float) -> float:
    """Attenuation t0 = (1-eta_bs)/eta_bs * eta_det balancing the monitor arm.

    With this attenuation the distribution continuing into the measurement
    equals the one the monitor photodiode sees.
    """
    if not (0.0 < eta_bs < 1.0):
        raise ParameterError(f"beam-splitter transmittance must lie in (0, 1), got {eta_bs}")
    if not (0.0 < eta_det <= 1.0):
        raise ParameterError(f"photodiode efficiency must lie in (0, 1], got {eta_det}")
    return (1.0 - eta_bs) / eta_bs * eta_det


def hoeffding_delta(n_samples: int, eps_d: float) -> float:
    """Confidence radius sqrt(ln(2/eps_d) / (2 n)) for an empirical mean.

    Inverts eps_d = 2 exp(-2 n delta^2).
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if not (0.0 < eps_d < 1.0):
        raise ParameterError(f"eps_d must lie in (0, 1), got {eps_d}")
    return math.sqrt(math.log(2.0 / eps_d) / (2.0 * n_samples))


def clipped_interval(center: float, delta: float) -> Tuple[float, float]:
    """Confidence interval [center-delta, center+delta] clipped to [0, 1]."""
    if delta < 0.0:
        raise ParameterError(f"delta must be >= 0, got {delta}")
    return max(0.0, center - delta), min(1.0, center + delta)


class DistributionEstimate(NamedTuple):
    """Empirical distribution plus the sample count behind it."""

    distribution: PhotonDistribution
    n_samples: int


def estimate_distribution(
    sample_counts: Union[Mapping[int, int], Iterable[int]],
) -> DistributionEstimate:
    """Normalized empirical distribution from a photon-count histogram.

    Accepts a mapping {photon number: count} or a dense count sequence indexed
    by photon number.
    """
    if isinstance(sample_counts, Mapping):
        items = dict(sample_counts)
    else:
        items = {n: c for n, c in enumerate(sample_counts)}
    items = {int(n): int(c) for n, c in items.items() if c}
    if not items:
        raise ParameterError("histogram is empty")
    if any(n < 0 for n in items):
        raise ParameterError("photon numbers must be >= 0")
    if any(c < 0 for c in items.values()):
        raise ParameterError("counts must be >= 0")
    n_max = max(items)
    counts = np.zeros(n_max + 1)
    for n, c in items.items():
        counts[n] = c
    total = counts.sum()
    return DistributionEstimate(
        distribution=PhotonDistribution(probs=counts / total),
        n_samples=int(total),
    )


def read_histogram_csv(path) -> Counter:
    """Read ``n,count`` lines into a histogram; '#' lines and blanks skipped."""
    hist: Counter = Counter()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParameterError(f"{path}:{line_no}: expected 'n,count', got {line!r}")
            hist[int(parts[0])] += int(parts[1])
    if not hist:
        raise ParameterError(f"{path}: no histogram rows")
    return hist


@dataclass(frozen=True)
class MonitorConfig:
    """Photon-distribution monitor: splitter, photodiode and sampling budget."""

    eta_bs: float
    eta_det: float
    transmittances: Mapping[str, float] = field(default_factory=dict)
    sample_count: int = 1
    eps_d: float = 2.0**-50

    def __post_init__(self):
        if not (0.0 < self.eta_bs < 1.0):
            raise ParameterError(f"eta_bs must lie in (0, 1), got {self.eta_bs}")
        if not (0.0 < self.eta_det <= 1.0):
            raise ParameterError(f"eta_det must lie in (0, 1], got {self.eta_det}")
        for label, t in self.transmittances.items():
            if not (0.0 < t <= 1.0):
                raise ParameterError(f"transmittance for arm {label!r} must lie in (0, 1], got {t}")
        if self.sample_count < 1:
            raise ParameterError(f"sample_count must be >= 1, got {self.sample_count}")
        if not (0.0 < self.eps_d < 1.0):
            raise ParameterError(f"eps_d must lie in (0, 1), got {self.eps_d}")
        object.__setattr__(self, "transmittances", dict(self.transmittances))

    @property
    def attenuation(self) -> float:
        return monitor_attenuation(self.eta_bs, self.eta_det)

    @property
    def delta(self) -> float:
        return hoeffding_delta(self.sample_count, self.eps_d)
