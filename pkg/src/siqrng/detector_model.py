"""Closed-form response and afterpulse model for threshold single-photon detectors.

A gated threshold detector clicks when at least one of three independent causes
fires in a window: a surviving photon, a dark count, or an afterpulse released
by carriers trapped during an earlier avalanche.  The afterpulse contribution of
the window j slots earlier is a first-order coefficient p_hat_j; chains of
afterpulses triggering afterpulses add high-order terms, which for a history of
m windows sum over all integer compositions:

    P_total(m) = sum_{k=1..m} sum_{i_1+...+i_l = k} prod p_hat_{i_t}

With an exponential lag profile p_hat_j = A * exp(-j*omega) this composition
sum has a geometric closed form, and for unlimited history it collapses to
p_hat / (1 - p_hat) with p_hat = sum_j p_hat_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConvergenceError, ParameterError

DETECTOR_LABELS = ("0", "1", "+", "-")

# Relative tolerance used when the geometric ratio sits on its removable
# singularity (1+A)e^-omega == 1.
_RATIO_EPS = 1e-14

# Marks "depth not given" in AfterpulseSpec.explicit, where None already
# means unlimited history.
_DEPTH_FROM_LIST = object()


def _check_unit(name: str, value: float, *, high_open: bool = False) -> None:
    hi_ok = value < 1.0 if high_open else value <= 1.0
    if not (0.0 <= value and hi_ok):
        hi = "1)" if high_open else "1]"
        raise ParameterError(f"{name} must lie in [0, {hi}, got {value!r}")


def response_prob_no_afterpulse(tau: float, e_d: float) -> float:
    """Click probability 1 - tau*(1 - e_d) of a detector without afterpulsing.

    ``tau`` is the vacuum probability at the detector (no photon arrives) and
    ``e_d`` the dark-count probability per gate.
    """
    _check_unit("tau", tau)
    _check_unit("e_d", e_d)
    return 1.0 - tau * (1.0 - e_d)


def response_prob(tau: float, e_d: float, p_ap: float) -> float:
    """Click probability 1 - tau*(1 - e_d)*(1 - p_ap) including afterpulsing."""
    _check_unit("tau", tau)
    _check_unit("e_d", e_d)
    _check_unit("p_ap", p_ap)
    return 1.0 - tau * (1.0 - e_d) * (1.0 - p_ap)


def afterpulse_prob_infinite(p_hat: float, p_b: float) -> float:
    """Current afterpulse probability p_hat/(1-p_hat) * p_b, unlimited history.

    ``p_hat`` is the overall first-order afterpulse rate and ``p_b`` the prior
    response ratio of the detector (1 in the all-windows-fired worst case).
    """
    _check_unit("p_hat", p_hat, high_open=True)
    _check_unit("p_b", p_b)
    return p_hat / (1.0 - p_hat) * p_b


def afterpulse_coeff(amplitude: float, decay: float, lag: int) -> float:
    """First-order coefficient A*exp(-j*omega) for the window ``lag`` back.

    ``decay`` is the ratio of gating time to de-trapping lifetime; the
    exponent uses the lag index, consistent with the geometric sums below.
    """
    if lag < 1:
        raise ParameterError(f"lag must be >= 1, got {lag}")
    return amplitude * math.exp(-lag * decay)


def total_afterpulse_finite(amplitude: float, decay: float, windows: int) -> float:
    """Total afterpulse probability from ``windows`` previous fired windows.

    Closed form of the composition sum for the exponential lag profile:

        A e^-w * ([(1+A)e^-w]^m - 1) / ((1+A)e^-w - 1)

    The removable singularity (1+A)e^-w == 1 is evaluated as the analytic
    limit m * A e^-w.  The value is not clamped; for extreme parameters it can
    exceed 1 and response-probability consumers clamp it there.
    """
    if amplitude < 0.0:
        raise ParameterError(f"amplitude must be >= 0, got {amplitude}")
    if decay <= 0.0:
        raise ParameterError(f"decay must be > 0, got {decay}")
    if windows < 0:
        raise ParameterError(f"windows must be >= 0, got {windows}")
    if windows == 0 or amplitude == 0.0:
        return 0.0
    first = amplitude * math.exp(-decay)
    ratio = (1.0 + amplitude) * math.exp(-decay)
    if abs(ratio - 1.0) < _RATIO_EPS:
        return windows * first
    if ratio < 1.0 and windows * math.log(ratio) < -745.0:
        # ratio**windows underflows to 0; use the m -> infinity limit directly
        return first / (1.0 - ratio)
    return first * (ratio**windows - 1.0) / (ratio - 1.0)


def total_afterpulse_infinite(amplitude: float, decay: float) -> float:
    """Limit of :func:`total_afterpulse_finite` for unlimited history.

    Requires omega > ln(1+A); equals p_hat/(1-p_hat) with
    p_hat = A e^-w / (1 - e^-w).
    """
    if amplitude < 0.0:
        raise ParameterError(f"amplitude must be >= 0, got {amplitude}")
    if decay <= 0.0:
        raise ParameterError(f"decay must be > 0, got {decay}")
    if amplitude == 0.0:
        return 0.0
    if decay <= math.log1p(amplitude):
        raise ConvergenceError(
            f"total afterpulse diverges: decay {decay} <= ln(1+A) = "
            f"{math.log1p(amplitude)}"
        )
    ratio = (1.0 + amplitude) * math.exp(-decay)
    return amplitude * math.exp(-decay) / (1.0 - ratio)


def composition_total(coefficients: Sequence[float], windows: int) -> float:
    """Composition sum sum_{k=1..windows} f(k), f(k) = sum_j c_j f(k-j).

    ``coefficients[j-1]`` is the first-order coefficient at lag j; lags beyond
    the list contribute nothing.  Algebraically identical to enumerating every
    integer composition of each k, evaluated by convolution in O(windows*lags).
    """
    if windows < 0:
        raise ParameterError(f"windows must be >= 0, got {windows}")
    lags = len(coefficients)
    if windows == 0 or lags == 0:
        return 0.0
    f = [0.0] * (windows + 1)
    f[0] = 1.0
    total = 0.0
    for k in range(1, windows + 1):
        acc = 0.0
        for j in range(1, min(k, lags) + 1):
            cj = coefficients[j - 1]
            if cj != 0.0:
                acc += cj * f[k - j]
        f[k] = acc
        total += acc
    return total


@dataclass(frozen=True)
class AfterpulseSpec:
    """Afterpulse behaviour of one detector.

    mode
        ``"explicit"``: first-order coefficients are listed per lag.
        ``"exponential"``: p_hat_j = amplitude * exp(-j*decay).
    window_depth
        Number of previous windows contributing afterpulses; ``None`` means
        unlimited history.
    """

    mode: str
    coefficients: tuple = ()
    amplitude: float = 0.0
    decay: float = 0.0
    window_depth: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("explicit", "exponential"):
            raise ParameterError(f"unknown afterpulse mode {self.mode!r}")
        depth = self.window_depth
        if depth is not None:
            if isinstance(depth, float):
                if math.isinf(depth):
                    object.__setattr__(self, "window_depth", None)
                    depth = None
                elif depth == int(depth):
                    depth = int(depth)
                    object.__setattr__(self, "window_depth", depth)
                else:
                    raise ParameterError(f"window_depth must be an integer, got {depth}")
            if depth is not None and depth < 0:
                raise ParameterError(f"window_depth must be >= 0, got {depth}")
        if self.mode == "explicit":
            coeffs = tuple(float(c) for c in self.coefficients)
            object.__setattr__(self, "coefficients", coeffs)
            for j, c in enumerate(coeffs, start=1):
                if not (0.0 <= c < 1.0):
                    raise ParameterError(f"coefficient p_hat_{j} = {c} outside [0, 1)")
        else:
            if self.coefficients:
                raise ParameterError("exponential mode takes no coefficient list")
            if not self.amplitude >= 0.0:
                raise ParameterError(f"amplitude must be >= 0, got {self.amplitude}")
            if self.amplitude > 0.0 and not self.decay > 0.0:
                raise ParameterError(f"decay must be > 0, got {self.decay}")
            if self.window_depth is None and self.amplitude > 0.0:
                if self.decay <= math.log1p(self.amplitude):
                    raise ConvergenceError(
                        "unlimited history requires decay > ln(1+amplitude); got "
                        f"decay={self.decay}, ln(1+A)={math.log1p(self.amplitude)}"
                    )
        rate = self.first_order_rate
        if not rate < 1.0:
            raise ParameterError(f"overall first-order rate must be < 1, got {rate}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def none(cls) -> "AfterpulseSpec":
        """A detector with no afterpulsing."""
        return cls(mode="explicit", coefficients=(), window_depth=0)

    @classmethod
    def explicit(cls, coefficients: Sequence[float],
                 window_depth=_DEPTH_FROM_LIST) -> "AfterpulseSpec":
        """Explicit coefficient table; the history depth defaults to the table
        length, pass ``None`` for unlimited history."""
        coefficients = tuple(coefficients)
        if window_depth is _DEPTH_FROM_LIST:
            window_depth = len(coefficients)
        return cls(mode="explicit", coefficients=coefficients,
                   window_depth=window_depth)

    @classmethod
    def exponential(cls, amplitude: float, decay: float,
                    window_depth: Optional[int] = None) -> "AfterpulseSpec":
        return cls(mode="exponential", amplitude=amplitude, decay=decay,
                   window_depth=window_depth)

    @classmethod
    def exponential_from_rate(cls, first_order_rate: float, decay: float,
                              window_depth: Optional[int] = None) -> "AfterpulseSpec":
        """Exponential profile whose unlimited-history first-order sum equals
        ``first_order_rate``: amplitude = rate * (e^omega - 1)."""
        _check_unit("first_order_rate", first_order_rate, high_open=True)
        if first_order_rate == 0.0:
            return cls.none()
        amplitude = first_order_rate * math.expm1(decay)
        return cls.exponential(amplitude, decay, window_depth)

    # -- derived quantities ------------------------------------------------

    def coefficient(self, lag: int) -> float:
        """First-order coefficient p_hat_j at window lag j (0 beyond depth)."""
        if lag < 1:
            raise ParameterError(f"lag must be >= 1, got {lag}")
        if self.window_depth is not None and lag > self.window_depth:
            return 0.0
        if self.mode == "explicit":
            return self.coefficients[lag - 1] if lag <= len(self.coefficients) else 0.0
        return afterpulse_coeff(self.amplitude, self.decay, lag)

    @property
    def first_order_rate(self) -> float:
        """Overall first-order rate p_hat = sum_j p_hat_j over the history."""
        depth = self.window_depth
        if self.mode == "explicit":
            n = len(self.coefficients) if depth is None else min(depth, len(self.coefficients))
            return math.fsum(self.coefficients[:n])
        if self.amplitude == 0.0:
            return 0.0
        e = math.exp(-self.decay)
        if depth is None:
            return self.amplitude * e / (1.0 - e)
        return self.amplitude * e * (1.0 - e**depth) / (1.0 - e)

    def worst_case_total(self) -> float:
        """Total afterpulse probability when every history window fired.

        Unlimited history gives p_hat/(1-p_hat); a finite window gives the
        composition sum (closed form in exponential mode).  Not clamped.
        """
        depth = self.window_depth
        if depth is None:
            return afterpulse_prob_infinite(self.first_order_rate, 1.0)
        if self.mode == "exponential":
            if self.amplitude == 0.0 or depth == 0:
                return 0.0
            return total_afterpulse_finite(self.amplitude, self.decay, depth)
        return composition_total(self.coefficients, depth)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "A": self.amplitude,
            "omega": self.decay,
            "coefficients": list(self.coefficients),
            "window_depth": self.window_depth,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AfterpulseSpec":
        depth = data.get("window_depth")
        if isinstance(depth, str):
            if depth.lower() in ("inf", "infinity"):
                depth = None
            else:
                depth = int(depth)
        return cls(
            mode=data["mode"],
            coefficients=tuple(data.get("coefficients") or ()),
            amplitude=float(data.get("A") or 0.0),
            decay=float(data.get("omega") or 0.0),
            window_depth=depth,
        )


@dataclass(frozen=True)
class DetectorParams:
    """Static parameters of one threshold detector."""

    efficiency: float
    dark_rate: float
    afterpulse: AfterpulseSpec = field(default_factory=AfterpulseSpec.none)
    label: str = "0"

    def __post_init__(self):
        _check_unit("efficiency", self.efficiency)
        _check_unit("dark_rate", self.dark_rate, high_open=True)
        if self.label not in DETECTOR_LABELS:
            raise ParameterError(
                f"label must be one of {DETECTOR_LABELS}, got {self.label!r}"
            )

    def to_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "dark_rate": self.dark_rate,
            "afterpulse": self.afterpulse.to_dict(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorParams":
        return cls(
            efficiency=float(data["efficiency"]),
            dark_rate=float(data["dark_rate"]),
            afterpulse=AfterpulseSpec.from_dict(data["afterpulse"]),
            label=data.get("label", "0"),
        )
