"""Finite-size rate bounds, composable security and certified final rates.

Two routes bound the check-basis error deviation theta: inverting the
random-sampling tail bound by bisection, or the closed-form entropy
inequality.  The certified rate additionally minimizes over the Hoeffding
confidence box of the monitored vacuum probabilities, and the composable
failure probability combines the error-estimation, distribution-estimation
and extraction budgets.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .detector_model import AfterpulseSpec, DetectorParams
from .entropy_engine import (
    ArmState,
    EntropyReport,
    binary_entropy,
    entropy_report_from_taus,
    make_entropy_report,
    measurement_taus,
)
from .errors import BudgetError, InfeasibleError, ParameterError
from .source_monitor import (
    PhotonDistribution,
    clipped_interval,
    hoeffding_delta,
    monitor_attenuation,
    poisson_distribution,
)

# Defaults reproducing the reference operating point (10^10 pulses, 2% check
# sampling, 2^-50 budgets, 100-bit extraction exponent).
DEFAULT_TOTAL_PULSES = 1e10
DEFAULT_X_FRACTION = 0.02
DEFAULT_EPS_TERM = 2.0**-50
DEFAULT_T_E = 100
DEFAULT_MISALIGNMENT = 0.02
DEFAULT_Z_RATE = 1e6
DEFAULT_ETA_BS = 0.5
# Monitor photodiode efficiency: not part of the published operating point;
# 0.65 places the rate peak near 1.5 dB of variable attenuation.
DEFAULT_ETA_DET = 0.65
DEFAULT_LOSS_MAX_DB = 2.5

_THETA_FLOOR = 1e-15


@dataclass(frozen=True)
class SecurityParams:
    """Failure-probability budgets and sampling layout of one run."""

    total_pulses: float = DEFAULT_TOTAL_PULSES
    x_fraction: float = DEFAULT_X_FRACTION
    eps_all: float = 2.0 * DEFAULT_EPS_TERM
    eps_d: float = DEFAULT_EPS_TERM
    eps_e: float = DEFAULT_EPS_TERM
    t_e: int = DEFAULT_T_E
    misalignment: float = DEFAULT_MISALIGNMENT
    z_rate: float = DEFAULT_Z_RATE    # pulses/s measured in the generation basis; informational
    n_z: float = field(init=False)
    n_x: float = field(init=False)

    def __post_init__(self):
        if self.total_pulses < 1:
            raise ParameterError(f"total_pulses must be >= 1, got {self.total_pulses}")
        if not (0.0 < self.x_fraction < 1.0):
            raise ParameterError(f"x_fraction must lie in (0, 1), got {self.x_fraction}")
        for name in ("eps_all", "eps_d", "eps_e"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ParameterError(f"{name} must lie in (0, 1), got {v}")
        if self.t_e < 1:
            raise ParameterError(f"t_e must be >= 1, got {self.t_e}")
        if not (0.0 <= self.misalignment <= 1.0):
            raise ParameterError(f"misalignment must lie in [0, 1], got {self.misalignment}")
        object.__setattr__(self, "n_x", self.x_fraction * self.total_pulses)
        object.__setattr__(self, "n_z", self.total_pulses - self.n_x)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SecurityParams":
        data = {k: v for k, v in data.items() if k not in ("n_z", "n_x")}
        return cls(**data)


# ---------------------------------------------------------------------------
# Deviation bounds


def _bernoulli_kl_bits(x: float, y: float) -> float:
    """Relative entropy D(x||y) of Bernoulli parameters, in bits."""
    if x == y:
        return 0.0
    acc = 0.0
    if x > 0.0:
        acc += x * math.log1p((x - y) / y)
    if x < 1.0:
        acc += (1.0 - x) * math.log1p((y - x) / (1.0 - y))
    return acc / math.log(2.0)


def _zeta_exponent(eq: float, q_x: float, theta: float) -> float:
    """h(EQ + (1-q_x)theta) - q_x h(EQ) - (1-q_x) h(EQ+theta), in bits.

    Evaluated as the cancellation-free mixture of relative entropies
    q_x D(EQ || m) + (1-q_x) D(EQ+theta || m) around m = EQ + (1-q_x) theta,
    which is the same quantity exactly.
    """
    mixed = min(eq + (1.0 - q_x) * theta, 1.0)
    tested = min(eq + theta, 1.0)
    return (q_x * _bernoulli_kl_bits(eq, mixed)
            + (1.0 - q_x) * _bernoulli_kl_bits(tested, mixed))


def random_sampling_epsilon(eq: float, q_x: float, n_total: float, theta: float) -> float:
    """Failure probability bound of the random-sampling deviation ``theta``.

    (q_x(1-q_x) EQ(1-EQ) N)^(-1/2) * 2^(-n_x zeta(theta)) with n_x = q_x N.
    """
    if not (0.0 < eq < 0.5):
        raise ParameterError(f"EQ must lie in (0, 0.5), got {eq}")
    if not (0.0 < q_x < 1.0):
        raise ParameterError(f"q_x must lie in (0, 1), got {q_x}")
    if n_total < 1:
        raise ParameterError(f"N must be >= 1, got {n_total}")
    if theta < 0.0:
        raise ParameterError(f"theta must be >= 0, got {theta}")
    log2_eps = (-0.5 * math.log2(q_x * (1.0 - q_x) * eq * (1.0 - eq) * n_total)
                - q_x * n_total * _zeta_exponent(eq, q_x, theta))
    return 2.0**log2_eps


def theta_random_sampling(eq: float, q_x: float, n_total: float, eps_e: float) -> float:
    """Smallest deviation theta whose random-sampling bound is at most eps_e.

    Bisection over (0, 0.5 - EQ]; raises :class:`InfeasibleError` when even
    the largest admissible theta cannot reach the target (the rate is then 0).
    """
    if not (0.0 < eq < 0.5):
        raise ParameterError(f"EQ must lie in (0, 0.5), got {eq}")
    if not (0.0 < q_x < 1.0):
        raise ParameterError(f"q_x must lie in (0, 1), got {q_x}")
    if n_total < 1:
        raise ParameterError(f"N must be >= 1, got {n_total}")
    if not (0.0 < eps_e < 1.0):
        raise ParameterError(f"eps_e must lie in (0, 1), got {eps_e}")
    n_x = q_x * n_total
    log2_pref = -0.5 * math.log2(q_x * (1.0 - q_x) * eq * (1.0 - eq) * n_total)
    log2_target = math.log2(eps_e)

    def excess(theta: float) -> float:
        return log2_pref - n_x * _zeta_exponent(eq, q_x, theta) - log2_target

    hi = 0.5 - eq - _THETA_FLOOR
    if hi <= _THETA_FLOOR:
        raise InfeasibleError(f"no admissible theta below 0.5 - EQ for EQ = {eq}")
    if excess(hi) > 0.0:
        raise InfeasibleError(
            f"no theta <= {hi:.6g} reaches eps_e = {eps_e:.3e} "
            f"(EQ={eq:.3e}, q_x={q_x}, N={n_total:.3e})"
        )
    lo = _THETA_FLOOR
    if excess(lo) <= 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if excess(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def theta_entropy_inequality(n_z: float, n_x: float, eps_e: float) -> float:
    """Closed-form deviation sqrt((n_z+n_x)/(n_z n_x) (n_x+1)/n_x ln(2/eps_e)).

    For this route the error budget is the full security parameter, since no
    error correction consumes any of it.
    """
    if n_z < 1 or n_x < 1:
        raise ParameterError(f"basis counts must be >= 1, got n_z={n_z}, n_x={n_x}")
    if not (0.0 < eps_e < 1.0):
        raise ParameterError(f"eps_e must lie in (0, 1), got {eps_e}")
    return math.sqrt(
        (n_z + n_x) / (n_z * n_x) * (n_x + 1.0) / n_x * math.log(2.0 / eps_e)
    )


# ---------------------------------------------------------------------------
# Rates


def _bracket(report: EntropyReport, theta: float) -> float:
    """Per-pulse certified bits before any subtraction.

    (hmin_z Q_single + Q_double)(1 - h(min(EQ+theta, 1/2))) - Q_double.
    """
    x = min(report.eq + theta, 0.5)
    return ((report.hmin_z * report.q_single + report.q_double)
            * (1.0 - binary_entropy(x)) - report.q_double)


def rate_random_sampling(n_z: float, report: EntropyReport, theta: float,
                         t_e: float) -> float:
    """Final random bits n_z * bracket - t_e, clamped at 0."""
    return max(0.0, n_z * _bracket(report, theta) - t_e)


def rate_entropy_inequality(n_z: float, report: EntropyReport, theta: float,
                            eps_all: float) -> float:
    """Final random bits n_z * bracket - 2 log2(1/eps_all), clamped at 0."""
    if not (0.0 < eps_all <= 1.0):
        raise ParameterError(f"eps_all must lie in (0, 1], got {eps_all}")
    return max(0.0, n_z * _bracket(report, theta) - 2.0 * math.log2(1.0 / eps_all))


def rate_infinite_length(n_z: float, report: EntropyReport) -> float:
    """Asymptotic bits n_z * bracket(theta=0) with no subtraction, clamped at 0."""
    return max(0.0, n_z * _bracket(report, 0.0))


def legacy_rate_detected(n_z_detected: float, e_bx: float, theta: float,
                         t_e: float) -> float:
    """Diagnostic n'_z [1 - h(e_bx + theta)] - t_e on detected-pulse counts.

    Kept for comparison with the simpler detected-count accounting; the
    bracket-based rates above are authoritative.
    """
    x = min(e_bx + theta, 0.5)
    return n_z_detected * (1.0 - binary_entropy(x)) - t_e


def composable_epsilon(eps_d: float, eps_e: float, t_e: float) -> float:
    """Composable security parameter sqrt(s(2-s)), s = eps_d + eps_e + 2^-t_e."""
    for name, v in (("eps_d", eps_d), ("eps_e", eps_e)):
        if v < 0.0:
            raise ParameterError(f"{name} must be >= 0, got {v}")
    s = eps_d + eps_e + 2.0**-t_e
    if s > 1.0:
        raise BudgetError(f"failure budget eps_d + eps_e + 2^-t_e = {s} exceeds 1")
    return math.sqrt(s * (2.0 - s))


# ---------------------------------------------------------------------------
# Minimization over monitored vacuum-probability boxes


def _worst_eq_arm(det_plus: DetectorParams, tau_plus_iv: Tuple[float, float],
                  det_minus: DetectorParams, tau_minus_iv: Tuple[float, float]) -> ArmState:
    # EQ grows when the "-" detector sees fewer vacua and the "+" detector more.
    return ArmState.from_detectors(det_plus, tau_plus_iv[1], det_minus, tau_minus_iv[0])


def _min_bracket_over_taus(det_0: DetectorParams, tau_0_iv: Tuple[float, float],
                           det_1: DetectorParams, tau_1_iv: Tuple[float, float],
                           x_arm: ArmState, theta: float,
                           grid_points: int = 64) -> float:
    """Minimum bracket over the (tau_0, tau_1) box with a fixed check arm.

    Endpoints dominate in every regime tested; the grid guards non-monotone
    corners.
    """
    best = math.inf
    grid_0 = np.linspace(tau_0_iv[0], tau_0_iv[1], grid_points)
    grid_1 = np.linspace(tau_1_iv[0], tau_1_iv[1], grid_points)
    for t0 in grid_0:
        for t1 in grid_1:
            z_arm = ArmState.from_detectors(det_0, float(t0), det_1, float(t1))
            report = make_entropy_report(z_arm, x_arm)
            best = min(best, _bracket(report, theta))
    return best


def hmin_with_tau_uncertainty(det_0: DetectorParams, tau_0: float,
                              det_1: DetectorParams, tau_1: float,
                              det_plus: DetectorParams, tau_plus: float,
                              det_minus: DetectorParams, tau_minus: float,
                              delta: float, grid_points: int = 64) -> float:
    """Worst-case per-pulse min-entropy over the Hoeffding box of radius delta."""
    x_arm = _worst_eq_arm(det_plus, clipped_interval(tau_plus, delta),
                          det_minus, clipped_interval(tau_minus, delta))
    return _min_bracket_over_taus(det_0, clipped_interval(tau_0, delta),
                                  det_1, clipped_interval(tau_1, delta),
                                  x_arm, 0.0, grid_points)


@dataclass(frozen=True)
class RateReport:
    """Certified output of one parameter point."""

    method: str
    theta: float
    entropy: EntropyReport
    random_bits: float
    final_bits: float
    zeta: float
    n_z: float
    n_x: float
    total_pulses: float

    @property
    def per_pulse(self) -> float:
        return self.random_bits / self.total_pulses

    @property
    def final_per_pulse(self) -> float:
        return self.final_bits / self.total_pulses

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["entropy"] = self.entropy.to_dict()
        d["per_pulse"] = self.per_pulse
        d["final_per_pulse"] = self.final_per_pulse
        return d


def final_rate(security: SecurityParams,
               det_0: DetectorParams, tau_0: float,
               det_1: DetectorParams, tau_1: float,
               det_plus: DetectorParams, tau_plus: float,
               det_minus: DetectorParams, tau_minus: float,
               delta_d: float, grid_points: int = 64) -> RateReport:
    """Certified rate minimized over the monitored vacuum-probability box.

    The deviation theta comes from the random-sampling bound at the worst-case
    check-arm corner; the bracket is then minimized over the generation-arm
    box and t_e subtracted.  An infeasible theta yields zero bits.
    """
    if delta_d < 0.0:
        raise ParameterError(f"delta_d must be >= 0, got {delta_d}")
    x_arm = _worst_eq_arm(det_plus, clipped_interval(tau_plus, delta_d),
                          det_minus, clipped_interval(tau_minus, delta_d))
    point = entropy_report_from_taus(det_0, tau_0, det_1, tau_1,
                                     det_plus, tau_plus, det_minus, tau_minus)
    worst = make_entropy_report(
        ArmState.from_detectors(det_0, tau_0, det_1, tau_1), x_arm)
    zeta = composable_epsilon(security.eps_d, security.eps_e, security.t_e)
    try:
        theta = theta_random_sampling(worst.eq, security.x_fraction,
                                      security.total_pulses, security.eps_e)
    except InfeasibleError:
        return RateReport(method="random_sampling", theta=math.nan, entropy=point,
                          random_bits=0.0, final_bits=0.0, zeta=zeta,
                          n_z=security.n_z, n_x=security.n_x,
                          total_pulses=security.total_pulses)
    random_bits = rate_random_sampling(security.n_z, point, theta, security.t_e)
    min_bracket = _min_bracket_over_taus(det_0, clipped_interval(tau_0, delta_d),
                                         det_1, clipped_interval(tau_1, delta_d),
                                         x_arm, theta, grid_points)
    final_bits = max(0.0, security.n_z * min_bracket - security.t_e)
    return RateReport(method="random_sampling", theta=theta, entropy=point,
                      random_bits=random_bits, final_bits=final_bits, zeta=zeta,
                      n_z=security.n_z, n_x=security.n_x,
                      total_pulses=security.total_pulses)


# ---------------------------------------------------------------------------
# The source -> monitor -> attenuator -> measurement chain of the rate curves


@dataclass(frozen=True)
class RateScenario:
    """Coherent source of mean ``nu`` behind the distribution monitor.

    The monitor splitter keeps ``eta_bs`` of the light and its balance
    attenuation (1-eta_bs)/eta_bs * eta_det follows, so the distribution
    entering the variable attenuator equals the monitored one.
    """

    det_0: DetectorParams
    det_1: DetectorParams
    det_plus: DetectorParams
    det_minus: DetectorParams
    security: SecurityParams = field(default_factory=SecurityParams)
    nu: float = 50.0
    eta_bs: float = DEFAULT_ETA_BS
    eta_det: float = DEFAULT_ETA_DET
    source: PhotonDistribution = None

    def __post_init__(self):
        if self.nu < 0.0:
            raise ParameterError(f"nu must be >= 0, got {self.nu}")
        if self.source is None:
            object.__setattr__(self, "source", poisson_distribution(self.nu))

    def transmittance(self, loss_db: float) -> float:
        """Fixed monitor chain times the variable attenuator 10^(-dB/10)."""
        if loss_db < 0.0:
            raise ParameterError(f"loss must be >= 0 dB, got {loss_db}")
        t0 = monitor_attenuation(self.eta_bs, self.eta_det)
        return self.eta_bs * t0 * 10.0 ** (-loss_db / 10.0)

    def taus(self, loss_db: float):
        return measurement_taus(
            self.source,
            eta_0=self.det_0.efficiency,
            eta_1=self.det_1.efficiency,
            eta_plus=self.det_plus.efficiency,
            eta_minus=self.det_minus.efficiency,
            misalignment=self.security.misalignment,
            transmittance=self.transmittance(loss_db),
        )

    def entropy(self, loss_db: float) -> EntropyReport:
        t = self.taus(loss_db)
        return entropy_report_from_taus(self.det_0, t.tau_0, self.det_1, t.tau_1,
                                        self.det_plus, t.tau_plus,
                                        self.det_minus, t.tau_minus)

    def rates(self, loss_db: float) -> Dict[str, float]:
        """Bit counts of all three bounding methods at one attenuation."""
        sec = self.security
        report = self.entropy(loss_db)
        try:
            th_rs = theta_random_sampling(report.eq, sec.x_fraction,
                                          sec.total_pulses, sec.eps_e)
            r_rs = rate_random_sampling(sec.n_z, report, th_rs, sec.t_e)
        except (InfeasibleError, ParameterError):
            r_rs = 0.0
        th_ei = theta_entropy_inequality(sec.n_z, sec.n_x, sec.eps_all)
        r_ei = rate_entropy_inequality(sec.n_z, report, th_ei, sec.eps_all)
        r_il = rate_infinite_length(sec.n_z, report)
        return {"random_sampling": r_rs, "entropy_inequality": r_ei,
                "infinite_length": r_il}

    def rate_report(self, loss_db: float, method: str = "random_sampling",
                    monitor_samples: Optional[int] = None) -> RateReport:
        """Full report at one attenuation; a sample count adds the Hoeffding box."""
        sec = self.security
        report = self.entropy(loss_db)
        zeta = composable_epsilon(sec.eps_d, sec.eps_e, sec.t_e)
        if method == "random_sampling":
            if monitor_samples is not None:
                delta = hoeffding_delta(monitor_samples, sec.eps_d)
                t = self.taus(loss_db)
                return final_rate(sec, self.det_0, t.tau_0, self.det_1, t.tau_1,
                                  self.det_plus, t.tau_plus,
                                  self.det_minus, t.tau_minus, delta)
            try:
                theta = theta_random_sampling(report.eq, sec.x_fraction,
                                              sec.total_pulses, sec.eps_e)
                bits = rate_random_sampling(sec.n_z, report, theta, sec.t_e)
            except (InfeasibleError, ParameterError):
                theta, bits = math.nan, 0.0
        elif method == "entropy_inequality":
            theta = theta_entropy_inequality(sec.n_z, sec.n_x, sec.eps_all)
            bits = rate_entropy_inequality(sec.n_z, report, theta, sec.eps_all)
        elif method == "infinite_length":
            theta = 0.0
            bits = rate_infinite_length(sec.n_z, report)
        else:
            raise ParameterError(f"unknown method {method!r}")
        return RateReport(method=method, theta=theta, entropy=report,
                          random_bits=bits, final_bits=bits, zeta=zeta,
                          n_z=sec.n_z, n_x=sec.n_x, total_pulses=sec.total_pulses)


def scenario_from_params(params: dict) -> RateScenario:
    """Build a :class:`RateScenario` from flat sweep-specification keys."""
    known = {"N", "q_x", "eps_all", "eps_d", "eps_e", "t_e", "e_q", "v", "e_d",
             "eta", "eta_bs", "eta_det", "nu", "p_hat", "omega", "window_depth"}
    unknown = set(params) - known
    if unknown:
        raise ParameterError(f"unknown sweep parameters: {sorted(unknown)}")
    security = SecurityParams(
        total_pulses=float(params.get("N", DEFAULT_TOTAL_PULSES)),
        x_fraction=float(params.get("q_x", DEFAULT_X_FRACTION)),
        eps_all=float(params.get("eps_all", 2.0 * DEFAULT_EPS_TERM)),
        eps_d=float(params.get("eps_d", DEFAULT_EPS_TERM)),
        eps_e=float(params.get("eps_e", DEFAULT_EPS_TERM)),
        t_e=int(params.get("t_e", DEFAULT_T_E)),
        misalignment=float(params.get("e_q", DEFAULT_MISALIGNMENT)),
        z_rate=float(params.get("v", DEFAULT_Z_RATE)),
    )
    eta = float(params.get("eta", 0.1))
    e_d = float(params.get("e_d", 6e-7))
    p_hat = float(params.get("p_hat", 0.0))
    if p_hat > 0.0:
        depth = params.get("window_depth")
        if depth is not None:
            depth = int(depth)
        spec = AfterpulseSpec.exponential_from_rate(
            p_hat, float(params.get("omega", 0.001)), depth)
    else:
        spec = AfterpulseSpec.none()
    dets = {label: DetectorParams(efficiency=eta, dark_rate=e_d, afterpulse=spec,
                                  label=label) for label in ("0", "1", "+", "-")}
    return RateScenario(
        det_0=dets["0"], det_1=dets["1"], det_plus=dets["+"], det_minus=dets["-"],
        security=security,
        nu=float(params.get("nu", 50.0)),
        eta_bs=float(params.get("eta_bs", DEFAULT_ETA_BS)),
        eta_det=float(params.get("eta_det", DEFAULT_ETA_DET)),
    )


def run_sweep(spec: dict) -> List[RateReport]:
    """Evaluate a sweep specification into one report per point.

    The specification carries {"sweep_var": "voa_loss_db", "from": a, "to": b,
    "points": n, "params": {...}, "method": ...}; points are evaluated in
    order and independently.
    """
    var = spec.get("sweep_var", "voa_loss_db")
    if var != "voa_loss_db":
        raise ParameterError(f"unsupported sweep variable {var!r}")
    lo = float(spec.get("from", 0.0))
    hi = float(spec.get("to", DEFAULT_LOSS_MAX_DB))
    points = int(spec.get("points", 200))
    if points < 1:
        raise ParameterError(f"points must be >= 1, got {points}")
    if hi < lo:
        raise ParameterError(f"sweep range is empty: from {lo} to {hi}")
    method = spec.get("method", "random_sampling")
    scenario = scenario_from_params(spec.get("params", {}))
    losses = np.linspace(lo, hi, points)
    return [scenario.rate_report(float(loss), method=method) for loss in losses]
