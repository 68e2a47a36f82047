import pytest

from siqrng import AfterpulseSpec, DetectorParams


def brute_force_composition_total(coefficients, windows):
    """Independent oracle: enumerate every integer composition of k <= windows
    and sum the coefficient products."""
    total = 0.0
    for k in range(1, windows + 1):
        for parts in compositions(k):
            prod = 1.0
            for part in parts:
                c = coefficients[part - 1] if part <= len(coefficients) else 0.0
                prod *= c
            total += prod
    return total


def compositions(k):
    """All ordered tuples of positive integers summing to k."""
    if k == 0:
        yield ()
        return
    for first in range(1, k + 1):
        for rest in compositions(k - first):
            yield (first,) + rest


@pytest.fixture
def plain_detector():
    return DetectorParams(efficiency=0.1, dark_rate=6e-7,
                          afterpulse=AfterpulseSpec.none(), label="0")


def make_detectors(eta=0.1, e_d=6e-7, spec=None, eta_1=None):
    spec = spec if spec is not None else AfterpulseSpec.none()
    return (
        DetectorParams(efficiency=eta, dark_rate=e_d, afterpulse=spec, label="0"),
        DetectorParams(efficiency=eta_1 if eta_1 is not None else eta,
                       dark_rate=e_d, afterpulse=spec, label="1"),
        DetectorParams(efficiency=eta, dark_rate=e_d, afterpulse=spec, label="+"),
        DetectorParams(efficiency=eta, dark_rate=e_d, afterpulse=spec, label="-"),
    )
