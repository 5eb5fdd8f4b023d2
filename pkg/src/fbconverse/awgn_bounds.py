"""Capacity, dispersion and converse bounds for the scalar AWGN channel with feedback.

All bounds are on ``log2 M``, the number of message bits a feedback code can
carry at a given blocklength and average error probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

from fbconverse.errors import DomainError
from fbconverse.scalar_stats import (
    LOG2E,
    llr_moments,
    normal_quantile,
    normal_quantile_derivative,
)

FINITE_N = "finite_n_converse"
KAPPA_FORM = "theorem1_kappa_form"
NORMAL_APPROX = "normal_approximation"
_CONSTANT_KEYS = ("sigma", "T", "kappa_bar", "kappa")


@dataclass(frozen=True)
class ScalarChannel:
    """AWGN channel with unit noise variance and peak power ``power``."""

    power: float

    def __post_init__(self):
        if not self.power > 0:
            raise DomainError(f"power must be positive, got {self.power}")


@dataclass(frozen=True)
class CapacityDispersion:
    capacity: float
    dispersion: float


@dataclass
class BoundReport:
    n: int
    epsilon: float
    kind: str
    log_m_bound: float
    threshold_log_xi: float | None = None
    constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "kind": self.kind,
            "log_m_bound_bits": self.log_m_bound,
            "threshold_log_xi_bits": self.threshold_log_xi,
            "constants": {**dict.fromkeys(_CONSTANT_KEYS), **self.constants},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _as_channel(ch) -> ScalarChannel:
    return ch if isinstance(ch, ScalarChannel) else ScalarChannel(float(ch))


def _check_eps(epsilon):
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")


def capacity(ch) -> float:
    """Shannon capacity ``0.5 log2(1 + P)`` in bits per channel use."""
    return 0.5 * math.log2(1.0 + _as_channel(ch).power)


def dispersion(ch) -> float:
    """Gaussian dispersion in bits^2 per channel use."""
    p = _as_channel(ch).power
    return p * (p + 2.0) * LOG2E ** 2 / (2.0 * (p + 1.0) ** 2)


def capacity_dispersion(ch) -> CapacityDispersion:
    return CapacityDispersion(capacity(ch), dispersion(ch))


@lru_cache(maxsize=256)
def _moments(power: float):
    return llr_moments(power)


def berry_esseen_slack(ch, n: int) -> float:
    """``2T / (sigma^3 sqrt(n))``, the probability added to epsilon by the converse."""
    m = _moments(_as_channel(ch).power)
    return 2.0 * m.third_abs / (m.sigma ** 3 * math.sqrt(n))


def min_admissible_blocklength(ch, epsilon: float) -> int:
    """Smallest ``n`` with ``epsilon + 2T/(sigma^3 sqrt(n)) < 1``."""
    _check_eps(epsilon)
    m = _moments(_as_channel(ch).power)
    ratio = m.third_abs / m.sigma ** 3
    n = max(1, math.floor((2.0 * ratio / (1.0 - epsilon)) ** 2))
    while epsilon + 2.0 * ratio / math.sqrt(n) >= 1.0:
        n += 1
    return n


def finite_n_converse(ch, n: int, epsilon: float) -> BoundReport:
    """Berry-Esseen converse before Taylor expansion.

    The value bounds ``log2 M*_fb(n - 1, epsilon, P)``: a code of length
    ``n - 1`` is first padded with one symbol that brings its energy to
    exactly ``nP``.
    """
    ch = _as_channel(ch)
    _check_eps(epsilon)
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    m = _moments(ch.power)
    be_ratio = m.third_abs / (m.sigma ** 3 * math.sqrt(n))
    level = epsilon + 2.0 * be_ratio
    if level >= 1.0:
        raise DomainError(
            f"blocklength too small for Berry-Esseen slack: epsilon + 2T/(sigma^3 sqrt(n)) = {level:.6g} >= 1"
        )
    log_xi = 0.5 * n * math.log2(1.0 + ch.power) + m.sigma * math.sqrt(n) * normal_quantile(level)
    return BoundReport(
        n=n,
        epsilon=epsilon,
        kind=FINITE_N,
        log_m_bound=float(log_xi - math.log2(be_ratio)),
        threshold_log_xi=float(log_xi),
        constants={"sigma": m.sigma, "T": m.third_abs, "kappa_bar": None, "kappa": None},
    )


def kappa_constants(ch, epsilon: float, min_blocklength: int | None = None) -> dict:
    """The n-independent constants of the third-order converse.

    The mean-value point of the quantile expansion lies in
    ``[epsilon, epsilon + 2T/(sigma^3 sqrt(n))]``; for every
    ``n >= min_blocklength`` that interval sits inside the one at
    ``min_blocklength``, so taking the sup of the quantile derivative there
    gives a constant valid for all such ``n``.  The quantile derivative is
    decreasing then increasing, so the sup sits at an endpoint.
    """
    ch = _as_channel(ch)
    _check_eps(epsilon)
    n0 = min_admissible_blocklength(ch, epsilon)
    if min_blocklength is not None:
        if min_blocklength < n0:
            raise DomainError(
                f"min_blocklength {min_blocklength} is below the smallest admissible n ({n0})"
            )
        n0 = min_blocklength
    m = _moments(ch.power)
    right = epsilon + berry_esseen_slack(ch, n0)
    sup_deriv = max(normal_quantile_derivative(epsilon), normal_quantile_derivative(right))
    kappa_bar = 2.0 * m.third_abs / m.sigma ** 2 * sup_deriv - math.log2(m.third_abs / m.sigma ** 3)
    # Shifting n -> n-1: sigma*sqrt(n)*q <= sigma*sqrt(n-1)*q + sigma*max(q, 0)
    # and 0.5*log2(n/(n-1)) <= 0.5 for n >= 2.
    q = float(normal_quantile(epsilon))
    kappa = kappa_bar + 0.5 * math.log2(1.0 + ch.power) + m.sigma * max(q, 0.0) + 0.5
    return {
        "sigma": m.sigma,
        "T": m.third_abs,
        "kappa_bar": float(kappa_bar),
        "kappa": float(kappa),
        "min_blocklength": n0,
        "taylor_interval": [epsilon, right],
    }


def theorem1_kappa_form(ch, n: int, epsilon: float, min_blocklength: int | None = None) -> BoundReport:
    """``nC + sqrt(nV) Q^-1(eps) + 0.5 log2 n + kappa``, an upper bound on ``log2 M*_fb(n, eps, P)``."""
    ch = _as_channel(ch)
    consts = kappa_constants(ch, epsilon, min_blocklength)
    value = (
        n * capacity(ch)
        + math.sqrt(n * dispersion(ch)) * normal_quantile(epsilon)
        + 0.5 * math.log2(n)
        + consts["kappa"]
    )
    return BoundReport(n=n, epsilon=epsilon, kind=KAPPA_FORM, log_m_bound=float(value), constants=consts)


def normal_approximation(ch, n: int, epsilon: float) -> BoundReport:
    """Reference curve ``nC + sqrt(nV) Q^-1(eps) + 0.5 log2 n`` with the O(1) term dropped.

    Not a bound.
    """
    ch = _as_channel(ch)
    _check_eps(epsilon)
    value = n * capacity(ch) + math.sqrt(n * dispersion(ch)) * normal_quantile(epsilon) + 0.5 * math.log2(n)
    return BoundReport(
        n=n,
        epsilon=epsilon,
        kind=NORMAL_APPROX,
        log_m_bound=float(value),
        constants={"sigma": math.sqrt(dispersion(ch)), "T": None, "kappa_bar": None, "kappa": None},
    )


def report_from_dict(d: dict) -> BoundReport:
    return BoundReport(
        n=d["n"],
        epsilon=d["epsilon"],
        kind=d["kind"],
        log_m_bound=d["log_m_bound_bits"],
        threshold_log_xi=d["threshold_log_xi_bits"],
        constants=dict(d["constants"]),
    )


__all__ = [
    "BoundReport",
    "CapacityDispersion",
    "ScalarChannel",
    "berry_esseen_slack",
    "capacity",
    "capacity_dispersion",
    "dispersion",
    "finite_n_converse",
    "kappa_constants",
    "min_admissible_blocklength",
    "normal_approximation",
    "report_from_dict",
    "theorem1_kappa_form",
]
