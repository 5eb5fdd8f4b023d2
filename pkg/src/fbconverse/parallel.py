"""Parallel Gaussian channels with feedback: water-filling and the sqrt(n) converse."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from fbconverse.awgn_bounds import capacity, dispersion
from fbconverse.errors import DomainError
from fbconverse.scalar_stats import LOG2E


@dataclass(frozen=True)
class ParallelSpec:
    noise_variances: tuple[float, ...]
    total_power: float

    def __post_init__(self):
        object.__setattr__(self, "noise_variances", tuple(float(s) for s in self.noise_variances))
        if len(self.noise_variances) < 1:
            raise DomainError("need at least one channel")
        if any(not s > 0 for s in self.noise_variances):
            raise DomainError("noise variances must be positive")
        if not self.total_power > 0:
            raise DomainError(f"total power must be positive, got {self.total_power}")

    @property
    def L(self) -> int:
        return len(self.noise_variances)


@dataclass(frozen=True)
class PowerAllocation:
    water_level: float
    powers: tuple[float, ...]

    def kkt_residuals(self, spec: ParallelSpec) -> tuple[float, float]:
        """(|sum P_l - P|, max_l |P_l - max(0, level - sigma_l^2)|)."""
        total = abs(math.fsum(self.powers) - spec.total_power)
        per = max(abs(p - max(0.0, self.water_level - s)) for p, s in zip(self.powers, spec.noise_variances))
        return total, per


@dataclass
class ParallelBoundReport:
    n: int
    epsilon: float
    log_m_bound: float
    water_level: float
    powers: tuple[float, ...]
    constants: dict = field(default_factory=dict)
    kind: str = "theorem2_bound"

    def to_dict(self) -> dict:
        c = self.constants
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "kind": self.kind,
            "log_m_bound_bits": self.log_m_bound,
            "threshold_log_xi_bits": c.get("threshold_log_xi"),
            "constants": {
                "kappa_tilde": c["kappa_tilde"],
                "kappa_bar": c["kappa_bar"],
                "kappa": c["kappa"],
                "C_L": c["C_L"],
                "V_L": c["V_L"],
            },
            "water_level": self.water_level,
            "powers": list(self.powers),
            "kappa_tilde": c["kappa_tilde"],
            "kappa_bar": c["kappa_bar"],
            "chain_holds": c.get("chain_holds"),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _as_spec(spec) -> ParallelSpec:
    if isinstance(spec, ParallelSpec):
        return spec
    sigmas, power = spec
    return ParallelSpec(tuple(sigmas), power)


def _allocated(level, variances):
    return math.fsum(max(0.0, level - s) for s in variances)


def waterfill(spec: ParallelSpec) -> PowerAllocation:
    """Water-filling allocation ``P_l = max(0, level - sigma_l^2)`` with ``sum P_l = P``.

    Bisection on the water level brackets the active set; the level is then
    recomputed in closed form on that set, which makes the power sum exact
    up to rounding.
    """
    spec = _as_spec(spec)
    var = spec.noise_variances
    P = spec.total_power
    lo, hi = min(var), max(var) + P
    tol = 1e-12 * max(1.0, P)
    level = 0.5 * (lo + hi)
    for _ in range(400):
        level = 0.5 * (lo + hi)
        gap = _allocated(level, var) - P
        if abs(gap) < tol:
            break
        if gap < 0:
            lo = level
        else:
            hi = level

    active = [s for s in var if s < level]
    exact = (P + math.fsum(active)) / len(active)
    if all((s < exact) == (s < level) for s in var):
        level = exact
    powers = tuple(max(0.0, level - s) for s in var)
    return PowerAllocation(water_level=level, powers=powers)


def capacity_parallel(spec: ParallelSpec) -> float:
    spec = _as_spec(spec)
    alloc = waterfill(spec)
    return math.fsum(capacity(p / s) if p > 0 else 0.0 for p, s in zip(alloc.powers, spec.noise_variances))


def dispersion_parallel(spec: ParallelSpec) -> float:
    spec = _as_spec(spec)
    alloc = waterfill(spec)
    return math.fsum(dispersion(p / s) if p > 0 else 0.0 for p, s in zip(alloc.powers, spec.noise_variances))


def variance_envelope(spec: ParallelSpec) -> tuple[float, float]:
    """Bounds (kappa_tilde, kappa_bar) with ``n*kappa_tilde < Var[sum U_k] <= n*kappa_bar``."""
    spec = _as_spec(spec)
    alloc = waterfill(spec)
    P = spec.total_power
    kappa_tilde = 4.0 * min(spec.noise_variances) * P
    kappa_bar = 2.0 * math.fsum(p * p for p in alloc.powers) + 4.0 * max(spec.noise_variances) * P
    return kappa_tilde, kappa_bar


def parallel_kappa(spec: ParallelSpec, epsilon: float) -> float:
    spec = _as_spec(spec)
    _, kappa_bar = variance_envelope(spec)
    level = waterfill(spec).water_level
    return (
        LOG2E / level * math.sqrt(2.0 * kappa_bar / (1.0 - epsilon))
        - math.log2((1.0 - epsilon) / 2.0)
        + capacity_parallel(spec)
    )


def theorem2_bound(spec: ParallelSpec, n: int, epsilon: float) -> ParallelBoundReport:
    """Chebyshev converse with the code-dependent variance replaced by ``n * kappa_bar``.

    Bounds ``log2 M*_fb(n - 1, epsilon, P, L)``.
    """
    spec = _as_spec(spec)
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    alloc = waterfill(spec)
    kappa_tilde, kappa_bar = variance_envelope(spec)
    c_l = capacity_parallel(spec)
    log_xi = n * c_l + LOG2E / (2.0 * alloc.water_level) * math.sqrt(2.0 / (1.0 - epsilon) * n * kappa_bar)
    bound = log_xi - math.log2((1.0 - epsilon) / 2.0)
    kappa = parallel_kappa(spec, epsilon)
    chain_rhs = (n - 1) * c_l + kappa * math.sqrt(n - 1)
    return ParallelBoundReport(
        n=n,
        epsilon=epsilon,
        log_m_bound=bound,
        water_level=alloc.water_level,
        powers=alloc.powers,
        constants={
            "kappa_tilde": kappa_tilde,
            "kappa_bar": kappa_bar,
            "kappa": kappa,
            "C_L": c_l,
            "V_L": dispersion_parallel(spec),
            "threshold_log_xi": log_xi,
            "chain_holds": bound <= chain_rhs + 1e-9 * max(1.0, abs(chain_rhs)),
        },
    )


@dataclass
class StrongConverseReport:
    n: int
    capacity: float
    kappa_max: float
    gaps: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "C_L": self.capacity,
            "kappa_max": self.kappa_max,
            "gaps": {str(k): v for k, v in self.gaps.items()},
            "pass": self.passed,
        }


def strong_converse_check(spec: ParallelSpec, epsilons, n: int = 10 ** 6) -> StrongConverseReport:
    """Checks ``|bound(n)/n - C_L| <= kappa_max / sqrt(n)`` for every epsilon."""
    spec = _as_spec(spec)
    epsilons = list(epsilons)
    c_l = capacity_parallel(spec)
    kappa_max = max(parallel_kappa(spec, e) for e in epsilons)
    gaps = {e: theorem2_bound(spec, n, e).log_m_bound / n - c_l for e in epsilons}
    passed = all(abs(g) <= kappa_max / math.sqrt(n) for g in gaps.values())
    return StrongConverseReport(n=n, capacity=c_l, kappa_max=kappa_max, gaps=gaps, passed=passed)
