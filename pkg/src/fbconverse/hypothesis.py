"""Neyman-Pearson type-II error ``beta_delta(p || q)`` and the meta-converse.

``beta_delta`` is the smallest q-probability of accepting p among
(randomized) tests that accept p with probability at least ``delta`` under p.
Optimal tests threshold the likelihood ratio, randomizing on the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from fbconverse.errors import DomainError
from fbconverse.feedback_sim import CHUNK, _run_chunks, chunk_rng, spherical_codebook
from fbconverse.scalar_stats import (
    LOG2E,
    SumStatisticLaw,
    noncentral_chisq_cdf,
    noncentral_chisq_logcdf,
)


@dataclass(frozen=True)
class ThresholdTest:
    """Accept p when ``log LR > log_lr_threshold``; at equality accept with prob ``randomization``."""

    log_lr_threshold: float
    randomization: float

    def __post_init__(self):
        if not 0.0 <= self.randomization <= 1.0:
            raise DomainError("randomization must lie in [0, 1]")


@dataclass(frozen=True)
class FiniteDistPair:
    p: tuple
    q: tuple

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise DomainError("p and q must be 1-D and of equal length")
        if np.any(p < 0) or np.any(q < 0):
            raise DomainError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12 or abs(q.sum() - 1.0) > 1e-12:
            raise DomainError("p and q must each sum to 1 within 1e-12")
        object.__setattr__(self, "p", tuple(p.tolist()))
        object.__setattr__(self, "q", tuple(q.tolist()))


@dataclass(frozen=True)
class AwgnPair:
    """n uses of the unit-noise AWGN channel at input ``(sqrt P, ..., sqrt P)`` versus i.i.d. N(0, 1+P)."""

    n: int
    power: float

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n}")
        if not self.power > 0:
            raise DomainError(f"power must be positive, got {self.power}")


def _log_ratio(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q > 0, np.log(np.where(p > 0, p, 1.0)) - np.log(np.where(q > 0, q, 1.0)), np.inf)
    return np.where(p > 0, r, -np.inf)


def beta_finite(pair: FiniteDistPair, delta: float) -> tuple[float, ThresholdTest]:
    """Exact ``beta_delta`` for distributions on a finite alphabet.

    Outcomes are taken in decreasing likelihood-ratio order until the
    p-mass reaches ``delta``; the boundary ratio class is split by
    randomization.
    """
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"delta must lie in [0, 1], got {delta}")
    p = np.asarray(pair.p)
    q = np.asarray(pair.q)
    if delta == 0.0:
        return 0.0, ThresholdTest(math.inf, 0.0)
    lr = _log_ratio(p, q)
    keep = (p > 0) | (q > 0)
    levels = np.unique(lr[keep])[::-1]
    taken_p = 0.0
    beta = 0.0
    for level in levels:
        cls = keep & (lr == level)
        cp = math.fsum(p[cls])
        cq = math.fsum(q[cls])
        if taken_p + cp >= delta or cp == 0.0 and level == -np.inf:
            frac = 1.0 if cp == 0.0 else min(1.0, (delta - taken_p) / cp)
            return min(1.0, beta + frac * cq), ThresholdTest(float(level), frac)
        taken_p += cp
        beta += cq
    # delta exceeds the p-mass reached (rounding); accept everything.
    return min(1.0, beta), ThresholdTest(-math.inf, 1.0)


def awgn_llr_laws(n: int, power: float) -> tuple[SumStatisticLaw, SumStatisticLaw]:
    """Laws of ``log2 p(Y)/q(Y)`` under p (channel at the all-sqrt(P) input) and under q = N(0, 1+P)^n.

    Completing the square in each summand: under p the LLR in nats is
    ``n/2 + (n/2) ln(1+P) - P/(2(1+P)) Q0`` with ``Q0 ~ chi2'(n, n/P)``;
    under q it is ``n/2 + (n/2) ln(1+P) - (P/2) Q1`` with
    ``Q1 ~ chi2'(n, n(1+P)/P)``.
    """
    AwgnPair(n, power)  # validates
    offset = LOG2E * (0.5 * n + 0.5 * n * math.log(1.0 + power))
    null = SumStatisticLaw(n=n, power=power, offset=offset, scale=-LOG2E * power / (2.0 * (1.0 + power)),
                           dof=n, noncentrality=n / power)
    alt = SumStatisticLaw(n=n, power=power, offset=offset, scale=-LOG2E * power / 2.0,
                          dof=n, noncentrality=n * (1.0 + power) / power)
    return null, alt


def _chi2_quantile(level, dof, noncentrality, tol=1e-10):
    """Bisection for ``F(q) = level`` on the noncentral chi-square CDF."""
    mean = dof + noncentrality
    sd = math.sqrt(2.0 * (dof + 2.0 * noncentrality))
    lo, hi = 0.0, mean + 40.0 * sd
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        f = float(noncentral_chisq_cdf(mid, dof, noncentrality))
        if abs(f - level) < tol:
            return mid
        if f < level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def beta_awgn_test(n: int, power: float, delta: float) -> tuple[float, ThresholdTest]:
    """``(log2 beta_delta, optimal test)`` for the pair described by :class:`AwgnPair`."""
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    null, alt = awgn_llr_laws(n, power)
    # LLR > gamma  <=>  Q0 < q0  <=>  Q1 < q0 / (1 + P)
    q0 = _chi2_quantile(delta, n, null.noncentrality)
    log_beta = noncentral_chisq_logcdf(q0 / (1.0 + power), n, alt.noncentrality)
    gamma_bits = null.offset + null.scale * q0
    return log_beta * LOG2E, ThresholdTest(gamma_bits / LOG2E, 0.0)


def beta_awgn(n: int, power: float, delta: float) -> float:
    """``log2 beta_delta`` between the n-use AWGN law at the symmetric codeword and N(0, 1+P)^n."""
    return beta_awgn_test(n, power, delta)[0]


def beta_lower_bound(target, delta: float, xi: float | None = None, log2_xi: float | None = None) -> float:
    """Lower bound ``(delta - Pr_p{p/q >= xi}) / xi`` on ``beta_delta``.

    ``target`` is a :class:`FiniteDistPair` or an :class:`AwgnPair`.  Give
    ``log2_xi`` instead of ``xi`` when ``xi`` would overflow.
    """
    if (xi is None) == (log2_xi is None):
        raise DomainError("give exactly one of xi and log2_xi")
    if xi is not None:
        if not xi > 0:
            raise DomainError(f"xi must be positive, got {xi}")
        log2_xi = math.log2(xi)
    if isinstance(target, FiniteDistPair):
        p = np.asarray(target.p)
        ratio = xi if xi is not None else 2.0 ** log2_xi
        # p/q >= xi compared without division so ties at xi are kept exactly
        tail = math.fsum(p[(p > 0) & (p >= ratio * np.asarray(target.q))])
    elif isinstance(target, AwgnPair):
        null, _ = awgn_llr_laws(target.n, target.power)
        tail = 1.0 - float(null.cdf(log2_xi))
    else:
        raise TypeError(f"unsupported target {type(target).__name__}")
    return (delta - tail) * 2.0 ** (-log2_xi)


# Meta-converse on small simulated codes.


@dataclass(frozen=True)
class ToyCode:
    """Non-adaptive codebook (rows are codewords) decoded by minimum distance."""

    codebook: np.ndarray
    power: float

    @property
    def M(self) -> int:
        return self.codebook.shape[0]

    @property
    def n(self) -> int:
        return self.codebook.shape[1]

    def decode(self, y: np.ndarray) -> np.ndarray:
        c = self.codebook
        return np.argmax(y @ c.T - 0.5 * np.sum(c * c, axis=1), axis=1)


def antipodal_code(n: int, power: float) -> ToyCode:
    row = np.full(n, math.sqrt(power))
    return ToyCode(np.stack([row, -row]), power)


def spherical_code(M: int, n: int, power: float, seed: int = 0) -> ToyCode:
    return ToyCode(spherical_codebook(M, n, power, seed), power)


def single_message_code(n: int, power: float) -> ToyCode:
    return ToyCode(np.full((1, n), math.sqrt(power)), power)


@dataclass
class MetaConverseReport:
    M: int
    n: int
    P: float
    trials: int
    alpha_hat: float
    log2_beta: float
    max_ci_width: float
    status: str

    @property
    def log2_M(self) -> float:
        return math.log2(self.M)

    @property
    def inv_beta(self) -> float:
        return 2.0 ** (-self.log2_beta)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "n": self.n,
            "P": self.P,
            "trials": self.trials,
            "alpha_hat": self.alpha_hat,
            "log2_beta": self.log2_beta,
            "log2_M": self.log2_M,
            "inv_beta": self.inv_beta,
            "max_ci_width": self.max_ci_width,
            "status": self.status,
            "pass": self.passed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _metaconverse_chunk(code, seed, chunk, size, start):
    rng = chunk_rng(seed, chunk)
    M, n = code.M, code.n
    w = (start + np.arange(size)) % M
    y = code.codebook[w] + rng.standard_normal((size, n))
    w_hat = code.decode(y)
    joint = np.bincount(w * M + w_hat, minlength=M * M)
    y_ref = rng.standard_normal((size, n)) * math.sqrt(1.0 + code.power)
    ref = np.bincount(code.decode(y_ref), minlength=M)
    return joint, ref


def metaconverse_check(code: ToyCode, trials: int, seed: int, workers: int = 1,
                       max_ci_width: float = 0.02, slack: float = 1e-9) -> MetaConverseReport:
    """Estimate ``p_{W, W_hat}`` and the reference decoder law, then test ``M <= 1/beta``.

    Messages are assigned round-robin so the message marginal is exactly
    uniform.  The reference law is the decoder applied to i.i.d.
    N(0, 1+P) outputs.  A cell whose 95% interval is wider than
    ``max_ci_width`` makes the result inconclusive.
    """
    M = code.M
    if trials < M:
        raise DomainError("need at least one trial per message")
    trials -= trials % M
    parts = _run_chunks(lambda c, size: _metaconverse_chunk(code, seed, c, size, c * CHUNK), trials, workers)
    joint = sum(p[0] for p in parts).reshape(M, M) / trials
    ref = sum(p[1] for p in parts) / trials

    alpha_hat = 1.0 - float(np.trace(joint))
    q = np.outer(np.full(M, 1.0 / M), ref)
    pair = FiniteDistPair(joint.ravel() / joint.sum(), q.ravel() / q.sum())
    beta, _ = beta_finite(pair, 1.0 - alpha_hat)
    log2_beta = math.log2(beta) if beta > 0 else -math.inf

    z = stats.norm.ppf(0.975)
    cells = np.concatenate([joint.ravel(), ref])
    width = float(np.max(2.0 * z * np.sqrt(cells * (1.0 - cells) / trials)))
    if width > max_ci_width:
        status = "inconclusive"
    else:
        status = "pass" if math.log2(M) <= -log2_beta + slack else "fail"
    return MetaConverseReport(M=M, n=code.n, P=code.power, trials=trials, alpha_hat=alpha_hat,
                              log2_beta=log2_beta, max_ci_width=width, status=status)
