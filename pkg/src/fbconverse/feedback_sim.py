"""Monte Carlo simulation of feedback codes over AWGN channels.

Any feedback code whose codewords have energy exactly ``nP`` induces the
same law on the statistic ``sum_k lambda(X_k, Y_k)`` with
``lambda(x, y) = -P (y - x)^2 + 2 x (y - x)``.  The simulator runs a few
encoders, some genuinely adaptive, and compares what they produce against
the closed-form law.

Randomness is split into fixed-size chunks of trials, and chunk ``c`` draws
from a Philox stream keyed by ``(seed, c)``.  The partition does not depend
on the worker count, so results are bit-identical for any ``workers``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from fbconverse.errors import DomainError
from fbconverse.parallel import _as_spec, waterfill
from fbconverse.scalar_stats import (
    LOG2E,
    closed_form_mgf,
    llr_moments,
    normal_cdf,
    sum_statistic_law,
)

CHUNK = 1 << 14
SEED_MASK = (1 << 64) - 1

CONSTANT = "constant_sqrtP"
SPHERICAL = "random_spherical"
ADAPTIVE = "adaptive_toy"
VIOLATING = "power_violating"
ENCODER_KINDS = (CONSTANT, SPHERICAL, ADAPTIVE, VIOLATING)
ALIASES = {
    "constant": CONSTANT,
    "spherical": SPHERICAL,
    "adaptive": ADAPTIVE,
    "power-violating": VIOLATING,
}


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based stream for one chunk of trials."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(int(chunk),))
    return np.random.Generator(np.random.Philox(ss))


def _chunks(trials):
    return [(c, min(CHUNK, trials - c * CHUNK)) for c in range(-(-trials // CHUNK))]


def _run_chunks(fn, trials, workers):
    jobs = _chunks(trials)
    if workers <= 1 or len(jobs) == 1:
        return [fn(c, size) for c, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


@dataclass(frozen=True)
class EncoderSpec:
    """Which encoder to run.

    ``parameters`` is kind specific: ``codebook_seed`` for the spherical
    codebook, ``gain`` (default 0.5) for the adaptive encoder's feedback
    sensitivity.
    """

    kind: str
    message_count: int = 1
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in ENCODER_KINDS:
            raise DomainError(f"unknown encoder kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.message_count < 1:
            raise DomainError("message_count must be >= 1")


@dataclass(frozen=True)
class SimTrace:
    seed: int
    trial: int
    n: int
    lambda_sum: float
    u_sum: float
    power_residual: float


@dataclass
class SimBatch:
    encoder: EncoderSpec
    n: int
    power: float
    seed: int
    lambda_sum: np.ndarray
    u_sum: np.ndarray
    power_residual: np.ndarray
    budget_clamps: int = 0

    @property
    def trials(self) -> int:
        return len(self.lambda_sum)

    @property
    def empirical_cdf(self) -> np.ndarray:
        return np.sort(self.lambda_sum)

    def trace(self, i: int) -> SimTrace:
        return SimTrace(self.seed, i, self.n, float(self.lambda_sum[i]), float(self.u_sum[i]),
                        float(self.power_residual[i]))

    @property
    def traces(self) -> list[SimTrace]:
        return [self.trace(i) for i in range(self.trials)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_csv(self, buf)
        return buf.getvalue()


def u_from_lambda(lambda_sum, n, power):
    """Bits-valued sum of the centred LLR summands, given the lambda-sum."""
    return LOG2E / (2.0 * (1.0 + power)) * (np.asarray(lambda_sum) + n * power)


def spherical_codebook(message_count, n, power, codebook_seed=0):
    rng = np.random.default_rng(codebook_seed)
    g = rng.standard_normal((message_count, n))
    return g * (math.sqrt(n * power) / np.linalg.norm(g, axis=1, keepdims=True))


def _message_signs(w, n, message_count):
    """+-1 pattern spelling out the bits of each message, cycled over time."""
    bits = max(1, (message_count - 1).bit_length())
    k = np.arange(n) % bits
    return 1.0 - 2.0 * ((w[:, None] >> k[None, :]) & 1)


def _finish(x_head, last_sign, budget):
    """Append the final symbol that tops the energy up to ``budget`` exactly."""
    energy = np.einsum("ij,ij->i", x_head, x_head)
    last = last_sign * np.sqrt(np.maximum(budget - energy, 0.0))
    return np.concatenate([x_head, last[:, None]], axis=1)


def _simulate_chunk(enc, n, P, seed, chunk, size, codebook):
    rng = chunk_rng(seed, chunk)
    w = rng.integers(0, enc.message_count, size)
    z = rng.standard_normal((size, n))
    budget = n * P
    clamps = 0

    if enc.kind == CONSTANT:
        x = np.full((size, n), math.sqrt(P))
        x = _finish(x[:, :-1], 1.0, budget)
    elif enc.kind == SPHERICAL:
        cw = codebook[w]
        x = _finish(cw[:, :-1], np.where(cw[:, -1] < 0, -1.0, 1.0), budget)
    elif enc.kind == VIOLATING:
        x = np.full((size, n), math.sqrt(0.5 * P))
    else:
        # Each symbol spends the fair share of the remaining budget, scaled
        # up or down by the previous channel output.
        gain = float(enc.parameters.get("gain", 0.5))
        signs = _message_signs(w, n, enc.message_count)
        x = np.empty((size, n))
        energy = np.zeros(size)
        y_prev = np.zeros(size)
        for k in range(n - 1):
            room = budget - energy
            share = room / (n - k)
            xk = signs[:, k] * np.sqrt(share) * (1.0 + gain * np.tanh(y_prev))
            over = xk * xk > room
            if over.any():
                clamps += int(over.sum())
                xk = np.where(over, signs[:, k] * np.sqrt(np.maximum(room, 0.0)), xk)
            x[:, k] = xk
            energy += xk * xk
            y_prev = xk + z[:, k]
        x[:, n - 1] = signs[:, n - 1] * np.sqrt(np.maximum(budget - energy, 0.0))

    lam = np.sum(-P * z * z + 2.0 * x * z, axis=1)
    residual = np.abs(np.einsum("ij,ij->i", x, x) - budget)
    return lam, residual, clamps


def run_batch(enc: EncoderSpec, n: int, power: float, trials: int, seed: int, workers: int = 1) -> SimBatch:
    """Simulate ``trials`` independent uses of a feedback code.

    Each trial draws a uniform message, runs the encoder causally against
    i.i.d. standard normal noise, fixes the energy to ``n * power`` with the
    final symbol (except for the power-violating control) and records the
    lambda-sum.
    """
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if not power > 0:
        raise DomainError(f"power must be positive, got {power}")
    codebook = None
    if enc.kind == SPHERICAL:
        codebook = spherical_codebook(enc.message_count, n, power, enc.parameters.get("codebook_seed", 0))

    parts = _run_chunks(lambda c, size: _simulate_chunk(enc, n, power, seed, c, size, codebook), trials, workers)
    lam = np.concatenate([p[0] for p in parts])
    residual = np.concatenate([p[1] for p in parts])
    return SimBatch(
        encoder=enc,
        n=n,
        power=power,
        seed=int(seed),
        lambda_sum=lam,
        u_sum=u_from_lambda(lam, n, power),
        power_residual=residual,
        budget_clamps=sum(p[2] for p in parts),
    )


def write_csv(batch: SimBatch, fh) -> None:
    out = csv.writer(fh, lineterminator="\n")
    out.writerow(["trial", "lambda_sum", "u_sum_bits", "power_residual"])
    for i, (a, b, c) in enumerate(zip(batch.lambda_sum.tolist(), batch.u_sum.tolist(),
                                      batch.power_residual.tolist())):
        out.writerow([i, repr(a), repr(b), repr(c)])


def ks_critical(alpha: float, n: int, m: int | None = None) -> float:
    """Asymptotic Kolmogorov critical value, one-sample or (with ``m``) two-sample."""
    c = stats.kstwobign.isf(alpha)
    if m is None:
        return c / math.sqrt(n)
    return c * math.sqrt((n + m) / (n * m))


def ks_distance(samples, cdf) -> float:
    """sup_x |F_n(x) - F(x)| for the empirical CDF of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float))
    f = np.asarray(cdf(x), dtype=float)
    k = len(x)
    upper = np.arange(1, k + 1) / k - f
    lower = f - np.arange(0, k) / k
    return float(max(upper.max(), lower.max()))


def ks_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a))
    b = np.sort(np.asarray(b))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class IdentityReport:
    ks_distance: float
    critical_value: float
    trials: int
    passed: bool

    def to_dict(self) -> dict:
        return {"ks_distance": self.ks_distance, "critical_value": self.critical_value,
                "trials": self.trials, "pass": self.passed}


def verify_distribution_identity(batch: SimBatch, alpha: float = 0.01) -> IdentityReport:
    """One-sample KS test of the lambda-sums against the noncentral chi-square law."""
    if batch.trials < 1:
        raise DomainError("empty batch")
    law = sum_statistic_law(batch.n, batch.power)
    d = ks_distance(batch.lambda_sum, law.cdf)
    crit = ks_critical(alpha, batch.trials)
    return IdentityReport(ks_distance=float(d), critical_value=float(crit), trials=batch.trials, passed=bool(d < crit))


@dataclass
class MgfCheck:
    t: float
    empirical: float
    closed_form: float
    z_score: float

    def to_dict(self) -> dict:
        return {"t": self.t, "empirical": self.empirical, "closed_form": self.closed_form,
                "z_score": self.z_score}


def verify_mgf(batch: SimBatch, t_grid) -> list[MgfCheck]:
    """Compare the sample mean of ``exp(t * lambda_sum)`` with the closed form.

    The estimator has finite variance only when the MGF exists at ``2t``,
    i.e. ``t > -1/(4P)``; values of ``t`` outside that range are rejected.
    """
    P = batch.power
    lam = batch.lambda_sum
    out = []
    for t in t_grid:
        t = float(t)
        if 1.0 + 2.0 * t * P <= 0:
            raise DomainError(f"MGF diverges for t={t} <= -1/(2P)")
        if 1.0 + 4.0 * t * P <= 0:
            raise DomainError(f"empirical MGF has infinite variance for t={t} <= -1/(4P)")
        expo = t * lam
        if expo.max() > 700.0:
            raise DomainError(f"t={t} overflows the sample exponent (max {expo.max():.1f})")
        vals = np.exp(expo)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        exact = closed_form_mgf(t, batch.n, P)
        z = 0.0 if se == 0.0 else (mean - exact) / se
        out.append(MgfCheck(t=t, empirical=mean, closed_form=float(exact), z_score=float(z)))
    return out


@dataclass
class BerryEsseenResult:
    n: int
    sup_dev: float
    bound: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "sup_dev": self.sup_dev, "bound": self.bound, "slack": self.slack,
                "pass": self.passed}


def berry_esseen_check(power: float, n_list, trials: int, seed: int, workers: int = 1,
                       alpha: float = 0.01) -> list[BerryEsseenResult]:
    """Sup distance between the standardised U-sum CDF and the normal CDF.

    Passes when the distance is within ``T / (sigma^3 sqrt(n))`` plus the KS
    sampling slack at level ``alpha``.
    """
    m = llr_moments(power)
    results = []
    for n in n_list:
        needed = 100.0 * n * m.sigma ** 6 / m.third_abs ** 2
        if trials < needed:
            raise DomainError(f"trials={trials} too few for n={n}; need >= {math.ceil(needed)}")
        batch = run_batch(EncoderSpec(CONSTANT), n, power, trials, seed, workers)
        standardized = batch.u_sum / (m.sigma * math.sqrt(n))
        dev = ks_distance(standardized, normal_cdf)
        bound = m.third_abs / (m.sigma ** 3 * math.sqrt(n))
        slack = ks_critical(alpha, trials)
        results.append(BerryEsseenResult(n=n, sup_dev=dev, bound=bound, slack=float(slack),
                                         passed=bool(dev <= bound + slack)))
    return results


# Parallel channels.

PARALLEL_KINDS = ("waterfill", "adaptive")


@dataclass
class ParallelBatch:
    kind: str
    n: int
    seed: int
    u_sum: np.ndarray
    power_residual: np.ndarray

    def variance_per_use(self) -> tuple[float, float]:
        """Estimate of Var[sum U_k] / n and its standard error."""
        dev2 = (self.u_sum - self.u_sum.mean()) ** 2
        k = len(dev2)
        return float(dev2.sum() / (k - 1) / self.n), float(dev2.std(ddof=1) / math.sqrt(k) / self.n)


def _parallel_chunk(kind, n, variances, allocation, P, seed, chunk, size, gain):
    rng = chunk_rng(seed, chunk)
    L = len(variances)
    sd = np.sqrt(variances)
    z = rng.standard_normal((size, n, L)) * sd
    budget = n * P
    energy = np.zeros(size)
    u = np.zeros(size)
    y_prev = np.zeros((size, L))
    for k in range(n):
        if kind == "waterfill":
            x = np.broadcast_to(np.sqrt(allocation), (size, L))
            if k == n - 1:
                x = x * np.sqrt(np.maximum(budget - energy, 0.0) / P)[:, None]
        else:
            room = np.maximum(budget - energy, 0.0)
            share = room if k == n - 1 else room / (n - k)
            logits = gain * y_prev
            wts = np.exp(logits - logits.max(axis=1, keepdims=True))
            wts /= wts.sum(axis=1, keepdims=True)
            x = np.sqrt(share[:, None] * wts)
        zk = z[:, k, :]
        u += np.sum(-(allocation / variances) * zk * zk + allocation + 2.0 * x * zk, axis=1)
        energy += np.sum(x * x, axis=1)
        y_prev = x + zk
    return u, np.abs(energy - budget)


def run_parallel_batch(spec, kind: str, n: int, trials: int, seed: int, workers: int = 1,
                       gain: float = 1.0) -> ParallelBatch:
    """Simulate a feedback code on parallel channels and record ``sum_k U_k``.

    ``U_k`` sums ``-(P_l/s_l)(y-x)^2 + P_l + 2x(y-x)`` over channels, with
    ``P_l`` the water-filling powers.  ``waterfill`` sends the allocation on
    every use; ``adaptive`` moves energy between channels according to the
    last outputs.  Both end with total energy exactly ``nP``.
    """
    spec = _as_spec(spec)
    if kind not in PARALLEL_KINDS:
        raise DomainError(f"unknown parallel encoder {kind!r}")
    variances = np.asarray(spec.noise_variances)
    allocation = np.asarray(waterfill(spec).powers)
    parts = _run_chunks(
        lambda c, size: _parallel_chunk(kind, n, variances, allocation, spec.total_power, seed, c, size, gain),
        trials, workers,
    )
    return ParallelBatch(kind=kind, n=n, seed=int(seed),
                         u_sum=np.concatenate([p[0] for p in parts]),
                         power_residual=np.concatenate([p[1] for p in parts]))
