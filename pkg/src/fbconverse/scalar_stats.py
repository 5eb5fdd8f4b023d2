"""Special functions and the moment layer for the AWGN log-likelihood ratio.

Everything here is a pure function of its arguments.  Information quantities
are returned in bits; moment generating functions use natural exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from fbconverse.errors import DomainError

LOG2E = math.log2(math.e)
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Poisson mass left outside the noncentral series.
_SERIES_TAIL = 1e-14


@dataclass(frozen=True)
class GaussianParams:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be positive, got {self.variance}")


STANDARD_NORMAL = GaussianParams(0.0, 1.0)


def phi_pdf(z, params: GaussianParams = STANDARD_NORMAL):
    """Gaussian density with the given mean and variance, evaluated at ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-((z - params.mean) ** 2) / (2.0 * params.variance))
    out = out / math.sqrt(2.0 * math.pi * params.variance)
    return out[()] if out.ndim == 0 else out


def normal_cdf(a):
    a = np.asarray(a, dtype=float)
    out = 0.5 * special.erfc(-a / _SQRT2)
    return out[()] if out.ndim == 0 else out


# Acklam's rational approximation (relative error about 1.15e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010229528e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p):
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = q * num / den

    for mask, tail, sign in ((lo, p[lo], 1.0), (hi, 1.0 - p[hi], -1.0)):
        q = np.sqrt(-2.0 * np.log(tail))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[mask] = sign * num / den
    return x


def normal_quantile(p):
    """Inverse of :func:`normal_cdf`.

    A rational first guess is polished by one Halley step on the CDF.  The
    step is taken on the lower tail, ``min(p, 1 - p)``, and mirrored, so the
    residual ``cdf(x) - p`` is never computed as a difference of two numbers
    near one.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError("quantile requires p in the open interval (0, 1)")
    flat = np.atleast_1d(p).astype(float)
    upper = flat > 0.5
    tail = np.where(upper, 1.0 - flat, flat)
    x = _acklam(tail)
    e = 0.5 * special.erfc(-x / _SQRT2) - tail
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    x = np.where(upper, -x, x)
    x = x.reshape(p.shape)
    return x[()] if x.ndim == 0 else x


def normal_quantile_derivative(p):
    """d/dp of the standard normal quantile, i.e. ``1 / phi(quantile(p))``."""
    x = normal_quantile(p)
    return _SQRT2PI * np.exp(0.5 * np.asarray(x) ** 2)


def chisq_cdf(x, dof):
    """Central chi-square CDF."""
    x = np.asarray(x, dtype=float)
    out = special.gammainc(0.5 * np.asarray(dof, dtype=float), 0.5 * np.maximum(x, 0.0))
    return out[()] if np.ndim(out) == 0 else out


def _check_noncentral(dof, noncentrality):
    if dof < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {dof}")
    if not noncentrality >= 0:
        raise DomainError(f"noncentrality must be >= 0, got {noncentrality}")


def _poisson_window(mean):
    """Index range holding all but ``_SERIES_TAIL`` of a Poisson(mean) mass."""
    if mean == 0:
        return 0, 0
    lo = int(stats.poisson.ppf(_SERIES_TAIL / 2, mean))
    hi = int(stats.poisson.isf(_SERIES_TAIL / 2, mean)) + 1
    return max(lo, 0), hi


def _mixture(x, dof, noncentrality, upper):
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    half = 0.5 * noncentrality
    lo, hi = _poisson_window(half)
    j = np.arange(lo, hi + 1, dtype=float)
    if half > 0:
        logw = -half + j * math.log(half) - special.gammaln(j + 1.0)
    else:
        logw = np.zeros(1)
    w = np.exp(logw)
    a = 0.5 * dof + j
    term = special.gammaincc if upper else special.gammainc
    out = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        xs = 0.5 * np.maximum(flat[start:start + 4096], 0.0)
        out[start:start + 4096] = term(a[None, :], xs[:, None]) @ w
    out = np.clip(out, 0.0, 1.0).reshape(x.shape)
    return out[()] if out.ndim == 0 else out


def noncentral_chisq_cdf(x, dof: int, noncentrality: float):
    """CDF of a noncentral chi-square variable.

    Evaluated as the Poisson(noncentrality/2) mixture of central chi-square
    CDFs with ``dof + 2j`` degrees of freedom, truncated to the window
    carrying all but 1e-14 of the Poisson mass.
    """
    _check_noncentral(dof, noncentrality)
    return _mixture(x, dof, noncentrality, upper=False)


def noncentral_chisq_sf(x, dof: int, noncentrality: float):
    _check_noncentral(dof, noncentrality)
    return _mixture(x, dof, noncentrality, upper=True)


def _log_gammainc_lower(a, x):
    """log of the regularized lower incomplete gamma function, underflow safe."""
    a = np.asarray(a, dtype=float)
    x = np.broadcast_to(np.asarray(x, dtype=float), a.shape)
    with np.errstate(divide="ignore"):
        out = np.log(special.gammainc(a, x))
    tiny = np.isfinite(out) & (out > -575.0)
    need = ~tiny & (x > 0)
    if np.any(need):
        # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
        aa, xx = a[need], x[need]
        total = np.ones_like(aa)
        term = np.ones_like(aa)
        for k in range(1, 20000):
            term = term * xx / (aa + k)
            total += term
            if np.all(term < 1e-17 * total):
                break
        out[need] = aa * np.log(xx) - xx - special.gammaln(aa + 1.0) + np.log(total)
    out[x <= 0] = -np.inf
    return out


def noncentral_chisq_logcdf(x: float, dof: int, noncentrality: float) -> float:
    """Natural log of :func:`noncentral_chisq_cdf` for a scalar ``x``.

    Accurate deep into the lower tail, where the CDF itself underflows.
    The series runs from ``j = 0`` because low-order terms dominate there.
    """
    _check_noncentral(dof, noncentrality)
    if x <= 0:
        return -math.inf
    half = 0.5 * noncentrality
    _, hi = _poisson_window(half)
    j = np.arange(0, hi + 1, dtype=float)
    if half > 0:
        logw = -half + j * math.log(half) - special.gammaln(j + 1.0)
    else:
        logw = np.where(j == 0, 0.0, -np.inf)
    logc = _log_gammainc_lower(0.5 * dof + j, 0.5 * x)
    return float(special.logsumexp(logw + logc))


@dataclass(frozen=True)
class LlrMoments:
    """Mean, standard deviation and third absolute moment of one LLR summand, in bits."""

    mu: float
    sigma: float
    third_abs: float


def _summand_coeffs(power):
    """Polynomial coefficients (in z) of the centred per-symbol summand, in bits."""
    scale = LOG2E / (2.0 * (1.0 + power))
    return scale * np.array([-power, 2.0 * math.sqrt(power), power])


def third_abs_cube_root_bound(power: float) -> float:
    """Triangle-inequality bound on the cube root of the third absolute moment."""
    return LOG2E / (2.0 * (1.0 + power)) * (
        15.0 ** (1.0 / 3.0) * power
        + 2.0 * (2.0 * math.sqrt(2.0 / math.pi)) ** (1.0 / 3.0) * math.sqrt(power)
        + power
    )


def llr_moments(power: float) -> LlrMoments:
    if not power > 0:
        raise DomainError(f"power must be positive, got {power}")
    coeffs = _summand_coeffs(power)
    # a Z^2 + b Z + c with Z standard normal: mean a + c, variance 2a^2 + b^2
    a, b, c = coeffs
    mu = a + c
    sigma = math.sqrt(2.0 * a * a + b * b)
    roots = np.sort(np.roots(coeffs).real)
    # Split at the sign changes so each piece is smooth.
    edges = [-np.inf, *roots, np.inf]

    def integrand(z):
        return abs(np.polyval(coeffs, z)) ** 3 * math.exp(-0.5 * z * z) / _SQRT2PI

    third = math.fsum(
        integrate.quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-12, limit=200)[0]
        for lo, hi in zip(edges[:-1], edges[1:])
    )
    if third ** (1.0 / 3.0) > third_abs_cube_root_bound(power) * (1 + 1e-12):
        raise ArithmeticError("third absolute moment exceeds its analytic bound")
    return LlrMoments(mu=float(mu), sigma=sigma, third_abs=third)


def closed_form_mgf(t: float, n: int, power: float) -> float:
    """MGF of the lambda-sum of any power-equality feedback code, at ``t``."""
    base = 1.0 + 2.0 * t * power
    if base <= 0:
        raise DomainError(f"MGF diverges for t <= -1/(2P) (t={t}, P={power})")
    return base ** (-0.5 * n) * math.exp(2.0 * t * t * n * power / base)


@dataclass(frozen=True)
class SumStatisticLaw:
    """Law of ``offset + scale * Q`` with ``Q`` noncentral chi-square.

    For the lambda-sum, completing the square in each summand gives
    ``-P Z^2 + 2 sqrt(P) Z = 1 - P (Z - 1/sqrt(P))^2``, hence
    ``offset = n``, ``scale = -P``, ``dof = n`` and noncentrality ``n / P``.
    """

    n: int
    power: float
    offset: float
    scale: float
    dof: int
    noncentrality: float

    @property
    def mean(self) -> float:
        return self.offset + self.scale * (self.dof + self.noncentrality)

    @property
    def variance(self) -> float:
        return self.scale ** 2 * 2.0 * (self.dof + 2.0 * self.noncentrality)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        q = (s - self.offset) / self.scale
        if self.scale > 0:
            return noncentral_chisq_cdf(q, self.dof, self.noncentrality)
        return noncentral_chisq_sf(q, self.dof, self.noncentrality)

    def mgf(self, t: float) -> float:
        # E exp(u Q) = (1-2u)^(-k/2) exp(lam u / (1-2u)) for u < 1/2.
        u = t * self.scale
        if 1.0 - 2.0 * u <= 0:
            raise DomainError(f"MGF diverges at t={t}")
        return math.exp(t * self.offset) * (1.0 - 2.0 * u) ** (-0.5 * self.dof) * math.exp(
            self.noncentrality * u / (1.0 - 2.0 * u)
        )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.offset + self.scale * rng.noncentral_chisquare(self.dof, self.noncentrality, size)


def sum_statistic_law(n: int, power: float) -> SumStatisticLaw:
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    if not power > 0:
        raise DomainError(f"power must be positive, got {power}")
    return SumStatisticLaw(n=n, power=power, offset=float(n), scale=-power, dof=n,
                           noncentrality=n / power)
