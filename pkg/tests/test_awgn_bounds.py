import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

import oracles
from fbconverse.awgn_bounds import (
    FINITE_N,
    KAPPA_FORM,
    NORMAL_APPROX,
    ScalarChannel,
    berry_esseen_slack,
    capacity,
    capacity_dispersion,
    dispersion,
    finite_n_converse,
    kappa_constants,
    min_admissible_blocklength,
    normal_approximation,
    report_from_dict,
    theorem1_kappa_form,
)
from fbconverse.errors import DomainError
from fbconverse.scalar_stats import llr_moments

LOG2E = oracles.LOG2E


def finite_oracle(power, n, eps):
    """Finite-n converse evaluated in nats with the exact third-moment oracle, then converted."""
    sigma_nats = math.sqrt(oracles.variance_quadrature(power)) / LOG2E
    t_nats = oracles.third_abs_moment_exact(power) / LOG2E ** 3
    ratio = t_nats / (sigma_nats ** 3 * math.sqrt(n))
    log_xi = 0.5 * n * math.log1p(power) + sigma_nats * math.sqrt(n) * special.ndtri(eps + 2 * ratio)
    return LOG2E * (log_xi - math.log(ratio)), LOG2E * log_xi


class TestCapacityDispersion:
    @pytest.mark.parametrize("power,expected", [(1.0, 0.5), (3.0, 1.0), (15.0, 2.0)])
    def test_capacity_exact(self, power, expected):
        assert capacity(power) == expected

    def test_capacity_half(self):
        # 0.5 * log2(1.5) from the decimal expansion of log2(3) - 1
        assert capacity(0.5) == pytest.approx(0.29248125036057809, rel=1e-15)

    def test_dispersion_limits(self):
        assert dispersion(1e-12) < 1e-11
        assert dispersion(1e6) == pytest.approx(LOG2E ** 2 / 2, rel=1e-5)

    @pytest.mark.parametrize("power", [0.1, 1.0, 10.0])
    def test_dispersion_equals_llr_variance(self, power):
        assert dispersion(power) == pytest.approx(llr_moments(power).sigma ** 2, rel=1e-12)

    def test_pair(self):
        cd = capacity_dispersion(ScalarChannel(3.0))
        assert (cd.capacity, cd.dispersion) == (capacity(3.0), dispersion(3.0))

    def test_channel_rejects_nonpositive_power(self):
        with pytest.raises(DomainError):
            ScalarChannel(0.0)


class TestFiniteConverse:
    @pytest.mark.parametrize("power,n,eps", [(1.0, 10_000, 0.1), (1.0, 1000, 0.5), (4.0, 500, 0.01)])
    def test_matches_independent_evaluation(self, power, n, eps):
        rep = finite_n_converse(power, n, eps)
        bound, log_xi = finite_oracle(power, n, eps)
        assert rep.log_m_bound == pytest.approx(bound, abs=1e-6)
        assert rep.threshold_log_xi == pytest.approx(log_xi, abs=1e-6)
        assert rep.kind == FINITE_N

    def test_small_blocklength_rejected(self):
        with pytest.raises(DomainError, match="blocklength too small"):
            finite_n_converse(1.0, 4, 0.001)

    def test_min_admissible_blocklength_is_tight(self):
        n0 = min_admissible_blocklength(1.0, 0.1)
        finite_n_converse(1.0, n0, 0.1)
        with pytest.raises(DomainError):
            finite_n_converse(1.0, n0 - 1, 0.1)

    @pytest.mark.parametrize("n", [1000, 10_000, 100_000])
    def test_expansion_window(self, n):
        eps = 0.1
        residual = (finite_n_converse(1.0, n, eps).log_m_bound - n * capacity(1.0)
                    - math.sqrt(n * dispersion(1.0)) * special.ndtri(eps))
        kappa = kappa_constants(1.0, eps)["kappa"]
        assert 0.5 * math.log2(n) - 10 <= residual <= 0.5 * math.log2(n) + kappa

    @pytest.mark.parametrize("n", [1000, 10_000])
    def test_monotone_in_epsilon(self, n):
        vals = [finite_n_converse(1.0, n, e).log_m_bound for e in np.linspace(0.01, 0.75, 50)]
        assert np.all(np.diff(vals) >= 0)

    @pytest.mark.parametrize("eps", [0.1, 0.5])
    def test_monotone_in_power(self, eps):
        vals = [finite_n_converse(p, 1000, eps).log_m_bound for p in np.geomspace(0.05, 50, 50)]
        assert np.all(np.diff(vals) >= 0)

    @pytest.mark.parametrize("power,n,eps", [(0.3, 2000, 0.2), (1.0, 10 ** 5, 0.5), (20.0, 400, 0.05)])
    def test_units_nats_round_trip(self, power, n, eps):
        assert finite_n_converse(power, n, eps).log_m_bound == pytest.approx(
            finite_oracle(power, n, eps)[0], rel=1e-10)


class TestKappaForm:
    def test_constants_independent_of_n(self):
        a = theorem1_kappa_form(1.0, 1000, 0.1).constants
        b = theorem1_kappa_form(1.0, 10 ** 6, 0.1).constants
        assert a == b

    def test_kind_and_no_threshold(self):
        rep = theorem1_kappa_form(1.0, 1000, 0.1)
        assert rep.kind == KAPPA_FORM and rep.threshold_log_xi is None

    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.5, 0.9])
    def test_dominates_finite_converse(self, eps):
        n0 = min_admissible_blocklength(1.0, eps)
        for n in np.unique(np.geomspace(max(n0, 100), 10 ** 6, 25).astype(int)):
            n = int(n)
            assert theorem1_kappa_form(1.0, n, eps).log_m_bound >= finite_n_converse(1.0, n, eps).log_m_bound

    @pytest.mark.parametrize("n", [10 ** 3, 10 ** 5, 10 ** 7])
    def test_rate_converges_to_capacity(self, n):
        rep = theorem1_kappa_form(1.0, n, 0.1)
        gap = rep.log_m_bound / n - 0.5 - math.sqrt(dispersion(1.0) / n) * special.ndtri(0.1)
        assert abs(gap) <= (0.5 * math.log2(n) + rep.constants["kappa"]) / n

    def test_kappa_bar_sup_at_an_endpoint(self):
        c = kappa_constants(1.0, 0.1)
        lo, hi = c["taylor_interval"]
        grid = np.linspace(lo, hi, 20001)
        m = llr_moments(1.0)
        sup = np.max(np.sqrt(2 * np.pi) * np.exp(0.5 * special.ndtri(grid) ** 2))
        expected = 2 * m.third_abs / m.sigma ** 2 * sup - math.log2(m.third_abs / m.sigma ** 3)
        assert c["kappa_bar"] == pytest.approx(expected, rel=1e-12)
        assert hi == pytest.approx(0.1 + berry_esseen_slack(1.0, c["min_blocklength"]))

    def test_larger_min_blocklength_shrinks_kappa(self):
        assert kappa_constants(1.0, 0.1, 1000)["kappa"] < kappa_constants(1.0, 0.1)["kappa"]

    def test_min_blocklength_below_admissible_rejected(self):
        with pytest.raises(DomainError):
            kappa_constants(1.0, 0.1, 2)


class TestNormalApproximation:
    def test_median_case(self):
        n = 400
        assert normal_approximation(3.0, n, 0.5).log_m_bound == pytest.approx(n * 1.0 + 0.5 * math.log2(n),
                                                                                 rel=1e-15)

    def test_components(self):
        v = dispersion(1.0)
        expected = 50 + 10 * math.sqrt(v) * special.ndtri(0.1) + 0.5 * math.log2(100)
        rep = normal_approximation(1.0, 100, 0.1)
        assert rep.log_m_bound == pytest.approx(expected, rel=1e-14)
        assert rep.kind == NORMAL_APPROX

    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.5, 0.9])
    def test_below_kappa_form(self, eps):
        for n in (10, 100, 10 ** 4, 10 ** 6):
            assert normal_approximation(1.0, n, eps).log_m_bound < theorem1_kappa_form(1.0, n, eps).log_m_bound


class TestReports:
    def test_json_keys(self):
        d = json.loads(finite_n_converse(1.0, 1000, 0.1).to_json())
        assert set(d) == {"n", "epsilon", "kind", "log_m_bound_bits", "threshold_log_xi_bits", "constants"}
        assert {"sigma", "T", "kappa_bar", "kappa"} <= set(d["constants"])

    def test_round_trip(self):
        rep = theorem1_kappa_form(2.0, 5000, 0.2)
        assert report_from_dict(json.loads(rep.to_json())) == report_from_dict(rep.to_dict())

    @given(st.floats(min_value=0.01, max_value=0.99))
    @settings(max_examples=30, deadline=None)
    def test_bad_epsilon_rejected_outside(self, eps):
        theorem1_kappa_form(1.0, 100, eps)
        for bad in (0.0, 1.0, -eps, 1.0 + eps):
            with pytest.raises(DomainError):
                finite_n_converse(1.0, 10 ** 6, bad)
