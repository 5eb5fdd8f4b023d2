import math

import numpy as np
import pytest
from scipy import stats

from fbconverse.errors import DomainError
from fbconverse.feedback_sim import (
    ADAPTIVE,
    CONSTANT,
    SPHERICAL,
    VIOLATING,
    EncoderSpec,
    berry_esseen_check,
    chunk_rng,
    ks_critical,
    ks_distance,
    ks_two_sample,
    run_batch,
    run_parallel_batch,
    spherical_codebook,
    u_from_lambda,
    verify_distribution_identity,
    verify_mgf,
)
from fbconverse.parallel import ParallelSpec, variance_envelope
from fbconverse.scalar_stats import LOG2E, llr_moments

ENCODERS = [EncoderSpec(CONSTANT), EncoderSpec(SPHERICAL, 8), EncoderSpec(ADAPTIVE, 4)]


class TestEncoders:
    @pytest.mark.parametrize("alias,kind", [("constant", CONSTANT), ("spherical", SPHERICAL),
                                            ("adaptive", ADAPTIVE), ("power-violating", VIOLATING)])
    def test_aliases(self, alias, kind):
        assert EncoderSpec(alias).kind == kind

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            EncoderSpec("schalkwijk")

    def test_constant_encoder_substitution(self):
        n, P, seed = 8, 2.0, 123
        batch = run_batch(EncoderSpec(CONSTANT), n, P, 5, seed)
        z = chunk_rng(seed, 0)
        z.integers(0, 1, 5)  # message draw comes first
        z = z.standard_normal((5, n))
        expected = np.sum(-P * z * z + 2 * math.sqrt(P) * z, axis=1)
        np.testing.assert_allclose(batch.lambda_sum, expected, rtol=1e-13, atol=1e-12)

    @pytest.mark.parametrize("enc", ENCODERS, ids=lambda e: e.kind)
    @pytest.mark.parametrize("n,P", [(1, 1.0), (16, 0.3), (64, 5.0)])
    def test_power_equality(self, enc, n, P):
        batch = run_batch(enc, n, P, 3000, 1)
        assert batch.power_residual.max() <= 1e-9 * n * P

    def test_violating_encoder_uses_half_budget(self):
        batch = run_batch(EncoderSpec(VIOLATING), 10, 1.0, 100, 0)
        np.testing.assert_allclose(batch.power_residual, 5.0)

    def test_spherical_codebook_on_sphere(self):
        cb = spherical_codebook(16, 12, 3.0, 4)
        np.testing.assert_allclose(np.sum(cb * cb, axis=1), 36.0, rtol=1e-13)

    def test_adaptive_mean_near_zero(self):
        n, trials = 64, 100_000
        batch = run_batch(EncoderSpec(ADAPTIVE, 4), n, 1.0, trials, 2)
        sigma = llr_moments(1.0).sigma
        assert abs(batch.u_sum.mean()) < 3 * sigma * math.sqrt(n) / math.sqrt(trials)

    def test_adaptive_depends_on_feedback(self):
        # different noise histories give different codewords for the same message
        enc = EncoderSpec(ADAPTIVE, 1, {"gain": 0.5})
        a = run_batch(enc, 16, 1.0, 2000, 0)
        b = run_batch(EncoderSpec(ADAPTIVE, 1, {"gain": 0.0}), 16, 1.0, 2000, 0)
        assert not np.allclose(a.lambda_sum, b.lambda_sum)


class TestTraces:
    def test_affine_relation(self):
        batch = run_batch(EncoderSpec(ADAPTIVE, 4), 32, 1.5, 1000, 9)
        np.testing.assert_array_equal(batch.u_sum, LOG2E / (2 * 2.5) * (batch.lambda_sum + 32 * 1.5))
        np.testing.assert_array_equal(u_from_lambda(batch.lambda_sum, 32, 1.5), batch.u_sum)

    def test_single_trial_deterministic(self):
        a = run_batch(EncoderSpec(ADAPTIVE, 4), 16, 1.0, 1, 77).trace(0)
        b = run_batch(EncoderSpec(ADAPTIVE, 4), 16, 1.0, 1, 77).trace(0)
        assert a == b

    @pytest.mark.parametrize("enc", ENCODERS, ids=lambda e: e.kind)
    def test_workers_do_not_change_results(self, enc):
        trials = 3 * (1 << 14) + 17
        a = run_batch(enc, 8, 1.0, trials, 5, workers=1)
        b = run_batch(enc, 8, 1.0, trials, 5, workers=4)
        assert a.to_csv() == b.to_csv()

    def test_csv_columns(self):
        text = run_batch(EncoderSpec(CONSTANT), 4, 1.0, 3, 0).to_csv()
        lines = text.splitlines()
        assert lines[0] == "trial,lambda_sum,u_sum_bits,power_residual"
        assert len(lines) == 4

    def test_seed_is_64_bit(self):
        run_batch(EncoderSpec(CONSTANT), 4, 1.0, 3, 2 ** 64 - 1)

    @pytest.mark.parametrize("n,trials,power", [(0, 1, 1.0), (4, 0, 1.0), (4, 1, 0.0)])
    def test_domain(self, n, trials, power):
        with pytest.raises(DomainError):
            run_batch(EncoderSpec(CONSTANT), n, power, trials, 0)


class TestKolmogorovSmirnov:
    def test_critical_value(self):
        assert ks_critical(0.01, 10 ** 4) == pytest.approx(1.62762 / 100, rel=1e-5)
        assert ks_critical(0.05, 100, 100) == pytest.approx(1.35810 * math.sqrt(2 / 100), rel=1e-5)

    def test_distance_against_scipy(self):
        x = np.random.default_rng(0).normal(size=1000)
        assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic, rel=1e-12)

    def test_two_sample_against_scipy(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=700), rng.normal(0.1, size=500)
        assert ks_two_sample(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, rel=1e-12)


class TestIdentity:
    @pytest.mark.parametrize("enc", ENCODERS, ids=lambda e: e.kind)
    def test_passes(self, enc):
        assert verify_distribution_identity(run_batch(enc, 64, 1.0, 100_000, 0, workers=4)).passed

    def test_negative_control_fails(self):
        rep = verify_distribution_identity(run_batch(EncoderSpec(VIOLATING), 64, 1.0, 100_000, 0, workers=4))
        assert not rep.passed
        assert rep.ks_distance > 5 * rep.critical_value

    def test_encoder_invariance_pairwise(self):
        batches = [run_batch(e, 64, 1.0, 100_000, 10 + i, workers=4) for i, e in enumerate(ENCODERS)]
        crit = ks_critical(0.01, 100_000, 100_000)
        for i in range(3):
            for j in range(i + 1, 3):
                assert ks_two_sample(batches[i].lambda_sum, batches[j].lambda_sum) < crit


class TestMgf:
    def test_t_zero(self):
        (row,) = verify_mgf(run_batch(EncoderSpec(ADAPTIVE, 4), 16, 1.0, 1000, 0), [0.0])
        assert row.empirical == 1.0 and row.z_score == 0.0

    @pytest.mark.parametrize("enc", ENCODERS, ids=lambda e: e.kind)
    def test_z_scores(self, enc):
        rows = verify_mgf(run_batch(enc, 16, 1.0, 200_000, 3, workers=4), [-0.1, -0.02, 0.05])
        assert all(abs(r.z_score) < 3 for r in rows)

    @pytest.mark.parametrize("t", [-0.5, -0.3, -0.25])
    def test_inadmissible_t(self, t):
        with pytest.raises(DomainError):
            verify_mgf(run_batch(EncoderSpec(CONSTANT), 4, 1.0, 10, 0), [t])


class TestBerryEsseen:
    def test_n1_and_scaling(self):
        res = berry_esseen_check(1.0, [1, 16, 256], 1_000_000, 0, workers=4)
        assert all(r.passed for r in res)
        ratio = res[1].sup_dev / res[2].sup_dev
        assert 2.5 <= ratio <= 6

    def test_too_few_trials(self):
        with pytest.raises(DomainError):
            berry_esseen_check(1.0, [256], 1000, 0)


class TestParallelSimulation:
    @pytest.mark.parametrize("kind", ["waterfill", "adaptive"])
    def test_variance_in_envelope(self, kind):
        spec = ParallelSpec((1.0, 3.0), 4.0)
        lo, hi = variance_envelope(spec)
        batch = run_parallel_batch(spec, kind, 32, 100_000, 4, workers=4)
        var, se = batch.variance_per_use()
        assert lo - 3 * se < var <= hi + 3 * se
        assert batch.power_residual.max() <= 1e-9 * 32 * 4.0

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            run_parallel_batch(ParallelSpec((1.0,), 1.0), "greedy", 4, 10, 0)
