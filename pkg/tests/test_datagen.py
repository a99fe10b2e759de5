import math

import numpy as np
import pytest

from psbias.core import PrincipalStratum, QuotaInfeasibleError, TrialDesign
from psbias.datagen import (
    OutcomeModel,
    StrataLogitModel,
    eligible_strata,
    gen_covariates,
    gen_outcomes,
    generate_population,
    assign_strata,
    randomize_clusters,
    read_sample_csv,
    recruit_cluster,
    simulate_trial,
    stage_streams,
    write_sample_csv,
    STAGE_NAMES,
)


DESIGN = TrialDesign(n_clusters=20, cluster_size=500, quota=50, n_treated=10)
STRATA = StrataLogitModel(intercept_a=0.3, coef_a=(0.2, 0.1),
                          intercept_c=0.1, coef_c=(0.2, -0.1))
OUTCOME = OutcomeModel.from_icc(
    mu_a=1.0, tau_a=0.2, lambda_a=(0.1, 0.1),
    mu_c=2.0, tau_c=0.8, lambda_c=(0.1, 0.1),
    icc=0.1,
)


class TestStageStreams:
    def test_named_streams(self):
        streams = stage_streams(123)
        assert tuple(streams) == STAGE_NAMES

    def test_streams_differ(self):
        streams = stage_streams(123)
        draws = {name: rng.random() for name, rng in streams.items()}
        assert len(set(draws.values())) == len(STAGE_NAMES)

    def test_reproducible(self):
        a = {n: r.random() for n, r in stage_streams(5).items()}
        b = {n: r.random() for n, r in stage_streams(5).items()}
        assert a == b


class TestStrataLogitModel:
    def test_rows_normalize(self):
        rng = np.random.default_rng(0)
        probs = STRATA.stratum_probs(rng.normal(size=100), rng.integers(0, 2, 100))
        assert probs.shape == (100, 3)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert (probs > 0).all()

    def test_reference_category_at_origin(self):
        # At x = 0 the scores are just the intercepts against a zero
        # reference, so probabilities follow from direct exponentials.
        probs = STRATA.stratum_probs(np.array([0.0]), np.array([0.0]))[0]
        denom = math.exp(0.3) + math.exp(0.1) + 1.0
        assert probs[0] == pytest.approx(math.exp(0.3) / denom, abs=1e-12)
        assert probs[1] == pytest.approx(math.exp(0.1) / denom, abs=1e-12)
        assert probs[2] == pytest.approx(1.0 / denom, abs=1e-12)

    def test_coefficient_length(self):
        with pytest.raises(ValueError):
            StrataLogitModel(0.0, (1.0,), 0.0, (1.0, 2.0))

    def test_empirical_frequencies_match_probabilities(self):
        rng = np.random.default_rng(21)
        n = 200_000
        x1 = rng.normal(0, np.sqrt(2), n)
        x2 = (rng.random(n) < 0.4).astype(float)
        cov = _FakeCov(x1, x2)
        codes = assign_strata(cov, STRATA, seed=99)
        probs = STRATA.stratum_probs(x1, x2)
        for j, code in enumerate(
            [PrincipalStratum.ALWAYS, PrincipalStratum.COMPLIANT, PrincipalStratum.NEVER]
        ):
            freq = np.mean(codes == code)
            expected = probs[:, j].mean()
            se = math.sqrt(expected * (1 - expected) / n)
            assert abs(freq - expected) < 5 * se


class _FakeCov:
    def __init__(self, x1, x2):
        self.x1 = x1
        self.x2 = x2
        self.cluster_id = np.zeros(x1.size, dtype=np.int64)
        self.cluster_means = np.zeros(1)


class TestOutcomeModel:
    def test_from_icc(self):
        m = OutcomeModel.from_icc(1, 0.2, (0.1, 0.1), 1, 0.2, (0.1, 0.1), icc=0.01)
        assert m.var_cluster == pytest.approx(0.01)
        assert m.var_resid == pytest.approx(0.99)
        assert m.icc == pytest.approx(0.01)
        assert m.var_cluster + m.var_resid == pytest.approx(1.0)

    def test_icc_domain(self):
        with pytest.raises(ValueError):
            OutcomeModel.from_icc(1, 0.2, (0.1, 0.1), 1, 0.2, (0.1, 0.1), icc=1.0)

    def test_effects(self):
        eff = OUTCOME.effects()
        assert eff.tau_a == 0.2 and eff.tau_c == 0.8 and eff.tau_n is None


class TestGenCovariates:
    def test_shapes_and_layout(self):
        cov = gen_covariates(DESIGN, seed=1)
        assert cov.x1.shape == (10_000,)
        assert cov.cluster_means.shape == (20,)
        # Contiguous cluster layout.
        assert np.array_equal(cov.cluster_id, np.repeat(np.arange(20), 500))

    def test_marginal_moments(self):
        big = TrialDesign(n_clusters=200, cluster_size=500, quota=50, n_treated=100)
        cov = gen_covariates(big, seed=2)
        assert abs(cov.x1.mean()) < 0.05
        assert cov.x1.var() == pytest.approx(2.0, rel=0.05)
        assert cov.x2.mean() == pytest.approx(0.4, abs=0.01)

    def test_within_cluster_centering(self):
        cov = gen_covariates(DESIGN, seed=3)
        for i in (0, 7):
            members = cov.cluster_id == i
            assert cov.x1[members].mean() == pytest.approx(
                cov.cluster_means[i], abs=5 / math.sqrt(500)
            )


class TestRandomizeClusters:
    def test_fixed_count(self):
        z = randomize_clusters(DESIGN, seed=4)
        assert z.sum() == 10
        assert set(z.tolist()) == {0, 1}

    def test_bernoulli(self):
        design = TrialDesign(1000, 10, randomization_prob=0.3)
        z = randomize_clusters(design, seed=5)
        assert abs(z.mean() - 0.3) < 0.05

    def test_deterministic(self):
        assert np.array_equal(randomize_clusters(DESIGN, 6), randomize_clusters(DESIGN, 6))


class TestRecruitCluster:
    def test_eligibility(self):
        assert eligible_strata(1) == (PrincipalStratum.ALWAYS, PrincipalStratum.COMPLIANT)
        assert eligible_strata(0) == (PrincipalStratum.ALWAYS,)

    def test_control_cluster_all_always(self):
        strata = np.array([0] * 200 + [1] * 100 + [2] * 200)
        rng = np.random.default_rng(0)
        idx = recruit_cluster(strata, z=0, quota=50, rng=rng)
        assert idx.size == 50
        assert (strata[idx] == PrincipalStratum.ALWAYS).all()

    def test_treated_cluster_mixes_strata(self):
        strata = np.array([0] * 200 + [1] * 100 + [2] * 200)
        rng = np.random.default_rng(1)
        idx = recruit_cluster(strata, z=1, quota=150, rng=rng)
        taken = strata[idx]
        assert idx.size == 150
        assert (taken != PrincipalStratum.NEVER).all()
        assert (taken == PrincipalStratum.COMPLIANT).any()

    def test_no_quota_takes_all_eligible(self):
        strata = np.array([0, 1, 2, 0])
        idx = recruit_cluster(strata, z=1, quota=None, rng=np.random.default_rng(0))
        assert np.array_equal(idx, [0, 1, 3])

    def test_infeasible_quota(self):
        strata = np.array([0, 2, 2, 2])
        with pytest.raises(QuotaInfeasibleError):
            recruit_cluster(strata, z=0, quota=2, rng=np.random.default_rng(0))

    def test_sorted_output(self):
        strata = np.zeros(100, dtype=np.int64)
        idx = recruit_cluster(strata, z=0, quota=30, rng=np.random.default_rng(2))
        assert np.array_equal(idx, np.sort(idx))


class TestGenOutcomes:
    def test_unit_level_effect_is_exact(self):
        n = 500
        rng = np.random.default_rng(3)
        cluster_id = np.repeat(np.arange(5), 100)
        stratum = rng.integers(0, 2, n)
        y1, y0 = gen_outcomes(
            cluster_id, rng.normal(size=n), rng.integers(0, 2, n).astype(float),
            stratum, np.zeros(5, dtype=np.int64), OUTCOME, seed=4,
            return_potentials=True,
        )
        diff = y1 - y0
        assert np.allclose(diff[stratum == 0], OUTCOME.tau_a, atol=1e-12)
        assert np.allclose(diff[stratum == 1], OUTCOME.tau_c, atol=1e-12)

    def test_observed_follows_assignment(self):
        n = 200
        cluster_id = np.repeat(np.arange(4), 50)
        z_cluster = np.array([1, 0, 1, 0], dtype=np.int64)
        x1 = np.zeros(n)
        x2 = np.zeros(n)
        stratum = np.zeros(n, dtype=np.int64)
        y = gen_outcomes(cluster_id, x1, x2, stratum, z_cluster, OUTCOME, seed=5)
        y1, y0 = gen_outcomes(
            cluster_id, x1, x2, stratum, z_cluster, OUTCOME, seed=5,
            return_potentials=True,
        )
        z_subject = z_cluster[cluster_id]
        assert np.array_equal(y, np.where(z_subject == 1, y1, y0))

    def test_rejects_unrecruitable_strata(self):
        with pytest.raises(ValueError, match="always- and compliant"):
            gen_outcomes(
                np.zeros(2, dtype=np.int64), np.zeros(2), np.zeros(2),
                np.array([0, 2]), np.zeros(1, dtype=np.int64), OUTCOME, seed=0,
            )

    def test_cluster_intercept_shared(self):
        # With zero residual variance impossible, use a large cluster variance
        # so the intercept dominates and within-cluster outcomes correlate.
        model = OutcomeModel(
            mu_a=0.0, tau_a=0.0, lambda_a=(0.0, 0.0),
            mu_c=0.0, tau_c=0.0, lambda_c=(0.0, 0.0),
            var_cluster=100.0, var_resid=0.01,
        )
        n = 1000
        cluster_id = np.repeat(np.arange(10), 100)
        y = gen_outcomes(
            cluster_id, np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64),
            np.zeros(10, dtype=np.int64), model, seed=6,
        )
        within_sd = np.mean([y[cluster_id == i].std() for i in range(10)])
        assert within_sd < 0.2
        assert np.std([y[cluster_id == i].mean() for i in range(10)]) > 1.0


class TestSimulateTrial:
    def test_quota_exactly_met(self):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=7)
        assert len(sample) == 20 * 50
        counts = np.bincount(sample.cluster_id, minlength=20)
        assert (counts == 50).all()

    def test_arm_composition(self):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=8)
        truth = sample.stratum_truth
        control = truth[sample.z == 0]
        treated = truth[sample.z == 1]
        assert (control == PrincipalStratum.ALWAYS).all()
        assert (treated == PrincipalStratum.COMPLIANT).any()
        assert not (truth == PrincipalStratum.NEVER).any()

    def test_deterministic(self):
        a = simulate_trial(DESIGN, STRATA, OUTCOME, seed=9)
        b = simulate_trial(DESIGN, STRATA, OUTCOME, seed=9)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.cluster_id, b.cluster_id)
        assert np.array_equal(a.stratum_truth, b.stratum_truth)

    def test_seed_changes_sample(self):
        a = simulate_trial(DESIGN, STRATA, OUTCOME, seed=10)
        b = simulate_trial(DESIGN, STRATA, OUTCOME, seed=11)
        assert not np.array_equal(a.y, b.y)

    def test_stage_isolation(self):
        # Changing only the outcome model must not change who is recruited.
        other = OutcomeModel.from_icc(
            mu_a=5.0, tau_a=1.0, lambda_a=(0.5, 0.5),
            mu_c=-3.0, tau_c=2.0, lambda_c=(0.9, 0.9),
            icc=0.01,
        )
        a = simulate_trial(DESIGN, STRATA, OUTCOME, seed=12)
        b = simulate_trial(DESIGN, STRATA, other, seed=12)
        assert np.array_equal(a.cluster_id, b.cluster_id)
        assert np.array_equal(a.z, b.z)
        assert np.array_equal(a.x1, b.x1)
        assert np.array_equal(a.stratum_truth, b.stratum_truth)
        assert not np.array_equal(a.y, b.y)

    def test_truth_opt_out(self):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=13, keep_truth=False)
        assert sample.stratum_truth is None


class TestGeneratePopulation:
    def test_potentials_defined_for_recruitable_only(self):
        pop = generate_population(DESIGN, STRATA, OUTCOME, seed=14)
        assert len(pop) == 10_000
        never = pop.stratum == PrincipalStratum.NEVER
        assert np.isnan(pop.y1[never]).all()
        assert np.isnan(pop.y0[never]).all()
        assert np.isfinite(pop.y1[~never]).all()
        diff = pop.y1[~never] - pop.y0[~never]
        taus = np.where(
            pop.stratum[~never] == PrincipalStratum.ALWAYS, OUTCOME.tau_a, OUTCOME.tau_c
        )
        assert np.allclose(diff, taus, atol=1e-12)

    def test_deterministic(self):
        a = generate_population(DESIGN, STRATA, OUTCOME, seed=15)
        b = generate_population(DESIGN, STRATA, OUTCOME, seed=15)
        assert np.allclose(a.y1, b.y1, equal_nan=True)


class TestSampleCsv:
    def test_round_trip(self, tmp_path):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=16)
        path = tmp_path / "s.csv"
        write_sample_csv(sample, path, reveal_truth=True)
        header = path.read_text().splitlines()[0]
        assert header == "cluster_id,z,x1,x2,y,stratum_truth"
        back = read_sample_csv(path)
        assert np.array_equal(back.cluster_id, sample.cluster_id)
        assert np.array_equal(back.z, sample.z)
        assert np.array_equal(back.x1, sample.x1)  # repr round-trips exactly
        assert np.array_equal(back.y, sample.y)
        assert np.array_equal(back.stratum_truth, sample.stratum_truth)

    def test_truth_hidden_by_default(self, tmp_path):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=17)
        path = tmp_path / "s.csv"
        write_sample_csv(sample, path)
        header = path.read_text().splitlines()[0]
        assert header == "cluster_id,z,x1,x2,y"
        assert read_sample_csv(path).stratum_truth is None

    def test_reveal_requires_truth(self, tmp_path):
        sample = simulate_trial(DESIGN, STRATA, OUTCOME, seed=18, keep_truth=False)
        with pytest.raises(ValueError, match="truth"):
            write_sample_csv(sample, tmp_path / "s.csv", reveal_truth=True)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("cluster_id,z,x1,x2,y\n")
        with pytest.raises(ValueError, match="empty"):
            read_sample_csv(path)
