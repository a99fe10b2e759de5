import dataclasses
import json

import numpy as np
import pytest

from psbias.core import TruthInconsistencyError
from psbias.estimands import recruited_ate_quota
from psbias import harness
from psbias.harness import (
    METRICS_CSV_COLUMNS,
    MetricsRow,
    Scenario,
    TABLE1_REFERENCE,
    bundled_scenarios,
    check_row,
    load_scenarios,
    run_scenario,
    run_table1,
    true_tau_r,
    write_metrics_csv,
)


def small_scenario(**overrides):
    base = dict(
        label="unit",
        mu_a=1.0, mu_c=1.0, tau_a=0.2, tau_c=0.2,
        lambda_a=(0.1, 0.1), lambda_c=(0.1, 0.1),
        beta_a=(0.3, 0.2, 0.1), beta_c=(0.1, 0.2, -0.1),
        icc=0.1,
        n_clusters=8, n_treated=4, cluster_size=60, quota=12,
        n_replicates=40, master_seed=505,
    )
    base.update(overrides)
    return Scenario(**base)


class TestScenario:
    def test_round_trip(self):
        sc = small_scenario()
        again = Scenario.from_dict(sc.to_dict())
        assert again == sc

    def test_json_round_trip(self):
        sc = small_scenario()
        again = Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
        assert again == sc

    def test_unknown_field(self):
        d = small_scenario().to_dict()
        d["bogus"] = 1
        with pytest.raises(ValueError, match="unknown"):
            Scenario.from_dict(d)

    def test_missing_field(self):
        d = small_scenario().to_dict()
        del d["quota"]
        with pytest.raises(ValueError, match="missing"):
            Scenario.from_dict(d)

    def test_builds_models(self):
        sc = small_scenario()
        assert sc.design().n_population == 480
        assert sc.outcome_model().icc == pytest.approx(0.1)
        probs = sc.strata_model().stratum_probs(np.zeros(1), np.zeros(1))
        assert probs.shape == (1, 3)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            small_scenario(quota=100)


class TestBundledScenarios:
    def test_grid_shape(self):
        scs = bundled_scenarios()
        assert len(scs) == 20
        labels = {s.label for s in scs}
        assert labels == {"i.1", "i.2"} | {f"ii.{k}" for k in range(1, 9)}
        for label in labels:
            iccs = sorted(s.icc for s in scs if s.label == label)
            assert iccs == [0.01, 0.1]

    def test_common_design(self):
        for s in bundled_scenarios():
            assert (s.n_clusters, s.n_treated, s.cluster_size, s.quota) == (20, 10, 500, 50)
            assert s.n_replicates == 2000

    def test_distinct_seeds(self):
        seeds = [s.master_seed for s in bundled_scenarios()]
        assert len(set(seeds)) == len(seeds)

    def test_every_scenario_has_reference(self):
        for s in bundled_scenarios():
            assert (s.label, s.icc) in TABLE1_REFERENCE


class TestTrueTauR:
    def test_homogeneous_truth_is_exact(self):
        tr = true_tau_r(small_scenario(), n_populations=5, n_assignments=2)
        assert tr.tau_r == pytest.approx(0.2, abs=1e-9)
        assert tr.checked

    def test_matches_quota_closed_form(self):
        sc = small_scenario(tau_a=0.2, tau_c=0.8, label="het")
        tr = true_tau_r(sc, n_populations=8, n_assignments=2)
        expected = recruited_ate_quota(0.5, tr.dist, sc.outcome_model().effects())
        assert tr.tau_r == pytest.approx(expected, abs=1e-12)
        # Shares estimated under the covariate marginals sum to one.
        assert tr.dist.p_a + tr.dist.p_c + tr.dist.p_n == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        sc = small_scenario(tau_a=0.3, tau_c=0.7, label="det")
        a = true_tau_r(sc, n_populations=4, n_assignments=2)
        harness._TRUTH_CACHE.clear()
        b = true_tau_r(sc, n_populations=4, n_assignments=2)
        assert a.tau_r == b.tau_r
        assert a.oracle_tau_r == b.oracle_tau_r

    def test_cache_reuse_across_icc(self):
        harness._TRUTH_CACHE.clear()
        a = true_tau_r(small_scenario(icc=0.01), n_populations=4, n_assignments=2)
        b = true_tau_r(small_scenario(icc=0.1, master_seed=9), n_populations=4,
                       n_assignments=2)
        assert a is b  # same generative truth, one computation

    def test_inconsistency_detected(self, monkeypatch):
        harness._TRUTH_CACHE.clear()
        real = harness.recruited_ate_quota

        def wrong(f, dist, effects):
            return real(f, dist, effects) + 0.5

        monkeypatch.setattr(harness, "recruited_ate_quota", wrong)
        with pytest.raises(TruthInconsistencyError, match="oracle"):
            true_tau_r(small_scenario(tau_a=0.2, tau_c=0.8, label="bad"),
                       n_populations=4, n_assignments=2)
        harness._TRUTH_CACHE.clear()


class TestRunScenario:
    def test_metrics_row_sanity(self):
        row = run_scenario(small_scenario(), check_truth=False)
        assert row.label == "unit"
        assert row.n_replicates == 40
        assert 0 <= row.n_converged <= 40
        assert 0.0 <= row.cp <= 100.0
        assert row.mcsd > 0 and row.ese > 0
        assert row.pct_bias_abs == abs(row.pct_bias_signed)
        assert row.true_tau_r == pytest.approx(0.2, abs=1e-9)

    def test_deterministic(self):
        a = run_scenario(small_scenario(), check_truth=False)
        b = run_scenario(small_scenario(), check_truth=False)
        assert a == b

    def test_jobs_do_not_change_results(self):
        serial = run_scenario(small_scenario(), jobs=1, check_truth=False)
        parallel = run_scenario(small_scenario(), jobs=2, check_truth=False)
        assert serial == parallel

    def test_replicate_override(self):
        row = run_scenario(small_scenario(), n_replicates=10, check_truth=False)
        assert row.n_replicates == 10

    def test_flagging_property(self):
        row = MetricsRow("x", 0.1, 0.2, 1.0, 1.0, 0.1, 0.1, 95.0,
                         n_replicates=1000, n_converged=980, master_seed=1)
        assert row.flagged
        row2 = MetricsRow("x", 0.1, 0.2, 1.0, 1.0, 0.1, 0.1, 95.0,
                          n_replicates=1000, n_converged=995, master_seed=1)
        assert not row2.flagged


class TestRunTable1AndCsv:
    def test_order_and_csv_bytes(self, tmp_path):
        scenarios = [small_scenario(label="a1"), small_scenario(label="a2", master_seed=7)]
        rows = run_table1(scenarios, n_replicates=12, check_truth=False)
        assert [r.label for r in rows] == ["a1", "a2"]
        p1, p2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        write_metrics_csv(rows, p1)
        write_metrics_csv(run_table1(scenarios, n_replicates=12, check_truth=False), p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == ",".join(METRICS_CSV_COLUMNS)
        assert header == (
            "label,icc,true_tau_r,pct_bias_signed,pct_bias_abs,"
            "mcsd,ese,cp,n_replicates,n_converged,master_seed"
        )

    def test_progress_callback(self):
        lines = []
        run_table1([small_scenario()], n_replicates=10, check_truth=False,
                   progress=lines.append)
        assert len(lines) == 1 and "unit" in lines[0]


class TestLoadScenarios:
    def test_list_form(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps([small_scenario().to_dict()]))
        assert load_scenarios(str(path))[0].label == "unit"

    def test_wrapped_form(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"scenarios": [small_scenario().to_dict()]}))
        assert len(load_scenarios(str(path))) == 1

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            load_scenarios([])


class TestCheckRow:
    def _row(self, label, icc, **overrides):
        ref = TABLE1_REFERENCE[(label, icc)]
        base = dict(
            label=label, icc=icc, true_tau_r=0.2,
            pct_bias_signed=ref["bias"], pct_bias_abs=abs(ref["bias"]),
            mcsd=ref["mcsd"], ese=ref["ese"], cp=ref["cp"],
            n_replicates=2000, n_converged=2000, master_seed=1,
        )
        base.update(overrides)
        return MetricsRow(**base)

    def test_reference_values_pass_their_own_bands(self):
        for (label, icc) in TABLE1_REFERENCE:
            row = self._row(label, icc)
            assert all(ok for _, ok, _ in check_row(row)), (label, icc)

    def test_homogeneous_bias_failure(self):
        row = self._row("i.1", 0.01, pct_bias_abs=9.0, pct_bias_signed=9.0)
        results = {m: ok for m, ok, _ in check_row(row)}
        assert results["pct_bias_abs"] is False

    def test_heterogeneous_bias_band(self):
        row = self._row("ii.1", 0.01, pct_bias_signed=100.0, pct_bias_abs=100.0)
        results = {m: ok for m, ok, _ in check_row(row)}
        assert results["pct_bias_abs"] is False

    def test_sign_of_heterogeneous_bias_ignored(self):
        ref = TABLE1_REFERENCE[("ii.2", 0.01)]
        row = self._row("ii.2", 0.01, pct_bias_signed=-ref["bias"],
                        pct_bias_abs=ref["bias"])
        results = {m: ok for m, ok, _ in check_row(row)}
        assert results["pct_bias_abs"] is True

    def test_unknown_row_has_no_checks(self):
        row = dataclasses.replace(self._row("i.1", 0.01), label="zz")
        assert check_row(row) == []
