"""
When does covariate adjustment remove recruitment bias?
=======================================================

A reduced version of the package's benchmark experiment.  Two scenarios
share the same design and stratum model; they differ only in whether the
always- and compliant-recruited strata share one outcome model.  When they
do, the covariate-adjusted mixed model is nearly unbiased for the
recruited-population average effect.  When they differ, no amount of
covariate adjustment fixes the estimate, because the bias comes from who
is in the sample, not from imbalance in observed covariates.
"""

from dataclasses import replace

from psbias.harness import bundled_scenarios, run_scenario

# Pull two bundled scenarios: one with a shared outcome model across
# recruitable strata, one where the compliant mean is a unit higher.
by_key = {(s.label, s.icc): s for s in bundled_scenarios()}
homogeneous = by_key[("i.1", 0.1)]
heterogeneous = by_key[("ii.1", 0.1)]

# 300 replicates keeps this demo quick; the bundled plan uses 2000.
REPS = 300

for sc in (homogeneous, heterogeneous):
    same = (sc.mu_a == sc.mu_c and sc.tau_a == sc.tau_c and sc.lambda_a == sc.lambda_c)
    kind = "shared outcome model" if same else "stratum-specific outcome models"
    row = run_scenario(replace(sc, n_replicates=REPS))
    print(f"\nscenario {sc.label} ({kind}):")
    print(f"  true recruited-average effect: {row.true_tau_r:.4f}")
    print(f"  percent bias:    {row.pct_bias_signed:+.2f}%")
    print(f"  monte carlo sd:  {row.mcsd:.4f}")
    print(f"  mean model se:   {row.ese:.4f}")
    print(f"  95% CI coverage: {row.cp:.1f}%")

print(
    "\nSame estimator, same covariates, same design; only the stratum-"
    "\nspecific outcome models changed.  Adjustment cannot rescue the"
    "\nsecond case: the recruited sample itself answers a tilted question."
)
