"""Recruitment-bias estimands and Monte Carlo evaluation for cluster randomized trials.

Post-randomization recruitment in cluster randomized trials changes who ends
up in the analysis sample: treated clusters can recruit subjects that control
clusters cannot reach.  This package provides

* :mod:`psbias.core` -- principal strata, trial designs, data containers;
* :mod:`psbias.estimands` -- closed-form target quantities and a brute-force
  Monte Carlo oracle that recomputes them from first principles;
* :mod:`psbias.datagen` -- a seeded generative model for trial data;
* :mod:`psbias.estimators` -- intention-to-treat contrast and a random
  intercept linear mixed model fit by profiled REML;
* :mod:`psbias.harness` -- replication harness turning scenario configs into
  bias / coverage metric tables;
* :mod:`psbias.cli` -- command line front end (``psbias``).
"""

from .core import (
    PrincipalStratum,
    StrataDistribution,
    PrincipalEffects,
    TrialDesign,
    Subject,
    Population,
    RecruitedSample,
    recruitment_status,
    check_monotonicity,
    MonotonicityError,
    DegenerateRecruitmentError,
    QuotaInfeasibleError,
    TruthInconsistencyError,
)

__version__ = "0.1.0"

__all__ = [
    "PrincipalStratum",
    "StrataDistribution",
    "PrincipalEffects",
    "TrialDesign",
    "Subject",
    "Population",
    "RecruitedSample",
    "recruitment_status",
    "check_monotonicity",
    "MonotonicityError",
    "DegenerateRecruitmentError",
    "QuotaInfeasibleError",
    "TruthInconsistencyError",
    "__version__",
]
