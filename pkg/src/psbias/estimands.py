"""Target quantities under post-randomization recruitment, plus a brute-force oracle.

Two averages of stratum-specific effects matter here.  The population-wide
average effect weights every stratum by its share.  The recruited-population
average weights only the strata that can appear in a recruited sample
(always- and compliant-recruited), with weights induced by the recruitment
mechanism itself; it therefore depends on the randomization rate even though
the stratum effects do not.

Closed forms assume monotonicity and cluster-level assignment with the same
recruitment behavior in every cluster.  ``brute_force_estimands`` recomputes
the same quantities by literally simulating assignments on an enumerated
population, providing an independent check of every identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateRecruitmentError,
    Population,
    PrincipalEffects,
    PrincipalStratum,
    QuotaInfeasibleError,
    StrataDistribution,
    TrialDesign,
    check_monotonicity,
)

__all__ = [
    "overall_ate",
    "complier_weight",
    "recruited_ate",
    "recruited_ate_quota",
    "equivalent_bernoulli_rate",
    "recruitment_rate",
    "assignment_given_recruited",
    "recruited_composition",
    "RecruitedComposition",
    "balanced_randomization_prob",
    "BruteForceResult",
    "brute_force_estimands",
]


def _check_rate(r: float) -> float:
    r = float(r)
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"randomization rate must lie in [0, 1], got {r!r}")
    return r


def overall_ate(dist: StrataDistribution, effects: PrincipalEffects) -> float:
    """Population-wide average effect: stratum effects weighted by stratum shares.

    Requires ``effects.tau_n``; the never-recruited stratum contributes to the
    population average even though it never contributes data.
    """
    tau_n = effects.require_tau_n()
    return dist.p_a * effects.tau_a + dist.p_c * effects.tau_c + dist.p_n * tau_n


def complier_weight(r: float, dist: StrataDistribution) -> float:
    """Share of compliant-recruited subjects among all recruited subjects.

    Under Bernoulli cluster assignment with rate ``r``, compliers are recruited
    only from the treated fraction of clusters, so their recruited share is
    ``r * p_c / (r * p_c + p_a)``.
    """
    r = _check_rate(r)
    denom = r * dist.p_c + dist.p_a
    if denom <= 0.0:
        raise DegenerateRecruitmentError(
            "no subject can be recruited (r * p_c + p_a = 0); "
            "recruited-population quantities are undefined"
        )
    return r * dist.p_c / denom


def recruited_ate(r: float, dist: StrataDistribution, effects: PrincipalEffects) -> float:
    """Average effect in the recruited population under Bernoulli assignment at rate ``r``.

    A weighted combination of the compliant- and always-recruited effects; the
    never-recruited effect drops out entirely.
    """
    w = complier_weight(r, dist)
    # Fused form: exact (not just close) when the two effects coincide.
    return effects.tau_a + w * (effects.tau_c - effects.tau_a)


def recruited_ate_quota(
    treated_fraction: float, dist: StrataDistribution, effects: PrincipalEffects
) -> float:
    """Average effect in the recruited population under fixed per-cluster quotas.

    With every cluster recruiting the same number of subjects and a fraction
    ``treated_fraction`` of clusters treated, recruited subjects split across
    clusters evenly, so the compliant share among them is
    ``treated_fraction * p_c / (p_a + p_c)``.
    """
    f = _check_rate(treated_fraction)
    denom = dist.p_a + dist.p_c
    if denom <= 0.0:
        raise DegenerateRecruitmentError(
            "no subject is ever eligible for recruitment (p_a + p_c = 0)"
        )
    w = f * dist.p_c / denom
    return effects.tau_a + w * (effects.tau_c - effects.tau_a)


def equivalent_bernoulli_rate(treated_fraction: float, dist: StrataDistribution) -> float:
    """Bernoulli rate at which the rate-based recruited average equals the quota-based one.

    Solves ``complier_weight(r, dist) == treated_fraction * p_c / (p_a + p_c)``
    for ``r``.
    """
    f = _check_rate(treated_fraction)
    denom = dist.p_a + dist.p_c - f * dist.p_c
    if denom <= 0.0:
        raise DegenerateRecruitmentError("quota and rate weightings cannot be matched")
    return f * dist.p_a / denom


def recruitment_rate(r: float, dist: StrataDistribution) -> float:
    """Marginal probability that a subject is recruited: ``p_a + r * p_c``."""
    r = _check_rate(r)
    return dist.p_a + r * dist.p_c


def assignment_given_recruited(r: float, dist: StrataDistribution) -> tuple[float, float]:
    """Distribution of the cluster assignment conditional on being recruited.

    Returns ``(P(treated | recruited), P(control | recruited))``.  Recruitment
    is informative about assignment whenever ``p_c > 0``: recruited subjects
    over-represent treated clusters because compliers only appear there.
    """
    r = _check_rate(r)
    denom = dist.p_a + r * dist.p_c
    if denom <= 0.0:
        raise DegenerateRecruitmentError("recruitment probability is zero")
    p_treated = (dist.p_a + dist.p_c) * r / denom
    p_control = dist.p_a * (1.0 - r) / denom
    return p_treated, p_control


@dataclass(frozen=True)
class RecruitedComposition:
    """Stratum mix of the recruited population, overall and by arm."""

    complier_share_treated: float
    complier_share_control: float
    complier_share_overall: float
    p_recruited: float
    p_treated_given_recruited: float
    p_control_given_recruited: float


def recruited_composition(r: float, dist: StrataDistribution) -> RecruitedComposition:
    """Who ends up recruited under Bernoulli assignment at rate ``r``.

    In treated clusters the recruited pool mixes always- and compliant-
    recruited subjects in proportion ``p_a : p_c``; in control clusters it is
    purely always-recruited.
    """
    r = _check_rate(r)
    eligible = dist.p_a + dist.p_c
    if eligible <= 0.0:
        raise DegenerateRecruitmentError("no subject is ever eligible for recruitment")
    p_t, p_ctl = assignment_given_recruited(r, dist)
    return RecruitedComposition(
        complier_share_treated=dist.p_c / eligible,
        complier_share_control=0.0,
        complier_share_overall=complier_weight(r, dist),
        p_recruited=recruitment_rate(r, dist),
        p_treated_given_recruited=p_t,
        p_control_given_recruited=p_ctl,
    )


def balanced_randomization_prob(dist: StrataDistribution) -> float:
    """Bernoulli rate equalizing expected recruited counts across arms.

    Treated clusters recruit at per-subject rate ``p_a + p_c``, control
    clusters at ``p_a``; balance requires ``r = p_a / (2 * p_a + p_c)``.
    Always below one half when compliers exist.
    """
    denom = 2.0 * dist.p_a + dist.p_c
    if denom <= 0.0:
        raise DegenerateRecruitmentError(
            "neither arm ever recruits anyone; no rate can balance them"
        )
    return dist.p_a / denom


@dataclass(frozen=True)
class BruteForceResult:
    """Monte Carlo estimates from literal simulation of the assignment mechanism.

    ``tau_o`` is ``None`` when some potential outcomes are undefined in the
    population (the population-wide average then does not exist).  Standard
    errors treat per-assignment values as independent draws.
    """

    tau_r: float
    tau_r_se: float
    tau_o: float | None
    itt: float | None
    itt_se: float | None
    n_assignments: int


def brute_force_estimands(
    population: Population,
    design: TrialDesign,
    n_assignments: int,
    seed,
) -> BruteForceResult:
    """Recompute target quantities by simulating the trial mechanism directly.

    For each of ``n_assignments`` independent cluster assignments the
    recruitment rule is applied literally (eligibility by stratum, optional
    per-cluster quota sampled uniformly without replacement) and the average
    unit-level effect among recruited subjects is recorded; the mean over
    assignments estimates the recruited-population average effect.  The
    intention-to-treat contrast (treated-arm mean outcome minus control-arm
    mean outcome among recruited) is averaged over assignments where both
    arms recruit at least one subject.

    No closed-form identity is used anywhere in this function; it exists to
    check them.
    """
    if n_assignments < 1:
        raise ValueError("n_assignments must be positive")
    check_monotonicity(population.stratum)
    rng = np.random.default_rng(seed)

    diff = population.y1 - population.y0
    defined = ~np.isnan(diff)
    tau_o = float(diff.mean()) if defined.all() and len(population) else None

    cluster_ids = np.unique(population.cluster_id)
    n_clusters = cluster_ids.size
    if n_clusters != design.n_clusters:
        raise ValueError(
            f"population has {n_clusters} clusters, design expects {design.n_clusters}"
        )

    is_a = population.stratum == PrincipalStratum.ALWAYS
    is_c = population.stratum == PrincipalStratum.COMPLIANT

    # Per-cluster index lists; sums suffice in the no-quota case.
    idx_a = []
    idx_c = []
    for cid in cluster_ids:
        in_cluster = population.cluster_id == cid
        idx_a.append(np.flatnonzero(in_cluster & is_a))
        idx_c.append(np.flatnonzero(in_cluster & is_c))
    n_a = np.array([ix.size for ix in idx_a])
    n_c = np.array([ix.size for ix in idx_c])
    sum_diff_a = np.array([diff[ix].sum() for ix in idx_a])
    sum_diff_c = np.array([diff[ix].sum() for ix in idx_c])
    sum_y1_a = np.array([population.y1[ix].sum() for ix in idx_a])
    sum_y1_c = np.array([population.y1[ix].sum() for ix in idx_c])
    sum_y0_a = np.array([population.y0[ix].sum() for ix in idx_a])

    tau_r_draws = []
    itt_draws = []
    for _ in range(n_assignments):
        if design.n_treated is not None:
            z = np.zeros(n_clusters, dtype=np.int64)
            z[rng.choice(n_clusters, size=design.n_treated, replace=False)] = 1
        else:
            z = (rng.random(n_clusters) < design.randomization_prob).astype(np.int64)
        treated = z == 1

        if design.quota is None:
            # Every eligible subject recruited: stratum sums give exact means.
            num = sum_diff_a.sum() + sum_diff_c[treated].sum()
            den = n_a.sum() + n_c[treated].sum()
            if den > 0:
                tau_r_draws.append(num / den)
            num_t = sum_y1_a[treated].sum() + sum_y1_c[treated].sum()
            den_t = n_a[treated].sum() + n_c[treated].sum()
            num_ctl = sum_y0_a[~treated].sum()
            den_ctl = n_a[~treated].sum()
            if den_t > 0 and den_ctl > 0:
                itt_draws.append(num_t / den_t - num_ctl / den_ctl)
        else:
            diff_sum = 0.0
            diff_n = 0
            y_t_sum = 0.0
            y_t_n = 0
            y_ctl_sum = 0.0
            y_ctl_n = 0
            for i in range(n_clusters):
                eligible = (
                    np.concatenate([idx_a[i], idx_c[i]]) if treated[i] else idx_a[i]
                )
                if eligible.size < design.quota:
                    raise QuotaInfeasibleError(
                        f"cluster {cluster_ids[i]} has {eligible.size} eligible "
                        f"subjects, quota is {design.quota}"
                    )
                take = rng.choice(eligible, size=design.quota, replace=False)
                diff_sum += diff[take].sum()
                diff_n += take.size
                if treated[i]:
                    y_t_sum += population.y1[take].sum()
                    y_t_n += take.size
                else:
                    y_ctl_sum += population.y0[take].sum()
                    y_ctl_n += take.size
            if diff_n > 0:
                tau_r_draws.append(diff_sum / diff_n)
            if y_t_n > 0 and y_ctl_n > 0:
                itt_draws.append(y_t_sum / y_t_n - y_ctl_sum / y_ctl_n)

    if not tau_r_draws:
        raise DegenerateRecruitmentError(
            "no assignment recruited any subject; recruited-population average undefined"
        )
    tau_r_draws = np.asarray(tau_r_draws)
    tau_r = float(tau_r_draws.mean())
    tau_r_se = float(tau_r_draws.std(ddof=1) / np.sqrt(tau_r_draws.size)) if tau_r_draws.size > 1 else float("nan")

    if itt_draws:
        itt_arr = np.asarray(itt_draws)
        itt = float(itt_arr.mean())
        itt_se = float(itt_arr.std(ddof=1) / np.sqrt(itt_arr.size)) if itt_arr.size > 1 else float("nan")
    else:
        itt = None
        itt_se = None

    return BruteForceResult(
        tau_r=tau_r,
        tau_r_se=tau_r_se,
        tau_o=tau_o,
        itt=itt,
        itt_se=itt_se,
        n_assignments=n_assignments,
    )
