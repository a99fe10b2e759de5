"""Seeded generative model for cluster randomized trials with selective recruitment.

The pipeline runs in five stages, each drawing from its own named random
substream so that any stage can be replayed or swapped without disturbing
the others:

1. ``covariates``   cluster-centered continuous covariate and a binary one
2. ``strata``       latent stratum per subject via a three-category logit
3. ``assignment``   cluster-level treatment assignment
4. ``recruitment``  per-cluster uniform sampling of eligible subjects
5. ``outcomes``     linear outcomes with a cluster random intercept

Eligibility is what makes recruitment selective: treated clusters may
recruit always- and compliant-recruited subjects, control clusters only
always-recruited ones.  Never-recruited subjects are carried in the
population but have no modeled outcome.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Population,
    PrincipalEffects,
    PrincipalStratum,
    QuotaInfeasibleError,
    RecruitedSample,
    TrialDesign,
)

__all__ = [
    "STAGE_NAMES",
    "stage_streams",
    "StrataLogitModel",
    "OutcomeModel",
    "Covariates",
    "gen_covariates",
    "assign_strata",
    "randomize_clusters",
    "eligible_strata",
    "recruit_cluster",
    "gen_outcomes",
    "simulate_trial",
    "generate_population",
    "write_sample_csv",
    "read_sample_csv",
]

# Fixed order; replicate reproducibility depends on it.
STAGE_NAMES = ("covariates", "strata", "assignment", "recruitment", "outcomes")


def stage_streams(seed) -> dict[str, np.random.Generator]:
    """Independent generators for the five pipeline stages.

    ``seed`` may be an int or a ``SeedSequence``.  Children are spawned in
    ``STAGE_NAMES`` order, so equal seeds give equal streams stage by stage.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(len(STAGE_NAMES))
    return {name: np.random.default_rng(child) for name, child in zip(STAGE_NAMES, children)}


@dataclass(frozen=True)
class StrataLogitModel:
    """Three-category logit for stratum membership given ``(x1, x2)``.

    Linear scores for the always- and compliant-recruited categories against
    a never-recruited reference:

    ``score_s = intercept_s + coef_s[0] * x1 + coef_s[1] * x2``

    Class probabilities are the softmax of ``(score_a, score_c, 0)``.
    """

    intercept_a: float
    coef_a: tuple[float, float]
    intercept_c: float
    coef_c: tuple[float, float]

    def __post_init__(self) -> None:
        if len(self.coef_a) != 2 or len(self.coef_c) != 2:
            raise ValueError("coef_a and coef_c must each have 2 entries")

    def stratum_probs(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Row-stochastic (n, 3) array of [always, compliant, never] probabilities."""
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        score_a = self.intercept_a + self.coef_a[0] * x1 + self.coef_a[1] * x2
        score_c = self.intercept_c + self.coef_c[0] * x1 + self.coef_c[1] * x2
        scores = np.stack([score_a, score_c, np.zeros_like(score_a)], axis=-1)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class OutcomeModel:
    """Linear outcomes for recruitable strata with a shared cluster intercept.

    For a subject of stratum s in {always, compliant} in cluster i under
    assignment z:

    ``Y(z) = mu_s + tau_s * z + lambda_s . (x1, x2) + gamma_i + eps``

    with ``gamma_i ~ N(0, var_cluster)`` and ``eps ~ N(0, var_resid)`` drawn
    once per subject, shared across both potential outcomes.  Never-recruited
    subjects have no modeled outcome.
    """

    mu_a: float
    tau_a: float
    lambda_a: tuple[float, float]
    mu_c: float
    tau_c: float
    lambda_c: tuple[float, float]
    var_cluster: float
    var_resid: float

    def __post_init__(self) -> None:
        if len(self.lambda_a) != 2 or len(self.lambda_c) != 2:
            raise ValueError("lambda_a and lambda_c must each have 2 entries")
        if self.var_cluster < 0 or self.var_resid <= 0:
            raise ValueError("variance components must be positive (cluster may be 0)")

    @classmethod
    def from_icc(
        cls,
        mu_a: float,
        tau_a: float,
        lambda_a: tuple[float, float],
        mu_c: float,
        tau_c: float,
        lambda_c: tuple[float, float],
        icc: float,
        total_var: float = 1.0,
    ) -> "OutcomeModel":
        """Variance components from an intra-cluster correlation at fixed total variance."""
        if not 0.0 <= icc < 1.0:
            raise ValueError("icc must lie in [0, 1)")
        if total_var <= 0:
            raise ValueError("total_var must be positive")
        return cls(
            mu_a=mu_a,
            tau_a=tau_a,
            lambda_a=tuple(lambda_a),
            mu_c=mu_c,
            tau_c=tau_c,
            lambda_c=tuple(lambda_c),
            var_cluster=icc * total_var,
            var_resid=(1.0 - icc) * total_var,
        )

    @property
    def icc(self) -> float:
        return self.var_cluster / (self.var_cluster + self.var_resid)

    def effects(self) -> PrincipalEffects:
        return PrincipalEffects(tau_a=self.tau_a, tau_c=self.tau_c, tau_n=None)


@dataclass(frozen=True)
class Covariates:
    """Stage-1 output: per-subject covariates plus the cluster means behind x1."""

    cluster_id: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    cluster_means: np.ndarray


def gen_covariates(design: TrialDesign, seed) -> Covariates:
    """Draw covariates: ``x1 ~ N(mean_i, 1)`` with ``mean_i ~ N(0, 1)``, ``x2 ~ Bernoulli(0.4)``.

    The cluster means induce within-cluster correlation in x1; marginally
    ``x1 ~ N(0, 2)``.
    """
    rng = np.random.default_rng(seed)
    n = design.n_population
    cluster_id = np.repeat(np.arange(design.n_clusters), design.cluster_size)
    cluster_means = rng.standard_normal(design.n_clusters)
    x1 = cluster_means[cluster_id] + rng.standard_normal(n)
    x2 = (rng.random(n) < 0.4).astype(np.float64)
    return Covariates(cluster_id=cluster_id, x1=x1, x2=x2, cluster_means=cluster_means)


def assign_strata(cov: Covariates, model: StrataLogitModel, seed) -> np.ndarray:
    """Draw one stratum code per subject from the logit model.

    Only the three monotonicity-compatible strata have positive probability.
    """
    rng = np.random.default_rng(seed)
    probs = model.stratum_probs(cov.x1, cov.x2)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    cat = (u[:, None] > cum).sum(axis=1)
    codes = np.array(
        [PrincipalStratum.ALWAYS, PrincipalStratum.COMPLIANT, PrincipalStratum.NEVER],
        dtype=np.int64,
    )
    return codes[cat]


def randomize_clusters(design: TrialDesign, seed) -> np.ndarray:
    """Cluster-level assignment vector.

    Fixed designs treat exactly ``n_treated`` uniformly chosen clusters;
    Bernoulli designs flip an independent coin per cluster.
    """
    rng = np.random.default_rng(seed)
    z = np.zeros(design.n_clusters, dtype=np.int64)
    if design.n_treated is not None:
        z[rng.choice(design.n_clusters, size=design.n_treated, replace=False)] = 1
    else:
        z[:] = rng.random(design.n_clusters) < design.randomization_prob
    return z


def eligible_strata(z: int) -> tuple[PrincipalStratum, ...]:
    """Strata recruitable in a cluster with assignment ``z``."""
    if z == 1:
        return (PrincipalStratum.ALWAYS, PrincipalStratum.COMPLIANT)
    if z == 0:
        return (PrincipalStratum.ALWAYS,)
    raise ValueError(f"assignment must be 0 or 1, got {z!r}")


def recruit_cluster(
    strata: np.ndarray, z: int, quota: int | None, rng: np.random.Generator
) -> np.ndarray:
    """Recruit from one cluster: positional indices of recruited subjects.

    Uniform sampling without replacement among eligible subjects when a quota
    is set; all eligible subjects otherwise.  Returned indices are sorted so
    recruitment order carries no information.
    """
    eligible = np.flatnonzero(np.isin(strata, eligible_strata(z)))
    if quota is None:
        return eligible
    if eligible.size < quota:
        raise QuotaInfeasibleError(
            f"cluster has {eligible.size} eligible subjects, quota is {quota}"
        )
    return np.sort(rng.choice(eligible, size=quota, replace=False))


def gen_outcomes(
    cluster_id: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    stratum: np.ndarray,
    z_cluster: np.ndarray,
    model: OutcomeModel,
    seed,
    return_potentials: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Outcomes for always- and compliant-recruited subjects.

    Returns observed outcomes under each subject's cluster assignment, or the
    full ``(y1, y0)`` pair when ``return_potentials`` is set.  The cluster
    intercept and subject-level noise are drawn once and shared by both
    potential outcomes, so unit-level effects are exactly ``tau_s``.

    Raises if any subject is never- or defiant-recruited: the model does not
    define outcomes for them.
    """
    stratum = np.asarray(stratum, dtype=np.int64)
    is_a = stratum == PrincipalStratum.ALWAYS
    is_c = stratum == PrincipalStratum.COMPLIANT
    if not np.all(is_a | is_c):
        raise ValueError("outcomes are defined only for always- and compliant-recruited subjects")
    rng = np.random.default_rng(seed)
    n_clusters = z_cluster.size
    gamma = rng.normal(0.0, np.sqrt(model.var_cluster), size=n_clusters)
    eps = rng.normal(0.0, np.sqrt(model.var_resid), size=stratum.size)

    mu = np.where(is_a, model.mu_a, model.mu_c)
    tau = np.where(is_a, model.tau_a, model.tau_c)
    lam1 = np.where(is_a, model.lambda_a[0], model.lambda_c[0])
    lam2 = np.where(is_a, model.lambda_a[1], model.lambda_c[1])
    base = mu + lam1 * x1 + lam2 * x2 + gamma[cluster_id] + eps
    y0 = base
    y1 = base + tau
    if return_potentials:
        return y1, y0
    z_subject = z_cluster[cluster_id]
    return np.where(z_subject == 1, y1, y0)


def simulate_trial(
    design: TrialDesign,
    strata_model: StrataLogitModel,
    outcome_model: OutcomeModel,
    seed,
    keep_truth: bool = True,
) -> RecruitedSample:
    """Run the full five-stage pipeline and return the recruited sample.

    Deterministic given ``seed``.  ``keep_truth`` attaches latent stratum
    codes for diagnostics; estimators never see them.
    """
    streams = stage_streams(seed)
    cov = gen_covariates(design, streams["covariates"])
    stratum = assign_strata(cov, strata_model, streams["strata"])
    z_cluster = randomize_clusters(design, streams["assignment"])

    rec_rng = streams["recruitment"]
    recruited: list[np.ndarray] = []
    size = design.cluster_size
    for i in range(design.n_clusters):
        # gen_covariates lays subjects out contiguously by cluster.
        lo = i * size
        take = recruit_cluster(stratum[lo : lo + size], int(z_cluster[i]), design.quota, rec_rng)
        recruited.append(lo + take)
    idx = np.concatenate(recruited)

    y = gen_outcomes(
        cluster_id=cov.cluster_id[idx],
        x1=cov.x1[idx],
        x2=cov.x2[idx],
        stratum=stratum[idx],
        z_cluster=z_cluster,
        model=outcome_model,
        seed=streams["outcomes"],
    )
    return RecruitedSample(
        cluster_id=cov.cluster_id[idx],
        z=z_cluster[cov.cluster_id[idx]],
        x1=cov.x1[idx],
        x2=cov.x2[idx],
        y=y,
        stratum_truth=stratum[idx] if keep_truth else None,
    )


def generate_population(
    design: TrialDesign,
    strata_model: StrataLogitModel,
    outcome_model: OutcomeModel,
    seed,
) -> Population:
    """Stages 1-2 plus potential outcomes: the population an assignment acts on.

    Potential-outcome pairs are generated for always- and compliant-recruited
    subjects; never-recruited subjects keep ``nan`` outcomes.  Used to feed
    the brute-force oracle in :mod:`psbias.estimands`.
    """
    streams = stage_streams(seed)
    cov = gen_covariates(design, streams["covariates"])
    stratum = assign_strata(cov, strata_model, streams["strata"])
    n = design.n_population
    y1 = np.full(n, np.nan)
    y0 = np.full(n, np.nan)
    mask = stratum != PrincipalStratum.NEVER
    # z_cluster only routes the observed outcome, which we do not need here;
    # potentials come from the shared-noise pair directly.
    y1_m, y0_m = gen_outcomes(
        cluster_id=cov.cluster_id[mask],
        x1=cov.x1[mask],
        x2=cov.x2[mask],
        stratum=stratum[mask],
        z_cluster=np.zeros(design.n_clusters, dtype=np.int64),
        model=outcome_model,
        seed=streams["outcomes"],
        return_potentials=True,
    )
    y1[mask] = y1_m
    y0[mask] = y0_m
    return Population(
        cluster_id=cov.cluster_id,
        x1=cov.x1,
        x2=cov.x2,
        stratum=stratum,
        y1=y1,
        y0=y0,
    )


SAMPLE_CSV_COLUMNS = ("cluster_id", "z", "x1", "x2", "y")


def write_sample_csv(sample: RecruitedSample, path, reveal_truth: bool = False) -> None:
    """Write a recruited sample as CSV.

    Column order is fixed: ``cluster_id,z,x1,x2,y`` with ``stratum_truth``
    appended only on request (and only if the sample carries it).  Floats are
    written with full round-trip precision.
    """
    cols = list(SAMPLE_CSV_COLUMNS)
    if reveal_truth:
        if sample.stratum_truth is None:
            raise ValueError("sample carries no stratum truth to reveal")
        cols.append("stratum_truth")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(sample)):
            row = [
                str(int(sample.cluster_id[i])),
                str(int(sample.z[i])),
                repr(float(sample.x1[i])),
                repr(float(sample.x2[i])),
                repr(float(sample.y[i])),
            ]
            if reveal_truth:
                row.append(str(int(sample.stratum_truth[i])))
            fh.write(",".join(row) + "\n")


def read_sample_csv(path) -> RecruitedSample:
    """Read a CSV written by :func:`write_sample_csv`."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty sample file")
    has_truth = "stratum_truth" in rows[0]
    return RecruitedSample(
        cluster_id=np.array([int(r["cluster_id"]) for r in rows], dtype=np.int64),
        z=np.array([int(r["z"]) for r in rows], dtype=np.int64),
        x1=np.array([float(r["x1"]) for r in rows]),
        x2=np.array([float(r["x2"]) for r in rows]),
        y=np.array([float(r["y"]) for r in rows]),
        stratum_truth=(
            np.array([int(r["stratum_truth"]) for r in rows], dtype=np.int64)
            if has_truth
            else None
        ),
    )
