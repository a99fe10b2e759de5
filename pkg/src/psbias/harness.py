"""Replication harness: scenario configs in, bias/coverage metric tables out.

A scenario bundles a trial design, a stratum-membership model, an outcome
model, a replicate count, and a master seed.  Running it simulates that many
independent trials, fits the mixed model to each, and summarizes the
estimator against the scenario's true recruited-population average effect:

* percent bias of the mean estimate (signed and absolute),
* Monte Carlo standard deviation of the estimates,
* mean of the model-based standard errors,
* coverage of the nominal 95 percent interval.

The truth is computed from the closed form fed with Monte Carlo stratum
shares, then independently cross-checked against the brute-force oracle on
freshly generated populations; disagreement beyond Monte Carlo error aborts
the scenario rather than reporting metrics against a wrong target.

Replicate k draws its seed as ``SeedSequence(master_seed, spawn_key=(k,))``,
so results are reproducible replicate by replicate and independent of how
replicates are distributed over worker processes.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .core import StrataDistribution, TrialDesign, TruthInconsistencyError
from .datagen import OutcomeModel, StrataLogitModel, simulate_trial, generate_population
from .estimands import brute_force_estimands, recruited_ate_quota
from .estimators import fit_lmm

__all__ = [
    "TRUTH_SEED",
    "Scenario",
    "TruthResult",
    "true_tau_r",
    "MetricsRow",
    "METRICS_CSV_COLUMNS",
    "run_scenario",
    "run_table1",
    "write_metrics_csv",
    "load_scenarios",
    "bundled_scenarios",
    "TABLE1_REFERENCE",
    "reference_for",
    "check_row",
]

log = logging.getLogger(__name__)

# Fixed seed for truth computation; truths are part of the reported table and
# must not depend on run options.
TRUTH_SEED = 1_000_003


@dataclass(frozen=True)
class Scenario:
    """One simulation cell: generative parameters, design, replication plan."""

    label: str
    mu_a: float
    mu_c: float
    tau_a: float
    tau_c: float
    lambda_a: tuple[float, float]
    lambda_c: tuple[float, float]
    beta_a: tuple[float, float, float]
    beta_c: tuple[float, float, float]
    icc: float
    n_clusters: int
    n_treated: int
    cluster_size: int
    quota: int
    n_replicates: int
    master_seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambda_a", tuple(float(v) for v in self.lambda_a))
        object.__setattr__(self, "lambda_c", tuple(float(v) for v in self.lambda_c))
        object.__setattr__(self, "beta_a", tuple(float(v) for v in self.beta_a))
        object.__setattr__(self, "beta_c", tuple(float(v) for v in self.beta_c))
        if len(self.beta_a) != 3 or len(self.beta_c) != 3:
            raise ValueError("beta_a and beta_c must be [intercept, coef_x1, coef_x2]")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        self.design()  # validates geometry

    def design(self) -> TrialDesign:
        return TrialDesign(
            n_clusters=self.n_clusters,
            cluster_size=self.cluster_size,
            quota=self.quota,
            n_treated=self.n_treated,
        )

    def strata_model(self) -> StrataLogitModel:
        return StrataLogitModel(
            intercept_a=self.beta_a[0],
            coef_a=(self.beta_a[1], self.beta_a[2]),
            intercept_c=self.beta_c[0],
            coef_c=(self.beta_c[1], self.beta_c[2]),
        )

    def outcome_model(self) -> OutcomeModel:
        return OutcomeModel.from_icc(
            mu_a=self.mu_a,
            tau_a=self.tau_a,
            lambda_a=self.lambda_a,
            mu_c=self.mu_c,
            tau_c=self.tau_c,
            lambda_c=self.lambda_c,
            icc=self.icc,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("lambda_a", "lambda_c", "beta_a", "beta_c"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        missing = known - set(d)
        if missing:
            raise ValueError(f"missing scenario fields: {sorted(missing)}")
        return cls(**d)


@dataclass(frozen=True)
class TruthResult:
    """True recruited-population average effect with its verification record."""

    tau_r: float
    dist: StrataDistribution
    se_closed: float
    oracle_tau_r: float | None
    oracle_se: float | None

    @property
    def checked(self) -> bool:
        return self.oracle_tau_r is not None


def _marginal_shares(
    model: StrataLogitModel, n_draws: int, rng: np.random.Generator
) -> tuple[StrataDistribution, np.ndarray]:
    """Monte Carlo stratum shares under the covariate marginals.

    Averages conditional membership probabilities over covariate draws
    (x1 marginally normal with variance 2, x2 Bernoulli 0.4), which has
    strictly smaller Monte Carlo error than sampling memberships.  Returns
    the share estimate and the 3x3 covariance matrix of the estimated means.
    """
    chunk = 250_000
    total = np.zeros(3)
    total_sq = np.zeros((3, 3))
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        x1 = rng.normal(0.0, np.sqrt(2.0), size=m)
        x2 = (rng.random(m) < 0.4).astype(np.float64)
        probs = model.stratum_probs(x1, x2)
        total += probs.sum(axis=0)
        total_sq += probs.T @ probs
        done += m
    mean = total / n_draws
    cov_draws = total_sq / n_draws - np.outer(mean, mean)
    return StrataDistribution(*mean), cov_draws / n_draws


def _truth_key(scenario: Scenario, n_draws: int) -> tuple:
    return (
        scenario.beta_a,
        scenario.beta_c,
        scenario.tau_a,
        scenario.tau_c,
        scenario.n_clusters,
        scenario.n_treated,
        scenario.cluster_size,
        scenario.quota,
        n_draws,
    )


_TRUTH_CACHE: dict[tuple, TruthResult] = {}


def true_tau_r(
    scenario: Scenario,
    n_draws: int = 2_000_000,
    check_oracle: bool = True,
    n_populations: int = 30,
    n_assignments: int = 4,
    truth_seed: int = TRUTH_SEED,
) -> TruthResult:
    """True recruited-population average effect for a scenario.

    Closed-form route: Monte Carlo stratum shares under the covariate
    marginals feed the fixed-quota weighting of the stratum effects.  Oracle
    route (on by default): generate ``n_populations`` fresh populations,
    apply the assignment and recruitment mechanism literally, and average.
    The two routes must agree within 3 combined Monte Carlo standard errors;
    otherwise :class:`TruthInconsistencyError` is raised, because every
    downstream metric would be measured against a wrong target.

    Results are cached per process keyed by the generative parameters that
    matter (stratum model, design geometry, stratum effects).
    """
    key = _truth_key(scenario, n_draws)
    cached = _TRUTH_CACHE.get(key)
    if cached is not None and (cached.checked or not check_oracle):
        return cached

    ss = np.random.SeedSequence(truth_seed)
    draws_ss, oracle_ss = ss.spawn(2)
    model = scenario.strata_model()
    dist, cov = _marginal_shares(model, n_draws, np.random.default_rng(draws_ss))
    design = scenario.design()
    f = design.treated_fraction
    closed = recruited_ate_quota(f, dist, scenario.outcome_model().effects())

    # Delta method for the closed value's own Monte Carlo error: the weight
    # depends on shares only through w = f * p_c / (p_a + p_c).
    denom = dist.p_a + dist.p_c
    dw_dpa = -f * dist.p_c / denom**2
    dw_dpc = f * dist.p_a / denom**2
    grad = np.array([dw_dpa, dw_dpc, 0.0]) * (scenario.tau_c - scenario.tau_a)
    se_closed = float(np.sqrt(max(grad @ cov @ grad, 0.0)))

    oracle_mean = None
    oracle_se = None
    if check_oracle:
        pop_seeds = oracle_ss.spawn(n_populations)
        means = np.empty(n_populations)
        for j, child in enumerate(pop_seeds):
            pop_ss, assign_ss = child.spawn(2)
            pop = generate_population(
                design, model, scenario.outcome_model(), seed=pop_ss
            )
            res = brute_force_estimands(
                pop, design, n_assignments=n_assignments, seed=assign_ss
            )
            means[j] = res.tau_r
        oracle_mean = float(means.mean())
        oracle_se = float(means.std(ddof=1) / np.sqrt(n_populations))
        tol = 3.0 * float(np.hypot(se_closed, oracle_se)) + 1e-9
        if abs(closed - oracle_mean) > tol:
            raise TruthInconsistencyError(
                f"scenario {scenario.label!r}: closed-form truth {closed:.6f} and "
                f"brute-force oracle {oracle_mean:.6f} differ by "
                f"{abs(closed - oracle_mean):.6f} (> {tol:.6f}); refusing to "
                "report metrics against an unverified target"
            )

    result = TruthResult(
        tau_r=float(closed),
        dist=dist,
        se_closed=se_closed,
        oracle_tau_r=oracle_mean,
        oracle_se=oracle_se,
    )
    _TRUTH_CACHE[key] = result
    return result


METRICS_CSV_COLUMNS = (
    "label",
    "icc",
    "true_tau_r",
    "pct_bias_signed",
    "pct_bias_abs",
    "mcsd",
    "ese",
    "cp",
    "n_replicates",
    "n_converged",
    "master_seed",
)


@dataclass(frozen=True)
class MetricsRow:
    """Summary metrics for one scenario run."""

    label: str
    icc: float
    true_tau_r: float
    pct_bias_signed: float
    pct_bias_abs: float
    mcsd: float
    ese: float
    cp: float
    n_replicates: int
    n_converged: int
    master_seed: int

    @property
    def flagged(self) -> bool:
        """True when more than 1 percent of fits failed to converge."""
        return self.n_converged < 0.99 * self.n_replicates

    def as_csv_values(self) -> list[str]:
        return [
            self.label,
            repr(float(self.icc)),
            repr(float(self.true_tau_r)),
            repr(float(self.pct_bias_signed)),
            repr(float(self.pct_bias_abs)),
            repr(float(self.mcsd)),
            repr(float(self.ese)),
            repr(float(self.cp)),
            str(self.n_replicates),
            str(self.n_converged),
            str(self.master_seed),
        ]


def _replicate_indices(scenario_dict: dict, indices: list[int]):
    """Worker: run the listed replicates of a scenario.

    Top level so process pools can pickle it.  Returns per-replicate arrays
    keyed by the replicate index, never by completion order.
    """
    scenario = Scenario.from_dict(scenario_dict)
    design = scenario.design()
    strata_model = scenario.strata_model()
    outcome_model = scenario.outcome_model()
    out = np.empty((len(indices), 4))
    conv = np.empty(len(indices), dtype=bool)
    for j, k in enumerate(indices):
        seed = np.random.SeedSequence(scenario.master_seed, spawn_key=(k,))
        sample = simulate_trial(design, strata_model, outcome_model, seed, keep_truth=False)
        fit = fit_lmm(sample, adjust_covariates=True)
        out[j] = (fit.estimate, fit.se, fit.ci_low, fit.ci_high)
        conv[j] = fit.converged
    return indices, out, conv


def run_scenario(
    scenario: Scenario,
    jobs: int = 1,
    n_replicates: int | None = None,
    check_truth: bool = True,
    truth: TruthResult | None = None,
) -> MetricsRow:
    """Simulate, fit, and summarize one scenario.

    ``jobs`` distributes replicates over processes; outputs are identical for
    any job count because replicate seeds and result slots depend only on the
    replicate index.  ``n_replicates`` overrides the scenario's plan (for
    smoke runs).  A precomputed ``truth`` skips the truth computation.
    """
    reps = scenario.n_replicates if n_replicates is None else int(n_replicates)
    if reps < 2:
        raise ValueError("need at least 2 replicates for a spread estimate")
    if truth is None:
        truth = true_tau_r(scenario, check_oracle=check_truth)
    if truth.tau_r == 0.0:
        raise ValueError("true effect is zero; percent bias is undefined")

    est = np.empty((reps, 4))
    conv = np.empty(reps, dtype=bool)
    indices = list(range(reps))
    if jobs <= 1:
        idx, vals, cv = _replicate_indices(scenario.to_dict(), indices)
        est[idx] = vals
        conv[idx] = cv
    else:
        chunks = [list(c) for c in np.array_split(indices, jobs * 4) if len(c)]
        sdict = scenario.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for idx, vals, cv in pool.map(
                _replicate_indices, [sdict] * len(chunks), chunks
            ):
                est[idx] = vals
                conv[idx] = cv

    used = est[conv]
    n_conv = int(conv.sum())
    if n_conv < 2:
        raise RuntimeError(f"scenario {scenario.label!r}: fewer than 2 converged fits")
    mean_est = used[:, 0].mean()
    bias = 100.0 * (mean_est - truth.tau_r) / truth.tau_r
    row = MetricsRow(
        label=scenario.label,
        icc=scenario.icc,
        true_tau_r=truth.tau_r,
        pct_bias_signed=float(bias),
        pct_bias_abs=float(abs(bias)),
        mcsd=float(used[:, 0].std(ddof=1)),
        ese=float(used[:, 1].mean()),
        cp=float(
            100.0 * np.mean((used[:, 2] <= truth.tau_r) & (truth.tau_r <= used[:, 3]))
        ),
        n_replicates=reps,
        n_converged=n_conv,
        master_seed=scenario.master_seed,
    )
    if row.flagged:
        log.warning(
            "scenario %s (icc=%s): %d of %d fits converged; metrics use converged fits only",
            row.label,
            row.icc,
            n_conv,
            reps,
        )
    return row


def run_table1(
    scenarios: list[Scenario] | None = None,
    jobs: int = 1,
    n_replicates: int | None = None,
    check_truth: bool = True,
    progress=None,
) -> list[MetricsRow]:
    """Run a batch of scenarios in config order.

    ``progress``, when given, is called with one line per finished scenario.
    """
    if scenarios is None:
        scenarios = bundled_scenarios()
    rows = []
    for sc in scenarios:
        row = run_scenario(
            sc, jobs=jobs, n_replicates=n_replicates, check_truth=check_truth
        )
        rows.append(row)
        if progress is not None:
            progress(
                f"{row.label} icc={row.icc:g}: true={row.true_tau_r:.4f} "
                f"bias%={row.pct_bias_signed:+.2f} mcsd={row.mcsd:.4f} "
                f"ese={row.ese:.4f} cp={row.cp:.1f}"
            )
    return rows


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    """Write metric rows as CSV with a fixed header and full float precision.

    Output bytes depend only on the rows, so runs with different worker
    counts produce identical files.
    """
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row.as_csv_values()) + "\n")


def load_scenarios(source) -> list[Scenario]:
    """Load scenarios from a JSON file path or parsed JSON data.

    Accepts either a bare list of scenario objects or ``{"scenarios": [...]}``.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "read"):
        if hasattr(source, "read"):
            data = json.load(source)
        else:
            with open(source) as fh:
                data = json.load(fh)
    else:
        data = source
    if isinstance(data, dict):
        data = data.get("scenarios", data)
    if not isinstance(data, list) or not data:
        raise ValueError("scenario config must be a non-empty list of scenario objects")
    return [Scenario.from_dict(d) for d in data]


def bundled_scenarios() -> list[Scenario]:
    """The packaged 20-cell benchmark grid (10 parameter rows at two ICC levels)."""
    text = resources.files("psbias").joinpath("data/table1.json").read_text()
    return load_scenarios(json.loads(text))


# Published reference metrics per (label, icc): percent bias, Monte Carlo SD,
# mean estimated SE, and coverage of the nominal 95 percent interval.
# Coverage references for the heterogeneous rows assume a normal critical
# value; the shipped estimator uses a t critical value (see estimators), which
# shifts mid-range coverages upward, so band checks treat coverage separately.
TABLE1_REFERENCE: dict[tuple[str, float], dict[str, float]] = {
    ("i.1", 0.01): {"bias": 0.02, "mcsd": 0.078, "ese": 0.075, "cp": 95.4},
    ("i.1", 0.1): {"bias": 1.36, "mcsd": 0.152, "ese": 0.150, "cp": 94.3},
    ("i.2", 0.01): {"bias": 0.01, "mcsd": 0.078, "ese": 0.075, "cp": 95.4},
    ("i.2", 0.1): {"bias": 0.34, "mcsd": 0.152, "ese": 0.150, "cp": 94.3},
    ("ii.1", 0.01): {"bias": 215.03, "mcsd": 0.081, "ese": 0.078, "cp": 0.1},
    ("ii.1", 0.1): {"bias": 216.41, "mcsd": 0.153, "ese": 0.151, "cp": 20.2},
    ("ii.2", 0.01): {"bias": 53.77, "mcsd": 0.081, "ese": 0.080, "cp": 0.1},
    ("ii.2", 0.1): {"bias": 53.42, "mcsd": 0.153, "ese": 0.152, "cp": 21.4},
    ("ii.3", 0.01): {"bias": 39.15, "mcsd": 0.079, "ese": 0.076, "cp": 62.5},
    ("ii.3", 0.1): {"bias": 39.99, "mcsd": 0.152, "ese": 0.150, "cp": 84.6},
    ("ii.4", 0.01): {"bias": 19.22, "mcsd": 0.079, "ese": 0.077, "cp": 63.2},
    ("ii.4", 0.1): {"bias": 18.81, "mcsd": 0.152, "ese": 0.151, "cp": 86.4},
    ("ii.5", 0.01): {"bias": 169.82, "mcsd": 0.086, "ese": 0.083, "cp": 0.0},
    ("ii.5", 0.1): {"bias": 170.66, "mcsd": 0.156, "ese": 0.153, "cp": 5.5},
    ("ii.6", 0.01): {"bias": 44.89, "mcsd": 0.078, "ese": 0.076, "cp": 3.9},
    ("ii.6", 0.1): {"bias": 45.30, "mcsd": 0.152, "ese": 0.150, "cp": 48.9},
    ("ii.7", 0.01): {"bias": 180.59, "mcsd": 0.088, "ese": 0.084, "cp": 0.0},
    ("ii.7", 0.1): {"bias": 181.43, "mcsd": 0.157, "ese": 0.154, "cp": 4.0},
    ("ii.8", 0.01): {"bias": 39.61, "mcsd": 0.079, "ese": 0.076, "cp": 8.8},
    ("ii.8", 0.1): {"bias": 40.02, "mcsd": 0.152, "ese": 0.150, "cp": 57.4},
}


def reference_for(label: str, icc: float) -> dict[str, float] | None:
    return TABLE1_REFERENCE.get((label, float(icc)))


def check_row(row: MetricsRow) -> list[tuple[str, bool, str]]:
    """Compare a metrics row against its reference bands.

    Returns ``(metric, ok, detail)`` triples; empty when the row has no
    reference.  Bands (designed for full replicate counts):

    * homogeneous rows: absolute percent bias below 3, coverage within
      [93, 97.5], spread metrics within 12 percent of reference;
    * heterogeneous rows: percent bias within the wider of 15 percent of the
      reference or 5 points, spread metrics within 12 percent of reference.
      Coverage is not checked there: the reference assumes a normal critical
      value while the estimator deliberately uses a t one.
    """
    ref = reference_for(row.label, row.icc)
    if ref is None:
        return []
    checks: list[tuple[str, bool, str]] = []
    homogeneous = row.label.startswith("i.")
    if homogeneous:
        checks.append(
            (
                "pct_bias_abs",
                row.pct_bias_abs < 3.0,
                f"{row.pct_bias_abs:.2f} (want < 3)",
            )
        )
        checks.append(
            (
                "cp",
                93.0 <= row.cp <= 97.5,
                f"{row.cp:.2f} (want 93..97.5)",
            )
        )
    else:
        # References report bias magnitude; the sign tracks which stratum's
        # outcome model dominates the treated arm.
        half = max(0.15 * abs(ref["bias"]), 5.0)
        lo, hi = abs(ref["bias"]) - half, abs(ref["bias"]) + half
        checks.append(
            (
                "pct_bias_abs",
                lo <= row.pct_bias_abs <= hi,
                f"{row.pct_bias_abs:.2f} (want {lo:.2f}..{hi:.2f})",
            )
        )
    for metric in ("mcsd", "ese"):
        lo, hi = 0.88 * ref[metric], 1.12 * ref[metric]
        value = getattr(row, metric)
        checks.append(
            (metric, lo <= value <= hi, f"{value:.4f} (want {lo:.4f}..{hi:.4f})")
        )
    return checks
