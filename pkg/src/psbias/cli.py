"""Command line front end.

Subcommands:

* ``estimand``   closed-form target quantities for given stratum shares,
  effects, and randomization rate
* ``balance``    randomization rate equalizing expected recruited counts
* ``figure1``    the worked example, optionally re-derived by brute force
* ``simulate``   one simulated trial, written as CSV
* ``experiment`` scenario batch -> metrics CSV, optionally checked against
  reference bands

Probabilities and rates accept fractions (``1/3``) as well as decimals, and
are validated exactly as rationals, so share triples like ``1/3 1/3 1/3``
normalize with no rounding slack.  Every number printed is the corresponding
library return value formatted to six significant digits.

The environment variable ``PSBIAS_SEED`` supplies a default seed wherever a
``--seed`` option exists.
"""

from __future__ import annotations

import json
import sys
from fractions import Fraction

import click

from . import worked_example
from .core import DegenerateRecruitmentError, PrincipalEffects, StrataDistribution
from .estimands import (
    assignment_given_recruited,
    balanced_randomization_prob,
    complier_weight,
    overall_ate,
    recruited_ate,
    recruitment_rate,
)
from .harness import (
    bundled_scenarios,
    check_row,
    load_scenarios,
    run_scenario,
    write_metrics_csv,
)


class ProbParam(click.ParamType):
    """Probability in [0, 1], given as a decimal or a fraction like ``2/5``."""

    name = "prob"

    def convert(self, value, param, ctx):
        if isinstance(value, Fraction):
            frac = value
        else:
            try:
                frac = Fraction(str(value))
            except (ValueError, ZeroDivisionError):
                self.fail(f"{value!r} is not a number or fraction", param, ctx)
        if not 0 <= frac <= 1:
            self.fail(f"{value!r} is not in [0, 1]", param, ctx)
        return frac


PROB = ProbParam()


def _fmt(value: float) -> str:
    return f"{float(value):.6g}"


def _emit(payload: dict, fmt: str) -> None:
    if fmt == "json":
        click.echo(json.dumps({k: float(v) for k, v in payload.items()}, indent=2))
    else:
        width = max(len(k) for k in payload)
        for key, value in payload.items():
            click.echo(f"{key.ljust(width)}  {_fmt(value)}")


_format_option = click.option(
    "--format",
    "fmt",
    type=click.Choice(["table", "json"]),
    default="table",
    show_default=True,
    help="Output format.",
)


@click.group()
@click.version_option(package_name="psbias")
def main() -> None:
    """Recruitment-bias estimands and simulation experiments for cluster trials."""


@main.command()
@click.option("--pa", type=PROB, required=True, help="Always-recruited share.")
@click.option("--pc", type=PROB, required=True, help="Compliant-recruited share.")
@click.option("--pn", type=PROB, required=True, help="Never-recruited share.")
@click.option("--ta", type=float, required=True, help="Always-recruited effect.")
@click.option("--tc", type=float, required=True, help="Compliant-recruited effect.")
@click.option("--tn", type=float, default=None, help="Never-recruited effect (optional).")
@click.option("--r", "rate", type=PROB, required=True, help="Randomization rate.")
@_format_option
def estimand(pa, pc, pn, ta, tc, tn, rate, fmt) -> None:
    """Closed-form target quantities for one stratum configuration.

    Shares must sum to one exactly (fractions are compared as rationals).
    The population-wide average appears only when --tn is given; recruited-
    population quantities never need it.
    """
    total = pa + pc + pn
    if total != 1:
        raise click.UsageError(f"stratum shares must sum to 1, got {total}")
    dist = StrataDistribution(float(pa), float(pc), float(pn))
    effects = PrincipalEffects(tau_a=ta, tau_c=tc, tau_n=tn)
    r = float(rate)
    try:
        out = {
            "complier_weight": complier_weight(r, dist),
            "recruited_ate": recruited_ate(r, dist, effects),
            "recruitment_rate": recruitment_rate(r, dist),
        }
        p_t, p_c_arm = assignment_given_recruited(r, dist)
        out["p_treated_given_recruited"] = p_t
        out["p_control_given_recruited"] = p_c_arm
        if tn is not None:
            out["overall_ate"] = overall_ate(dist, effects)
    except DegenerateRecruitmentError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(out, fmt)


@main.command()
@click.option("--pa", type=PROB, required=True, help="Always-recruited share.")
@click.option("--pc", type=PROB, required=True, help="Compliant-recruited share.")
@_format_option
def balance(pa, pc, fmt) -> None:
    """Randomization rate giving equal expected recruited counts per arm."""
    dist = StrataDistribution(float(pa), float(pc), max(0.0, 1.0 - float(pa) - float(pc)))
    try:
        rate = balanced_randomization_prob(dist)
    except DegenerateRecruitmentError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit({"balanced_randomization_prob": rate}, fmt)


@main.command()
@click.option("--r", "rate", type=PROB, default=Fraction(1, 2), show_default=True,
              help="Randomization rate.")
@click.option("--oracle", is_flag=True,
              help="Also re-derive the quantities by brute-force simulation.")
@click.option("--seed", type=int, default=None, envvar="PSBIAS_SEED",
              help="Oracle seed (default 0; env PSBIAS_SEED).")
@_format_option
def figure1(rate, oracle, seed, fmt) -> None:
    """Worked example: three equal strata, constant outcomes, three answers.

    Prints the stratum effects, the population-wide average, the naive
    recruited-arm contrast, and the recruited-population average.  With
    --oracle, re-derives the last three by simulating assignments on an
    enumerated population of 300,000 subjects and reports agreement.
    """
    r = float(rate)
    summary = worked_example.summarize(r)
    out = {
        "tau_always": summary.tau_a,
        "tau_compliant": summary.tau_c,
        "tau_never": summary.tau_n,
        "overall_ate": summary.overall_ate,
        "naive_contrast": summary.naive_contrast,
        "recruited_ate": summary.recruited_ate,
    }
    if oracle:
        res = worked_example.oracle_check(r=r, seed=0 if seed is None else seed)
        out["oracle_recruited_ate"] = res.tau_r
        out["oracle_recruited_ate_se"] = res.tau_r_se
        out["oracle_overall_ate"] = res.tau_o
        out["oracle_naive_contrast"] = res.itt
    _emit(out, fmt)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Scenario config JSON (default: bundled grid).")
@click.option("--label", default=None,
              help="Scenario label to simulate (required when the config has several; "
                   "with duplicate labels, --icc disambiguates).")
@click.option("--icc", type=float, default=None, help="ICC to disambiguate --label.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="sample.csv",
              show_default=True, help="Output CSV path.")
@click.option("--reveal-truth", is_flag=True,
              help="Append the latent stratum column to the CSV.")
@click.option("--seed", type=int, default=None, envvar="PSBIAS_SEED",
              help="Override the scenario's master seed (env PSBIAS_SEED).")
def simulate(config_path, label, icc, out_path, reveal_truth, seed) -> None:
    """Simulate one trial from a scenario and write the recruited sample as CSV.

    Columns: cluster_id,z,x1,x2,y, plus stratum_truth with --reveal-truth.
    """
    from .datagen import simulate_trial, write_sample_csv

    scenarios = load_scenarios(config_path) if config_path else bundled_scenarios()
    if label is not None:
        scenarios = [s for s in scenarios if s.label == label]
        if icc is not None:
            scenarios = [s for s in scenarios if s.icc == icc]
        if not scenarios:
            raise click.UsageError(f"no scenario matches label {label!r}")
        if len(scenarios) > 1:
            raise click.UsageError(
                f"label {label!r} matches {len(scenarios)} scenarios; add --icc"
            )
    elif len(scenarios) > 1:
        raise click.UsageError("config has several scenarios; pick one with --label")
    sc = scenarios[0]
    use_seed = sc.master_seed if seed is None else seed
    sample = simulate_trial(
        sc.design(), sc.strata_model(), sc.outcome_model(), use_seed, keep_truth=True
    )
    write_sample_csv(sample, out_path, reveal_truth=reveal_truth)
    click.echo(
        f"wrote {len(sample)} recruited subjects "
        f"({sc.label}, icc={sc.icc:g}, seed={use_seed}) to {out_path}",
        err=True,
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Scenario config JSON (default: bundled grid).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="results.csv",
              show_default=True, help="Metrics CSV path.")
@click.option("--reps", type=int, default=None,
              help="Override every scenario's replicate count (smoke runs).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes; output is identical for any value.")
@click.option("--check/--no-check", default=False,
              help="Compare metrics to reference bands; exit 1 on failure. "
                   "Bands assume full replicate counts.")
@click.option("--no-truth-check", is_flag=True,
              help="Skip the brute-force cross-check of each scenario's truth.")
@click.option("--seed", type=int, default=None, envvar="PSBIAS_SEED",
              help="Override every scenario's master seed (env PSBIAS_SEED).")
def experiment(config_path, out_path, reps, jobs, check, no_truth_check, seed) -> None:
    """Run a scenario batch and write one metrics row per scenario.

    Output columns: label,icc,true_tau_r,pct_bias_signed,pct_bias_abs,mcsd,
    ese,cp,n_replicates,n_converged,master_seed.  Rows keep config order.
    """
    scenarios = load_scenarios(config_path) if config_path else bundled_scenarios()
    if seed is not None:
        from dataclasses import replace

        scenarios = [replace(s, master_seed=seed + i) for i, s in enumerate(scenarios)]
    if jobs < 1:
        raise click.UsageError("--jobs must be at least 1")

    rows = []
    failures = 0
    for sc in scenarios:
        row = run_scenario(
            sc, jobs=jobs, n_replicates=reps, check_truth=not no_truth_check
        )
        rows.append(row)
        click.echo(
            f"{row.label} icc={row.icc:g}: true={_fmt(row.true_tau_r)} "
            f"bias%={_fmt(row.pct_bias_signed)} mcsd={_fmt(row.mcsd)} "
            f"ese={_fmt(row.ese)} cp={_fmt(row.cp)} "
            f"converged={row.n_converged}/{row.n_replicates}",
            err=True,
        )
        if check:
            for metric, ok, detail in check_row(row):
                status = "ok" if ok else "FAIL"
                click.echo(f"  [{status}] {metric}: {detail}", err=True)
                failures += 0 if ok else 1
    write_metrics_csv(rows, out_path)
    click.echo(f"wrote {len(rows)} rows to {out_path}", err=True)
    if failures:
        click.echo(f"{failures} band check(s) failed", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
