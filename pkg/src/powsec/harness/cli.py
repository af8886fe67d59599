"""Command line entry point: ``powsec <command>``."""

from __future__ import annotations

import json
import logging
import math
import sys

import click
import numpy as np

from .. import analytics as an
from .. import pragthos as pg
from ..chain import Transaction
from .catalog import list_scenarios, load_scenario, resolve, scenario_text
from .config import ConfigError
from .output import FORMATS, OutputError, emit_results
from .runner import run_scenario, run_sweep

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_common = [
    click.option("--config", "config", envvar="POWSEC_CONFIG", required=True,
                 help="Scenario TOML file or built-in scenario name."),
    click.option("--seed", type=int, envvar="POWSEC_SEED", default=None,
                 help="Override the scenario's seed base."),
    click.option("--reps", type=click.IntRange(min=1), envvar="POWSEC_REPS", default=None,
                 help="Override the repetition count."),
    click.option("--jobs", type=click.IntRange(min=1), envvar="POWSEC_JOBS", default=1,
                 show_default=True, help="Worker processes."),
    click.option("--out", type=click.Path(dir_okay=False), envvar="POWSEC_OUT", default=None,
                 help="Write one record per run to this file."),
    click.option("--format", "fmt", type=click.Choice(FORMATS), envvar="POWSEC_FORMAT",
                 default="csv", show_default=True),
]


def common_options(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


def _load(config, seed, reps):
    try:
        spec = resolve(config)
        if seed is not None or reps is not None:
            spec = spec.overridden(repetitions=reps, seed_base=seed)
    except (ConfigError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) else str(exc)
        click.echo(f"config error: {msg}", err=True)
        sys.exit(EXIT_CONFIG)
    return spec


def _report(agg) -> None:
    lo, hi = agg.success_ci
    click.echo(f"scenario {agg.scenario}: runs={agg.runs} errors={agg.errors}")
    click.echo(f"  success_rate {agg.success_rate:.4f}  95% CI [{lo:.4f}, {hi:.4f}]")
    for k in sorted(agg.metrics):
        click.echo(f"  {k} {agg.metrics[k]:.6g} (sd {agg.spread.get(k, 0.0):.3g})")
    if agg.verdict is not None:
        line = f"  verdict {agg.verdict}"
        if agg.failed_metric:
            line += f" ({agg.failed_metric} outside the expected band)"
        click.echo(line)


def _write(records, out, fmt) -> None:
    if out is None:
        return
    try:
        emit_results(records, out, fmt)
    except OutputError as exc:
        click.echo(f"output error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"wrote {len(records)} records to {out}")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log every defaulted parameter.")
def main(verbose):
    """Proof-of-work attack simulator and bound calculator."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--tau-min", type=float, default=0.25, show_default=True)
@click.option("--beta-adv", type=float, default=0.46, show_default=True)
@click.option("--lam", type=int, default=200, show_default=True)
@click.option("--rho", type=int, default=5, show_default=True)
@click.option("--mu", type=float, default=0.2, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), envvar="POWSEC_OUT", default=None)
@click.option("--format", "fmt", type=click.Choice(FORMATS), envvar="POWSEC_FORMAT", default="csv")
def bounds(tau_min, beta_adv, lam, rho, mu, out, fmt):
    """Closed-form thresholds only; no simulation."""
    try:
        rep = an.bounds_report(tau_min=tau_min, beta_adv=beta_adv, lam=lam, rho=rho)
        k_real, k_floor = pg.k_th_compute(0.4, rho, mu)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    rep["pcmod_k_th"] = k_real
    rep["pcmod_k_th_floor"] = k_floor
    inc = pg.poi_inclusion_probability(0.4, k_floor)
    rep["pcmod_poi_inclusion"] = inc.exact
    rep["pcmod_poi_inclusion_bound"] = inc.bound
    rep["tx_inclusion_bound_l8"] = pg.epsilon_g_bound(1.0, 8)
    for k, v in rep.items():
        click.echo(f"{k} {_fmt(v)}")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            if fmt == "csv":
                fh.write("name,value\n")
                for k, v in rep.items():
                    fh.write(f"{k},{v}\n")
            else:
                for k, v in rep.items():
                    fh.write(json.dumps({"name": k, "value": v}) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@main.command()
@common_options
def simulate(config, seed, reps, jobs, out, fmt):
    """Run one scenario's repetitions and check its expected band."""
    spec = _load(config, seed, reps)
    records, agg = run_scenario(spec, jobs)
    _report(agg)
    _write(records, out, fmt)
    sys.exit(EXIT_FAIL if agg.verdict == "FAIL" else EXIT_OK)


@main.command()
@common_options
@click.option("--param", default=None, help="Dotted parameter path to sweep.")
@click.option("--values", default=None, help="Comma-separated values for --param.")
def sweep(config, seed, reps, jobs, out, fmt, param, values):
    """Run a scenario across a grid of one parameter."""
    spec = _load(config, seed, reps)
    vals = None
    if param is not None:
        if not values:
            click.echo("config error: --param needs --values", err=True)
            sys.exit(EXIT_CONFIG)
        vals = [_number(v) for v in values.split(",")]
    try:
        results = run_sweep(spec, jobs, param, vals)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    all_records = []
    failed = False
    for value, records, agg in results:
        _report(agg)
        all_records.extend(records)
        failed |= agg.verdict == "FAIL"
    _write(all_records, out, fmt)
    sys.exit(EXIT_FAIL if failed else EXIT_OK)


def _number(s):
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        return float(s)


@main.command()
@click.option("--seed", type=int, envvar="POWSEC_SEED", default=7, show_default=True)
@click.option("--reps", type=click.IntRange(min=1), envvar="POWSEC_REPS", default=100_000,
              show_default=True, help="Monte Carlo trials per check.")
def oracle(seed, reps):
    """Brute-force and Monte Carlo checks against the closed forms."""
    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    for phi in (0.5, 0.8, 0.9, 1.25):
        for rho in (3, 6, 10):
            for k in range(rho + 1):
                d = abs(an.gamblers_ruin_oracle(phi, rho, k) - an.gamblers_ruin_closed_form(phi, rho, k))
                worst = max(worst, d)
    rows.append(("gamblers_ruin max |oracle - closed form|", worst, 1e-9))
    mc = an.gamblers_ruin_mc(0.8, 6, 2, reps, rng)
    rows.append(("gamblers_ruin mc(0.8, 6, 2) - closed form",
                 mc - an.gamblers_ruin_closed_form(0.8, 6, 2), 0.01))
    es = an.selfish_revenue_mc(0.3, 0.5, reps, rng)
    rows.append(("selfish revenue mc(0.3, 0.5) - closed form",
                 es - an.selfish_revenue_closed_form(0.3, 0.5), 0.01))
    win = pg.simulate_poi_windows(rng, 0.4, 5, reps)
    rows.append(("poi windows(0.4, 5) - exact", win.own - pg.poi_inclusion_probability(0.4, 5).exact,
                 0.02))
    tx = Transaction.normal(b"oracle", 1.0)
    hits = sum(pg.c1_filter(tx, rng.bytes(32), b"parent", 8) for _ in range(1 << 16))
    rows.append(("c1 acceptance(l=8) - 2^-8", hits / (1 << 16) - 2 ** -8,
                 3 * math.sqrt(2 ** -8 * (1 - 2 ** -8) / (1 << 16))))
    for name, delta, tol in rows:
        status = "" if tol is None else ("ok" if abs(delta) <= tol else "OFF")
        click.echo(f"{name}: {delta:+.3e} {status}".rstrip())
    bad = any(tol is not None and abs(d) > tol for _, d, tol in rows)
    sys.exit(EXIT_FAIL if bad else EXIT_OK)


@main.command()
@click.option("--show", default=None, help="Print one scenario's TOML.")
def catalog(show):
    """List the built-in scenarios."""
    if show:
        try:
            click.echo(scenario_text(show), nl=False)
        except KeyError as exc:
            click.echo(f"config error: {exc.args[0]}", err=True)
            sys.exit(EXIT_CONFIG)
        return
    for name in list_scenarios():
        spec = load_scenario(name)
        click.echo(f"{name:20s} {spec.mode:12s} {spec.description}")


if __name__ == "__main__":
    main()
