"""Repetitions, parallel seeds and aggregate verdicts."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .. import analytics as an
from ..parties import ADV, HON, RAT, Outcome
from ..pragthos import tx_inclusion_trial
from ..sim import run as run_sim
from .config import ScenarioSpec

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    scenario: str
    seed: int
    outcome: str
    payoff_hon: float = 0.0
    payoff_rat: float = 0.0
    payoff_adv: float = 0.0
    blocks_hon: int = 0
    blocks_rat: int = 0
    blocks_adv: int = 0
    theta_final: float = 1.0
    rounds: int = 0
    wall_ms: float = 0.0
    metrics: dict = field(default_factory=dict)
    error: Optional[str] = None


CSV_FIELDS = ("scenario", "seed", "outcome", "payoff_hon", "payoff_rat", "payoff_adv",
              "blocks_hon", "blocks_rat", "blocks_adv", "theta_final", "rounds", "wall_ms")


@dataclass
class Aggregate:
    scenario: str
    runs: int
    errors: int
    successes: int
    success_rate: float
    success_ci: tuple
    metrics: dict  # name -> mean over error-free runs
    spread: dict  # name -> sample standard deviation
    verdict: Optional[str] = None  # PASS / FAIL when the scenario carries a band
    failed_metric: Optional[str] = None

    def value(self, metric: str) -> float:
        if metric == "success_rate":
            return self.success_rate
        if metric in self.metrics:
            return self.metrics[metric]
        raise KeyError(f"unknown metric {metric!r}; have success_rate, {', '.join(sorted(self.metrics))}")


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def mean_ci(values, level: float = 0.95) -> tuple:
    """Student-t interval for the mean of independent runs."""
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        m = float(x.mean()) if len(x) else math.nan
        return m, m
    half = stats.t.ppf(0.5 + level / 2, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return float(x.mean() - half), float(x.mean() + half)


# ------------------------------------------------------------ single runs

def _simulate_one(spec: ScenarioSpec, seed: int) -> RunRecord:
    cfg = replace(spec.config, rng_seed=seed)
    t0 = time.perf_counter()
    try:
        res = run_sim(cfg)
    except Exception as exc:  # a faulty run is recorded, the batch goes on
        return RunRecord(spec.name, seed, "Error", wall_ms=(time.perf_counter() - t0) * 1e3,
                         error=f"{type(exc).__name__}: {exc}")
    wall = (time.perf_counter() - t0) * 1e3
    main = res.main_blocks_by_party
    metrics = {
        "adv_revenue_share": res.meta["adv_revenue_share"],
        "adv_block_share": res.meta["adv_block_share"],
        "main_height": res.main_height,
        "orphans": sum(res.orphan_blocks_by_party.values()),
        "rp_joined": int(any(d["joined"] for d in res.meta["rp_decisions"])),
        "valid_reveals": sum(r["valid"] for r in res.meta["reveals"]),
        "coin_adv": res.per_party_coin[ADV],
    }
    return RunRecord(spec.name, seed, res.attack_outcome.value,
                     res.per_party_payoff[HON], res.per_party_payoff[RAT], res.per_party_payoff[ADV],
                     main[HON], main[RAT], main[ADV], res.final_theta, res.rounds, wall, metrics)


def _tx_inclusion_one(spec: ScenarioSpec, seed: int, l: int) -> RunRecord:
    p = spec.params
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    trial = tx_inclusion_trial(rng, p["fee"], p["pool_share"], l, spec.repetitions, p["delta"])
    wall = (time.perf_counter() - t0) * 1e3
    ok = trial.mean <= trial.bound
    metrics = {"l": l, "mean_gap": trial.mean, "stderr": trial.stderr, "bound": trial.bound,
               "within_bound": int(ok)}
    return RunRecord(spec.name, seed, "Succeeded" if ok else "Failed", wall_ms=wall,
                     metrics=metrics)


def grid_points(spec: ScenarioSpec):
    p = spec.params
    return list(itertools.product(p["p_fr"], p["delta_adv"], p["vartheta"]))


def _grid_one(spec: ScenarioSpec, seed: int, point) -> RunRecord:
    p_fr, delta, vartheta = point
    lam = spec.params["capital_lambda"]
    a_opt = an.alpha_opt(p_fr, delta, vartheta)
    a_th = an.alpha_th(p_fr, vartheta)
    gap_opt = an.deflationary_payoff_gap(p_fr, delta, vartheta, lam, 1.0, 1.0, a_opt)
    gap_before = an.deflationary_payoff_gap(p_fr, delta, vartheta, lam, 1.0, 1.0, a_opt - 1)
    x_opt = delta / (p_fr + delta)
    floor_ok = vartheta ** a_opt < x_opt <= vartheta ** (a_opt - 1)
    th_ok = vartheta ** a_th < 1 - p_fr <= vartheta ** (a_th - 1)
    if spec.mode == "deflation":
        ok = gap_opt >= 0 and gap_before < 0
    else:
        ok = floor_ok and th_ok
    metrics = {"p_fr": p_fr, "delta_adv": delta, "vartheta": vartheta, "alpha_opt": a_opt,
               "alpha_th": a_th, "gap_at_opt": gap_opt, "gap_before_opt": gap_before,
               "floor_ok": int(floor_ok and th_ok), "holds": int(ok)}
    return RunRecord(spec.name, seed, "Succeeded" if ok else "Failed", metrics=metrics)


def _job(args):
    spec, seed, item = args
    if spec.mode == "simulate":
        return _simulate_one(spec, seed)
    if spec.mode == "tx_inclusion":
        return _tx_inclusion_one(spec, seed, item)
    return _grid_one(spec, seed, item)


def _jobs_for(spec: ScenarioSpec):
    if spec.mode == "simulate":
        return [(spec, spec.seed_base + i, None) for i in range(spec.repetitions)]
    if spec.mode == "tx_inclusion":
        return [(spec, spec.seed_base + i, l) for i, l in enumerate(spec.params["l_values"])]
    return [(spec, spec.seed_base + i, pt) for i, pt in enumerate(grid_points(spec))]


# ------------------------------------------------------------ batches

def aggregate(spec: ScenarioSpec, records) -> Aggregate:
    records = sorted(records, key=lambda r: r.seed)
    good = [r for r in records if r.error is None]
    wins = sum(r.outcome == Outcome.SUCCEEDED.value for r in good)
    n = len(good)
    base_cols = ("payoff_hon", "payoff_rat", "payoff_adv", "theta_final")
    cols = {k: [] for k in base_cols}
    for r in good:
        for k in base_cols:
            cols[k].append(getattr(r, k))
        for k, v in r.metrics.items():
            if isinstance(v, (int, float)):
                cols.setdefault(k, []).append(v)
    metrics = {k: float(np.mean(v)) for k, v in cols.items() if v}
    spread = {k: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for k, v in cols.items() if v}
    if spec.mode in ("tx_inclusion", "deflation", "horizon"):
        metrics["all_hold"] = float(n > 0 and wins == n)
    agg = Aggregate(spec.name, len(records), len(records) - n, wins,
                    wins / n if n else math.nan, clopper_pearson(wins, n), metrics, spread)
    if spec.expected is not None:
        try:
            value = agg.value(spec.expected.metric)
        except KeyError:
            value = math.nan
        ok = not math.isnan(value) and spec.expected.check(value)
        agg.verdict = "PASS" if ok else "FAIL"
        agg.failed_metric = None if ok else spec.expected.metric
    return agg


def run_scenario(spec: ScenarioSpec, parallelism: int = 1):
    """Run every repetition; returns ``(records, aggregate)``.

    Records come back sorted by seed, so the result does not depend on the
    worker count.
    """
    jobs = _jobs_for(spec)
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * parallelism))))
    else:
        records = [_job(j) for j in jobs]
    records.sort(key=lambda r: r.seed)
    for r in records:
        if r.error:
            log.warning("run %s seed %d failed: %s", r.scenario, r.seed, r.error)
    return records, aggregate(spec, records)


def run_sweep(spec: ScenarioSpec, parallelism: int = 1, path: Optional[str] = None,
              values=None):
    """Run the scenario once per sweep value; returns ``[(value, records, aggregate)]``."""
    if path is None:
        if spec.sweep is None:
            raise ValueError(f"scenario {spec.name!r} has no sweep")
        path, values = spec.sweep.path, spec.sweep.values
    out = []
    for v in values:
        sub = spec.with_value(path, v)
        sub.name = f"{spec.name}[{path}={v}]"
        recs, agg = run_scenario(sub, parallelism)
        out.append((v, recs, agg))
    return out
