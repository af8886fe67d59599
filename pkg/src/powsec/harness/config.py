"""Scenario files: TOML in, validated :class:`ScenarioSpec` out."""

from __future__ import annotations

import copy
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..chain import EpochParams, RewardSchedule
from ..pragthos import PragthosConfig
from ..sim.config import ConfigInvalid, MinerPopulation, NetworkMode, SimConfig, TxArrival
from .. import strategies as st

log = logging.getLogger(__name__)

MODES = ("simulate", "tx_inclusion", "deflation", "horizon")


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    def __init__(self, msg: str, line: Optional[int] = None, col: Optional[int] = None,
                 path: Optional[str] = None):
        self.line, self.col, self.path = line, col, path
        where = f"{path or '<string>'}:{line}:{col}" if line is not None else (path or "<string>")
        super().__init__(f"{where}: {msg}")


class ValidationError(ConfigError):
    def __init__(self, field_name: str, constraint: str):
        self.field = field_name
        self.constraint = constraint
        super().__init__(f"{field_name}: {constraint}")


@dataclass(frozen=True)
class Sweep:
    path: str
    values: tuple


@dataclass(frozen=True)
class Band:
    metric: str
    lower: float = -math.inf
    upper: float = math.inf

    def check(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass
class ScenarioSpec:
    name: str
    config: Optional[SimConfig]
    repetitions: int = 1
    seed_base: int = 0
    sweep: Optional[Sweep] = None
    expected: Optional[Band] = None
    mode: str = "simulate"
    params: dict = field(default_factory=dict)  # mode-specific settings outside SimConfig
    description: str = ""
    raw: dict = field(default_factory=dict)
    defaults: list = field(default_factory=list)  # "section.key = value" for every filled default

    def with_value(self, path: str, value) -> "ScenarioSpec":
        """A copy with one dotted parameter replaced, validated again."""
        raw = copy.deepcopy(self.raw)
        set_path(raw, path, value)
        if path in ("population.beta_adv", "population.beta_rat") and self.mode == "simulate":
            # the honest share absorbs whatever the swept share frees up
            pop = raw.setdefault("population", {})
            pop["beta_hon"] = 1.0 - pop.get("beta_rat", 0.0) - pop.get("beta_adv", 0.0)
        raw.pop("sweep", None)
        return spec_from_dict(raw, quiet=True)

    def overridden(self, *, repetitions: Optional[int] = None,
                   seed_base: Optional[int] = None) -> "ScenarioSpec":
        raw = copy.deepcopy(self.raw)
        if repetitions is not None:
            raw["repetitions"] = repetitions
        if seed_base is not None:
            raw["seed_base"] = seed_base
        return spec_from_dict(raw, quiet=True)


# ------------------------------------------------------------ dict helpers

def set_path(d: dict, path: str, value) -> None:
    parts = path.split(".")
    cur = d
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ValidationError(path, f"{p} is not a table")
        cur = nxt
    cur[parts[-1]] = value


class _Reader:
    """Pulls typed values out of one TOML table, recording defaults and leftovers."""

    def __init__(self, table: dict, section: str, defaults: list):
        if not isinstance(table, dict):
            raise ValidationError(section, "must be a table")
        self.table = dict(table)
        self.section = section
        self.defaults = defaults

    def _name(self, key):
        return f"{self.section}.{key}" if self.section else key

    def get(self, key, kind, default=..., check=None, constraint=""):
        name = self._name(key)
        if key in self.table:
            v = self.table.pop(key)
            if kind is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
                raise ValidationError(name, f"expected {getattr(kind, '__name__', kind)}, got {v!r}")
        elif default is ...:
            raise ValidationError(name, "is required")
        else:
            v = default
            self.defaults.append(f"{name} = {v!r}")
        if check is not None and v is not None and not check(v):
            raise ValidationError(name, constraint or "out of range")
        return v

    def done(self):
        if self.table:
            raise ValidationError(self._name(sorted(self.table)[0]), "unknown key")


# ------------------------------------------------------------ strategies

_KINDS = {
    "Honest": st.Honest,
    "RationalConditional": st.RationalConditional,
    "TransactionWithholding": st.TransactionWithholding,
    "DifficultyAltering": st.DifficultyAltering,
    "QuickFork": st.QuickFork,
    "SelfishMiningBribing": st.SelfishMiningBribing,
    "GoldfingerOverlay": st.GoldfingerOverlay,
}


def strategy_from(value, name: str):
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict) or "kind" not in value:
        raise ValidationError(name, "needs a kind")
    args = dict(value)
    kind = args.pop("kind")
    cls = _KINDS.get(kind)
    if cls is None:
        raise ValidationError(name, f"unknown strategy {kind!r}; choose from {sorted(_KINDS)}")
    if "inner" in args:
        args["inner"] = strategy_from(args["inner"], f"{name}.inner")
    try:
        return cls(**args)
    except TypeError as exc:
        raise ValidationError(name, str(exc)) from None
    except ValueError as exc:
        raise ValidationError(name, str(exc)) from None


def strategy_to_dict(kind) -> dict:
    out = {"kind": type(kind).__name__}
    for k, v in vars(kind).items():
        out[k] = strategy_to_dict(v) if k == "inner" else v
    return out


# ------------------------------------------------------------ top level

def _positive(v):
    return v > 0


def _unit(v):
    return 0.0 <= v <= 1.0


def build_sim_config(raw: dict, defaults: list) -> SimConfig:
    pop_r = _Reader(raw.get("population", {}), "population", defaults)
    beta_adv = pop_r.get("beta_adv", float, 0.0, _unit, "must lie in [0, 1]")
    beta_rat = pop_r.get("beta_rat", float, 0.0, _unit, "must lie in [0, 1]")
    beta_hon = pop_r.get("beta_hon", float, 1.0 - beta_adv - beta_rat, _unit, "must lie in [0, 1]")
    n = pop_r.get("n", int, 100, _positive, "must be positive")
    q = pop_r.get("q", int, 1, _positive, "must be positive")
    pop_r.done()
    total = beta_hon + beta_rat + beta_adv
    if abs(total - 1.0) > 1e-12:
        raise ValidationError("population", f"beta_hon + beta_rat + beta_adv must equal 1 (got {total:.12g})")

    run_r = _Reader(raw.get("run", {}), "run", defaults)
    interval = run_r.get("block_interval", int, 60, _positive, "must be positive")
    max_rounds = run_r.get("max_rounds", int, 10_000_000, _positive, "must be positive")
    max_height = run_r.get("max_height", int, None, _positive, "must be positive")
    network = run_r.get("network", str, "FrontRunning",
                        lambda v: v in {m.value for m in NetworkMode}, "Immediate or FrontRunning")
    random_ties = run_r.get("random_ties", bool, False)
    stop = run_r.get("stop_on_outcome", bool, True)
    exact = run_r.get("exact_rounds", bool, False)
    init_diff = run_r.get("initial_difficulty", float, 1.0, _positive, "must be positive")
    run_r.done()

    epoch = None
    if "epoch" in raw:
        ep_r = _Reader(raw["epoch"], "epoch", defaults)
        lam = ep_r.get("lam", int, check=_positive, constraint="must be positive")
        tau_min = ep_r.get("tau_min", float, 0.25, lambda v: 0 < v <= 1, "must lie in (0, 1]")
        tau_max = ep_r.get("tau_max", float, 4.0, lambda v: v >= 1, "must be at least 1")
        ep_r.done()
        epoch = EpochParams(lam, tau_min, tau_max, interval)

    rw_r = _Reader(raw.get("rewards", {}), "rewards", defaults)
    r0 = rw_r.get("r0", float, 50.0, lambda v: v >= 0, "must be non-negative")
    cap = rw_r.get("capital_lambda", int, 210_000, _positive, "must be positive")
    family = rw_r.get("family", str, "constant",
                      lambda v: v in ("constant", "geometric", "harmonic", "custom"),
                      "constant, geometric, harmonic or custom")
    vartheta = rw_r.get("vartheta", float, 1.0, _positive, "must be positive")
    values = tuple(rw_r.get("values", list, []))
    rw_r.done()
    try:
        rewards = RewardSchedule(r0, cap, family, vartheta, values)
    except ValueError as exc:
        raise ValidationError("rewards", str(exc)) from None

    ex_r = _Reader(raw.get("externality", {}), "externality", defaults)
    e_f = ex_r.get("e_fairness", float, 0.1, lambda v: 0 < v < 1, "must lie in (0, 1)")
    e_s = ex_r.get("e_security", float, 0.01, lambda v: 0 < v < e_f, "must lie in (0, e_fairness)")
    rho = ex_r.get("rho", int, 6, _positive, "must be positive")
    cr = ex_r.get("cr", float, 1.0, _positive, "must be positive")
    window = ex_r.get("fairness_window", int, None, _positive, "must be positive")
    mult = ex_r.get("bribe_multiple", float, 10.0, _positive, "must be positive")
    ex_r.done()

    co_r = _Reader(raw.get("costs", {}), "costs", defaults)
    chi = co_r.get("chi", float, 0.0, lambda v: v >= 0, "must be non-negative")
    chi1 = co_r.get("chi1", float, 0.0, lambda v: v >= 0, "must be non-negative")
    co_r.done()

    pg_r = _Reader(raw.get("pragthos", {}), "pragthos", defaults)
    prag = PragthosConfig(
        pc_mod=pg_r.get("pc_mod", bool, False),
        tau_clamp=pg_r.get("tau_clamp", bool, False),
        tx_inclusion=pg_r.get("tx_inclusion", bool, False),
        mu=pg_r.get("mu", float, 0.2, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        l=pg_r.get("l", int, 8, lambda v: 0 <= v <= 256, "must lie in [0, 256]"),
        divert_fraction=pg_r.get("divert_fraction", float, 1.0, _unit, "must lie in [0, 1]"),
        broadcast_poi=pg_r.get("broadcast_poi", bool, True),
    )
    pg_r.done()

    strat_raw = raw.get("strategy", {})
    if not isinstance(strat_raw, dict):
        raise ValidationError("strategy", "must be a table")
    strategies = {}
    for party, default in (("hon", "Honest"), ("rat", "RationalConditional"), ("adv", "Honest")):
        if party in strat_raw:
            strategies[party] = strategy_from(strat_raw[party], f"strategy.{party}")
        else:
            defaults.append(f"strategy.{party} = {default!r}")
            strategies[party] = strategy_from(default, f"strategy.{party}")
    extra = set(strat_raw) - {"hon", "rat", "adv"}
    if extra:
        raise ValidationError(f"strategy.{sorted(extra)[0]}", "unknown party")

    arrivals = []
    for i, a in enumerate(raw.get("tx", [])):
        tr = _Reader(a, f"tx[{i}]", [])
        arrivals.append(TxArrival(tr.get("round", int, check=lambda v: v >= 0, constraint=">= 0"),
                                  tr.get("fee", float, check=lambda v: v >= 0, constraint=">= 0"),
                                  tr.get("receiver", str, "hon")))
        tr.done()

    try:
        return SimConfig(
            population=MinerPopulation(beta_hon, beta_rat, beta_adv, n, q),
            rewards=rewards, epoch=epoch, block_interval=interval, initial_difficulty=init_diff,
            e_fairness=e_f, e_security=e_s, rho=rho, cr=cr, fairness_window=window,
            bribe_multiple=mult, chi=chi, chi1=chi1, max_rounds=max_rounds,
            max_height=max_height, strategies=strategies, network=NetworkMode(network),
            random_ties=random_ties, pragthos=prag, tx_arrivals=tuple(arrivals),
            stop_on_outcome=stop, exact_rounds=exact)
    except ConfigInvalid as exc:
        raise ValidationError("config", str(exc)) from None


def _mode_params(raw: dict, mode: str, defaults: list) -> dict:
    if mode == "tx_inclusion":
        r = _Reader(raw.get("trial", {}), "trial", defaults)
        out = {
            "fee": r.get("fee", float, 1.0, _positive, "must be positive"),
            "pool_share": r.get("pool_share", float, 0.25, lambda v: 0 < v < 1, "must lie in (0, 1)"),
            "l_values": r.get("l_values", list, [4, 8, 12]),
            "delta": r.get("delta", float, 0.9, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        }
        if not all(isinstance(v, int) and 0 <= v <= 32 for v in out["l_values"]):
            raise ValidationError("trial.l_values", "entries must be integers in [0, 32]")
        r.done()
        return out
    r = _Reader(raw.get("grid", {}), "grid", defaults)
    out = {
        "p_fr": r.get("p_fr", list, [0.05, 0.1, 0.2, 0.3, 0.45]),
        "delta_adv": r.get("delta_adv", list, [0.013, 0.037, 0.11, 0.29]),
        "vartheta": r.get("vartheta", list, [0.37, 0.53, 0.71, 0.83, 0.93]),
        "capital_lambda": r.get("capital_lambda", int, 210_000, _positive, "must be positive"),
    }
    r.done()
    return out


def _parse_sweep(raw) -> Optional[Sweep]:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ValidationError("sweep", "must be a table")
    r = _Reader(raw, "sweep", [])
    path = r.get("path", str)
    values = r.get("values", list, None)
    start = r.get("start", float, None)
    stop = r.get("stop", float, None)
    step = r.get("step", float, None, _positive, "must be positive")
    r.done()
    if values is None:
        if None in (start, stop, step):
            raise ValidationError("sweep", "give values, or start/stop/step")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + i * step, 12) for i in range(count)]
    if not values:
        raise ValidationError("sweep.values", "must not be empty")
    return Sweep(path, tuple(values))


def spec_from_dict(raw: dict, *, quiet: bool = False) -> ScenarioSpec:
    raw = copy.deepcopy(raw)
    defaults: list[str] = []
    top = _Reader({k: v for k, v in raw.items() if not isinstance(v, dict) and k != "tx"}, "", defaults)
    name = top.get("name", str, check=lambda v: bool(v.strip()), constraint="must not be blank")
    reps = top.get("repetitions", int, 1, _positive, "must be positive")
    seed_base = top.get("seed_base", int, 0, lambda v: 0 <= v < 2 ** 63, "must lie in [0, 2^63)")
    mode = top.get("mode", str, "simulate", lambda v: v in MODES, f"one of {MODES}")
    desc = top.get("description", str, "")
    top.done()
    known = {"population", "run", "epoch", "rewards", "externality", "costs", "pragthos",
             "strategy", "expected", "sweep", "trial", "grid"}
    for k, v in raw.items():
        if isinstance(v, dict) and k not in known:
            raise ValidationError(k, "unknown section")
    config = None
    params = {}
    if mode == "simulate":
        config = build_sim_config(raw, defaults)
        config = replace(config, rng_seed=seed_base % 2 ** 64)
    else:
        params = _mode_params(raw, mode, defaults)
    expected = None
    if "expected" in raw:
        r = _Reader(raw["expected"], "expected", [])
        expected = Band(r.get("metric", str), r.get("lower", float, -math.inf),
                        r.get("upper", float, math.inf))
        r.done()
        if expected.lower > expected.upper:
            raise ValidationError("expected", "lower must not exceed upper")
    sweep = _parse_sweep(raw.get("sweep"))
    spec = ScenarioSpec(name, config, reps, seed_base, sweep, expected, mode, params, desc,
                        raw, defaults)
    if sweep is not None:
        spec.with_value(sweep.path, sweep.values[0])  # fail early on a bad path
    if not quiet:
        for d in defaults:
            log.info("default %s", d)
    return spec


def parse_text(text: str, path: Optional[str] = None) -> ScenarioSpec:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            import re
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
        raise ParseError(str(exc).split(" (at")[0], line, col, path) from None
    return spec_from_dict(raw)


def parse_config(path) -> ScenarioSpec:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{p}: no such file") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 ({exc.reason})", path=str(p)) from None
    return parse_text(text, str(p))
