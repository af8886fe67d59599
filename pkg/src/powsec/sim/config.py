from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..chain import EpochParams, RewardSchedule
from ..parties import ADV, HON, PARTIES, RAT
from ..pragthos import PragthosConfig


class ConfigInvalid(ValueError):
    pass


class ProbabilityOutOfRange(ValueError):
    pass


class NetworkMode(Enum):
    IMMEDIATE = "Immediate"
    FRONT_RUNNING = "FrontRunning"


@dataclass(frozen=True)
class MinerPopulation:
    beta_hon: float
    beta_rat: float
    beta_adv: float
    n: int = 100
    q: int = 1

    def __post_init__(self):
        for name in ("beta_hon", "beta_rat", "beta_adv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1], got {v}")
        total = self.beta_hon + self.beta_rat + self.beta_adv
        if abs(total - 1.0) > 1e-12:
            raise ConfigInvalid(f"beta fractions must sum to 1, got {total}")
        if self.n < 1:
            raise ConfigInvalid("n must be at least 1")
        if self.q < 1:
            raise ConfigInvalid("q must be at least 1")

    def counts(self) -> tuple[dict, int]:
        """Miners per party, plus the rounding residue handed to the honest side."""
        rat = round(self.beta_rat * self.n)
        adv = round(self.beta_adv * self.n)
        hon_exact = round(self.beta_hon * self.n)
        hon = self.n - rat - adv
        if hon < 0:
            raise ConfigInvalid("rounding left a negative honest miner count")
        return {HON: hon, RAT: rat, ADV: adv}, hon - hon_exact

    def fraction(self, party: str) -> float:
        return {HON: self.beta_hon, RAT: self.beta_rat, ADV: self.beta_adv}[party]


@dataclass(frozen=True)
class TxArrival:
    round: int
    fee: float
    receiver: str = HON  # party whose mempool first hears the transaction

    def __post_init__(self):
        if self.round < 0 or self.fee < 0:
            raise ConfigInvalid("transaction arrivals need a round >= 0 and a fee >= 0")
        if self.receiver not in PARTIES:
            raise ConfigInvalid(f"unknown receiver {self.receiver!r}")


@dataclass
class SimConfig:
    population: MinerPopulation
    rewards: RewardSchedule = field(default_factory=lambda: RewardSchedule(50.0, 210_000))
    epoch: Optional[EpochParams] = None
    block_interval: int = 60
    initial_difficulty: float = 1.0
    e_fairness: float = 0.1
    e_security: float = 0.01
    rho: int = 6
    cr: float = 1.0
    fairness_window: Optional[int] = None
    bribe_multiple: float = 10.0
    chi: float = 0.0  # cost per query
    chi1: float = 0.0  # system cost per block, used by the closed forms
    max_rounds: int = 100_000
    max_height: Optional[int] = None
    rng_seed: int = 0
    strategies: dict = field(default_factory=dict)  # party -> strategy kind
    network: NetworkMode = NetworkMode.FRONT_RUNNING
    random_ties: bool = False  # honest miners pick a tied tip at random
    pragthos: PragthosConfig = field(default_factory=PragthosConfig)
    tx_arrivals: tuple = ()
    stop_on_outcome: bool = True
    export_path: Optional[str] = None
    exact_rounds: bool = False  # step every round instead of skipping quiet ones

    def __post_init__(self):
        if self.max_rounds <= 0:
            raise ConfigInvalid("max_rounds must be positive")
        if self.chi < 0 or self.chi1 < 0:
            raise ConfigInvalid("costs must be non-negative")
        if self.block_interval < 1:
            raise ConfigInvalid("block_interval must be at least 1")
        if self.epoch is not None and self.epoch.target_block_interval != self.block_interval:
            raise ConfigInvalid("epoch.target_block_interval must equal block_interval")
        if not 0 < self.e_security < self.e_fairness < 1:
            raise ConfigInvalid("need 0 < e_security < e_fairness < 1")
        if self.rho < 1:
            raise ConfigInvalid("rho must be at least 1")
        if not self.initial_difficulty > 0:
            raise ConfigInvalid("initial_difficulty must be positive")
        if self.max_height is not None and self.max_height < 1:
            raise ConfigInvalid("max_height must be positive")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ConfigInvalid("rng_seed must be a 64-bit unsigned integer")
        for party in self.strategies:
            if party not in PARTIES:
                raise ConfigInvalid(f"unknown party {party!r} in strategies")
        self.tx_arrivals = tuple(sorted(self.tx_arrivals, key=lambda a: a.round))

    @property
    def base_rate(self) -> float:
        """Per-query success probability at difficulty one: one block per interval overall."""
        return 1.0 / (self.block_interval * self.population.n * self.population.q)

    @property
    def implied_chi1(self) -> float:
        """Per-block cost implied by the per-query cost at difficulty one."""
        return self.chi * self.block_interval * self.population.n * self.population.q


def attempt_mine(rng, difficulty: float, queries: int, base_rate: float) -> int:
    """Successful queries out of ``queries`` at the given difficulty."""
    if queries < 0:
        raise ValueError("queries must be non-negative")
    if not difficulty > 0:
        raise ProbabilityOutOfRange("difficulty must be positive")
    p = base_rate / difficulty
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ProbabilityOutOfRange(f"success probability {p} outside [0, 1]")
    if queries == 0:
        return 0
    return int(rng.binomial(queries, p))
