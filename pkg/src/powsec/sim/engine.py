"""Round-driven mining engine."""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..chain import ChainError, ChainTree, Transaction, TxKind, better_tip, digest
from ..parties import ADV, HON, PARTIES, RAT, Outcome
from ..pragthos import (PoIReveal, Verdict, block_txs_allowed, clamp_epoch, k_th_compute,
                        miner_dest, verify_poi_reveal)
from ..strategies import Honest, RationalConditional, TxAction, make_behavior, txwithhold_filter
from .config import ConfigInvalid, NetworkMode, SimConfig, attempt_mine
from .observer import ExternalitySignal, ExternalObserver
from .view import View

OBSERVER = "obs"
ACT_ORDER = (HON, RAT, ADV)


class SimulationFault(RuntimeError):
    """A chain rule was broken by the engine itself."""


@dataclass
class ScenarioResult:
    per_party_payoff: dict
    per_party_coin: dict
    per_party_cost: dict
    blocks_by_party: dict
    main_blocks_by_party: dict
    orphan_blocks_by_party: dict
    theta_trace: list  # (round, theta) at every change
    attack_outcome: Outcome
    chain_export: Optional[str]
    seed: int
    rounds: int
    final_theta: float
    main_height: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack_outcome"] = self.attack_outcome.value
        return d


def _binomial_at_least_one(rng, n: int, p: float) -> int:
    """Draw from Binomial(n, p) conditioned on being at least one."""
    if p >= 1.0:
        return n
    total = -math.expm1(n * math.log1p(-p))
    u = rng.random() * total
    pmf = n * p * math.exp((n - 1) * math.log1p(-p))
    ratio = p / (1.0 - p)
    cum = pmf
    k = 1
    while cum < u and k < n:
        pmf *= (n - k) / (k + 1) * ratio
        k += 1
        cum += pmf
    return k


class Simulation:
    def __init__(self, cfg: SimConfig):
        if not isinstance(cfg, SimConfig):
            raise ConfigInvalid("expected a SimConfig")
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.rng_seed)
        epoch = cfg.epoch
        if epoch is not None and cfg.pragthos.tau_clamp:
            epoch = clamp_epoch(epoch)
        self.tree = ChainTree(epoch, cfg.initial_difficulty)
        counts, residue = cfg.population.counts()
        self.miners: dict[str, tuple] = {}
        start = 0
        for p in PARTIES:
            self.miners[p] = tuple(range(start, start + counts[p]))
            start += counts[p]
        self._party_bounds = (counts[HON], counts[HON] + counts[RAT])  # first rat id, first adv id
        self.views = {p: View(self.tree) for p in PARTIES if counts[p] > 0}
        self.signal = ExternalitySignal(
            cfg.e_fairness, cfg.e_security, cfg.rho, cr=cfg.cr,
            fairness_window=cfg.fairness_window,
            bribe_threshold=cfg.bribe_multiple * cfg.rewards.r0)
        self.observer = ExternalObserver(self.tree, self.signal)
        self.k_th = self.k_floor = None
        if cfg.pragthos.pc_mod:
            try:
                self.k_th, self.k_floor = k_th_compute(cfg.population.beta_hon, cfg.rho,
                                                       cfg.pragthos.mu)
            except ValueError as exc:
                raise ConfigInvalid(f"pc_mod: {exc}") from exc
        self.poi_key = digest(b"poi", cfg.rng_seed.to_bytes(8, "big"))
        self.meta: dict = {
            "honest_residue": residue,
            "miner_counts": counts,
            "rp_decisions": [],
            "reveals": [],
            "implied_chi1": cfg.implied_chi1,
            "interpretations": {
                "theta_security_persists": True,
                "valid_reveal_sets_security": cfg.pragthos.pc_mod,
                "honest_stamp_not_behind_parent": True,
            },
        }
        if self.k_th is not None:
            self.meta["k_th"] = self.k_th
            self.meta["k_th_floor"] = self.k_floor
        self.public: set[bytes] = {self.tree.genesis}
        self.mined_by: dict[bytes, str] = {}
        self.tx_blocks: dict[bytes, list] = {}
        self.mempools: dict[str, dict] = {p: {} for p in PARTIES}
        self.announcements: list = []
        self.invalidated: set[bytes] = set()
        self._pending: list = []  # (round, seq, target, block id)
        self._seq = 0
        self._obs_batch: list[bytes] = []
        self._poked = False  # an act changed shared state; others must react next round
        self._tx_index = 0
        self.round = 0
        self.cost = {p: 0.0 for p in PARTIES}
        self.theta_trace = [(0, 1.0)]
        self.behaviors = {}
        for p in PARTIES:
            if counts[p] == 0:
                continue
            kind = cfg.strategies.get(p)
            if kind is None:
                kind = RationalConditional() if p == RAT else Honest()
            try:
                self.behaviors[p] = make_behavior(kind, p, self)
            except ValueError as exc:
                raise ConfigInvalid(str(exc)) from exc
        self.stopped = False

    # -------------------------------------------------------- party bookkeeping
    def party_of(self, miner: int) -> str:
        if miner < self._party_bounds[0]:
            return HON
        if miner < self._party_bounds[1]:
            return RAT
        return ADV

    @property
    def adversary(self):
        return self.behaviors.get(ADV)

    @property
    def outcome(self) -> Outcome:
        adv = self.adversary
        return Outcome.NOT_ATTEMPTED if adv is None else adv.outcome

    # -------------------------------------------------------- network
    def _schedule(self, round_: int, target: str, bid: bytes) -> None:
        heapq.heappush(self._pending, (round_, self._seq, target, bid))
        self._seq += 1

    def _broadcast(self, block, round_: int, party: str) -> None:
        self.public.add(block.id)
        slow = self.cfg.network is NetworkMode.FRONT_RUNNING and party != ADV
        for target in list(self.views) + [OBSERVER]:
            if target == party or target == ADV or not slow:
                self._schedule(round_ + 1, target, block.id)
            else:
                self._schedule(round_ + 2, target, block.id)

    def publish(self, block_ids) -> None:
        """Make private blocks (and their ancestors) public right now."""
        t = self.round
        for bid in block_ids:
            cur = bid
            while cur not in self.public:
                self.public.add(cur)
                cur = self.tree.blocks[cur].parent
            for view in self.views.values():
                view.add(bid, t)
            self._obs_batch.append(bid)
        self._poked = True

    def announce(self, ann) -> None:
        self.announcements.append(ann)
        self.observer.see_offer(self.round, ann.bribe)
        self._poked = True

    def broadcast_tx(self, tx, party: str) -> None:
        for pool in self.mempools.values():
            pool.setdefault(tx.id, tx)

    def reveal(self, party, commit, secret, referenced, fork_tip, carrier_height, accused_root):
        rev = PoIReveal(secret, referenced, (fork_tip, carrier_height))
        self._poked = True
        verdict = verify_poi_reveal(commit, rev, self.tree, self.k_floor, key=self.poi_key)
        valid = verdict is Verdict.VALID_INVALIDATION
        self.meta["reveals"].append({"round": self.round, "party": party, "valid": valid,
                                     "carrier_height": carrier_height})
        if valid:
            self.invalidated.add(accused_root)
            for p in (HON, RAT):
                if p in self.views:
                    self.views[p].exclude(accused_root)
            self.observer.see_reveal(self.round, True, accused_root)
        return verdict

    def _deliver(self, t: int) -> None:
        pending = self._pending
        while pending and pending[0][0] <= t:
            _, _, target, bid = heapq.heappop(pending)
            if target == OBSERVER:
                self._obs_batch.append(bid)
            else:
                self.views[target].add(bid, t)

    # -------------------------------------------------------- transactions
    def _arrivals(self, t: int) -> None:
        arr = self.cfg.tx_arrivals
        while self._tx_index < len(arr) and arr[self._tx_index].round <= t:
            a = arr[self._tx_index]
            self._tx_index += 1
            tx = Transaction.normal(self.rng.bytes(32), a.fee)
            beh = self.behaviors.get(a.receiver)
            policy = beh.tx_policy() if beh is not None else Honest()
            if txwithhold_filter(tx, policy) is TxAction.WITHHOLD:
                self.mempools[a.receiver][tx.id] = tx
            else:
                self.broadcast_tx(tx, a.receiver)

    def _included_on(self, tx_id: bytes, tip: bytes) -> bool:
        for bid in self.tx_blocks.get(tx_id, ()):
            if self.tree.is_ancestor(bid, tip):
                return True
        return False

    def select_txs(self, party: str, parent: bytes, miner: int) -> list:
        """Relayed transactions ``party`` may place in a child of ``parent``."""
        pool = [tx for tx in self.mempools[party].values() if not self._included_on(tx.id, parent)]
        if self.cfg.pragthos.tx_inclusion:
            pool = block_txs_allowed(pool, miner_dest(miner), parent, self.cfg.pragthos.l)
        return pool

    # -------------------------------------------------------- round phases
    def _prepare(self, t: int) -> list:
        self._poked = False
        self._deliver(t)
        self._arrivals(t)
        for p in ACT_ORDER:
            beh = self.behaviors.get(p)
            if beh is not None:
                beh.act(self, t)
        if self._obs_batch:
            self.observer.see_blocks(self._obs_batch, t)
            self._obs_batch = []
        theta = self.signal.refresh(t)
        if theta != self.theta_trace[-1][1]:
            self.theta_trace.append((t, theta))
        groups = []
        for p in ACT_ORDER:
            beh = self.behaviors.get(p)
            if beh is not None:
                groups.extend(beh.allocate(self, t))
        return groups

    def _should_stop(self) -> bool:
        if self.round >= self.cfg.max_rounds:
            return True
        if self.cfg.stop_on_outcome and self.outcome is not Outcome.NOT_ATTEMPTED \
                and not self.adversary.decides_at_end:
            return True
        if self.cfg.max_height is not None and self._public_height() >= self.cfg.max_height:
            return True
        return False

    def _public_height(self) -> int:
        return max(v.height() for v in self.views.values())

    def _charge(self, groups, rounds: int) -> None:
        q = self.cfg.population.q
        chi = self.cfg.chi
        if chi == 0 or rounds <= 0:
            return
        for g in groups:
            self.cost[g.party] += len(g.miners) * q * chi * rounds

    def _mine_block(self, group, round_: int) -> None:
        beh = self.behaviors[group.party]
        miner = group.miners[int(self.rng.integers(len(group.miners)))]
        ts, txs, publish = beh.build(self, group, miner, round_)
        nonce = self.rng.bytes(8)
        try:
            block = self.tree.child(group.target, miner, ts, round_, txs, nonce,
                                    coinbase=miner_dest(miner))
            self.tree.append(block)
        except ChainError as exc:
            raise SimulationFault(f"round {round_}: {exc}") from exc
        self.mined_by[block.id] = group.party
        for tx in block.txs:
            self.tx_blocks.setdefault(tx.id, []).append(block.id)
        beh.on_mined(self, block, group)
        if publish:
            self._broadcast(block, round_, group.party)

    def step_round(self) -> bool:
        """Run one full round with unconditional binomial draws; False once stopped."""
        if self.stopped or self._should_stop():
            self.stopped = True
            return False
        t = self.round
        groups = self._prepare(t)
        if self._should_stop():
            self.stopped = True
            return False
        base = self.cfg.base_rate
        q = self.cfg.population.q
        self._charge(groups, 1)
        for g in groups:
            count = attempt_mine(self.rng, self.tree.next_difficulty(g.target),
                                 len(g.miners) * q, base)
            for _ in range(count):
                self._mine_block(g, t)
        self.round = t + 1
        return True

    def _horizon(self, t: int) -> int:
        h = self.cfg.max_rounds
        if self._poked:
            return t + 1
        if self._pending:
            h = min(h, self._pending[0][0])
        arr = self.cfg.tx_arrivals
        if self._tx_index < len(arr):
            h = min(h, arr[self._tx_index].round)
        for beh in self.behaviors.values():
            w = beh.wakeup(t)
            if w is not None and w > t:
                h = min(h, w)
        nxt = self.signal.next_change(t)
        if nxt is not None:
            h = min(h, nxt)
        return max(h, t + 1)

    def advance(self) -> bool:
        """Run until the next block or the next scheduled event, skipping quiet rounds."""
        if self.stopped or self._should_stop():
            self.stopped = True
            return False
        t = self.round
        groups = self._prepare(t)
        if self._should_stop():
            self.stopped = True
            return False
        horizon = self._horizon(t)
        q = self.cfg.population.q
        base = self.cfg.base_rate
        logs = []
        for g in groups:
            p = base / self.tree.next_difficulty(g.target)
            if not 0.0 <= p <= 1.0:
                raise SimulationFault(f"success probability {p} out of range")
            logs.append((len(g.miners) * q, p, len(g.miners) * q * math.log1p(-p) if p < 1 else -math.inf))
        log_p0 = sum(l for _, _, l in logs)
        if not groups or log_p0 == 0.0:
            self._charge(groups, horizon - t)
            self.round = horizon
            return True
        k = int(self.rng.geometric(-math.expm1(log_p0)))
        m = t + k - 1
        if m >= horizon:
            self._charge(groups, horizon - t)
            self.round = horizon
            return True
        self._charge(groups, k)
        suffix = [0.0] * (len(logs) + 1)
        for i in range(len(logs) - 1, -1, -1):
            suffix[i] = suffix[i + 1] + logs[i][2]
        need = True
        for i, g in enumerate(groups):
            n_q, p, lg = logs[i]
            s = -math.expm1(lg) if lg > -math.inf else 1.0
            if need:
                denom = -math.expm1(suffix[i]) if suffix[i] > -math.inf else 1.0
                prob = s / denom
            else:
                prob = s
            if s > 0 and self.rng.random() < prob:
                need = False
                for _ in range(_binomial_at_least_one(self.rng, n_q, p)):
                    self._mine_block(g, m)
        self.round = m + 1
        return True

    # -------------------------------------------------------- results
    def run(self) -> ScenarioResult:
        stepper = self.step_round if self.cfg.exact_rounds else self.advance
        while stepper():
            pass
        return self.finalize()

    def theta_at(self, round_: int) -> float:
        i = bisect.bisect_right(self.theta_trace, (round_, math.inf)) - 1
        return self.theta_trace[max(i, 0)][1]

    def main_chain(self) -> list[bytes]:
        blocks = self.tree.blocks
        best = None
        for bid in self.public:
            b = blocks[bid]
            if best is None or better_tip(b, best):
                if self.invalidated and any(self.tree.is_ancestor(r, bid) for r in self.invalidated):
                    continue
                best = b
        return self.tree.path(best.id)

    def finalize(self) -> ScenarioResult:
        cfg = self.cfg
        blocks = self.tree.blocks
        chain = self.main_chain()
        on_main = set(chain)
        coin = {p: 0.0 for p in PARTIES}
        fiat = {p: 0.0 for p in PARTIES}
        mined = {p: 0 for p in PARTIES}
        main_count = {p: 0 for p in PARTIES}
        for bid, party in self.mined_by.items():
            mined[party] += 1
            if bid in on_main:
                main_count[party] += 1
        cr = cfg.cr
        for i, bid in enumerate(chain[1:], start=1):
            b = blocks[bid]
            party = self.mined_by[bid]
            theta = self.theta_at(b.actual_round) * cr
            value = cfg.rewards.at(b.height) + sum(tx.fee for tx in b.txs)
            coin[party] += value
            fiat[party] += theta * value
            if i + 1 < len(chain):
                child = blocks[chain[i + 1]]
                bribe = sum(tx.amount for tx in b.txs if tx.kind is TxKind.BRIBE)
                if bribe:
                    taker = self.mined_by[child.id]
                    th = self.theta_at(child.actual_round) * cr
                    coin[party] -= bribe
                    coin[taker] += bribe
                    fiat[party] -= th * bribe
                    fiat[taker] += th * bribe
        final_theta = self.signal.theta * cr
        adv = self.adversary
        if adv is not None and hasattr(adv, "fiat_value"):
            fiat[ADV] = adv.fiat_value(self.signal.theta, coin[ADV])
            self.meta["goldfinger"] = {"c1": adv.kind.c1, "theta_init": adv.kind.theta_init,
                                       "coin": coin[ADV]}
        payoff = {p: fiat[p] - self.cost[p] for p in PARTIES}
        height = blocks[chain[-1]].height
        total_coin = sum(coin.values())
        summary = {
            "adv_block_share": main_count[ADV] / height if height else 0.0,
            "adv_revenue_share": coin[ADV] / total_coin if total_coin > 0 else 0.0,
        }
        self.meta.update(summary)
        if adv is not None:
            adv.finish(self, summary)
        self.meta["invalidated_roots"] = [r.hex() for r in sorted(self.invalidated)]
        self.meta["public_blocks"] = len(self.public) - 1
        export = None
        if cfg.export_path:
            self.tree.to_jsonl(cfg.export_path)
            export = str(cfg.export_path)
        return ScenarioResult(
            per_party_payoff=payoff,
            per_party_coin=coin,
            per_party_cost=dict(self.cost),
            blocks_by_party=mined,
            main_blocks_by_party=main_count,
            orphan_blocks_by_party={p: mined[p] - main_count[p] for p in PARTIES},
            theta_trace=list(self.theta_trace),
            attack_outcome=self.outcome,
            chain_export=export,
            seed=cfg.rng_seed,
            rounds=self.round,
            final_theta=final_theta,
            main_height=height,
            meta=self.meta,
        )


def run(config: SimConfig) -> ScenarioResult:
    return Simulation(config).run()


def step_round(sim: Simulation) -> Simulation:
    sim.step_round()
    return sim
