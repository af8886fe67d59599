"""Miner behaviors: honest, conditionally rational, and the attack strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .analytics import goldfinger_value, qf_deviation_payoff, qf_m_min
from .chain import Transaction, TxKind
from .parties import ADV, HON, RAT, Outcome
from .pragthos import Verdict, make_poi, pcmod_deviation_payoff

__all__ = [
    "Honest", "RationalConditional", "DifficultyAltering", "QuickFork", "SelfishMiningBribing",
    "TransactionWithholding", "GoldfingerOverlay", "MiningDirective", "Group", "TxAction",
    "ForkAnnouncement", "ForkTracker", "honest_act", "txwithhold_filter", "goldfinger_value",
    "make_behavior",
]


# ------------------------------------------------------------ strategy kinds

@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class RationalConditional:
    pass


@dataclass(frozen=True)
class TransactionWithholding:
    pass


@dataclass(frozen=True)
class DifficultyAltering:
    r1: float = 0.0
    r2: float = 1.0
    alpha: Optional[float] = None  # slowdown; None means beta_adv / tau_min
    launch_epoch: int = 0
    respect_timestamps: bool = False  # hold publication until no stamp lies in the future

    def __post_init__(self):
        if not (0.0 <= self.r1 <= 1.0 and 0.0 <= self.r2 <= 1.0):
            raise ValueError("r1 and r2 must lie in [0, 1]")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.launch_epoch < 0:
            raise ValueError("launch_epoch must be non-negative")


@dataclass(frozen=True)
class QuickFork:
    k: int = 1
    bribe: float = 0.0
    launch_height: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.bribe < 0:
            raise ValueError("bribe must be non-negative")


@dataclass(frozen=True)
class SelfishMiningBribing:
    z: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.z < 1.0:
            raise ValueError("z must lie in (0, 1)")


@dataclass(frozen=True)
class GoldfingerOverlay:
    c1: float
    theta_init: float = 1.0
    inner: object = field(default_factory=DifficultyAltering)

    def __post_init__(self):
        if self.c1 < 0:
            raise ValueError("c1 must be non-negative")
        if isinstance(self.inner, GoldfingerOverlay):
            raise ValueError("overlays do not nest")


ATTACKS = (DifficultyAltering, QuickFork, SelfishMiningBribing, GoldfingerOverlay)


# ------------------------------------------------------------ directives

@dataclass(frozen=True)
class MiningDirective:
    parent: Optional[bytes]
    declared_timestamp: int
    txs: tuple = ()

    @property
    def abstain(self) -> bool:
        return self.parent is None


@dataclass
class Group:
    party: str
    target: bytes
    miners: tuple
    tag: str = "main"
    payload: tuple = ()  # the group's own transactions, placed ahead of relayed ones


class TxAction(Enum):
    GOSSIP = "Gossip"
    WITHHOLD = "Withhold"


def txwithhold_filter(incoming_tx: Transaction, policy) -> TxAction:
    """What a miner following ``policy`` does with a transaction it hears."""
    if isinstance(policy, TransactionWithholding):
        return TxAction.WITHHOLD
    return TxAction.GOSSIP


def honest_timestamp(tree, parent: bytes, round_: int) -> int:
    # never behind the parent, even after adopting a chain stamped ahead of time
    return max(round_, tree.blocks[parent].declared_timestamp)


def honest_act(view, round_: int, *, tie_random: bool = False, rng=None, profitable: bool = True,
               txs=()) -> MiningDirective:
    """Single-miner honest choice: extend the best tip with a truthful stamp."""
    if not profitable:
        return MiningDirective(None, round_)
    parent = view.best
    if tie_random:
        tied = view.tied()
        if len(tied) > 1:
            if rng is None:
                raise ValueError("random tie breaking needs an rng")
            parent = tied[int(rng.integers(len(tied)))]
    return MiningDirective(parent, honest_timestamp(view.tree, parent, round_), tuple(txs))


def has_bribe(block) -> bool:
    return any(tx.kind is TxKind.BRIBE for tx in block.txs)


# ------------------------------------------------------------ public fork announcements

@dataclass(frozen=True)
class ForkAnnouncement:
    round: int
    base: bytes
    main_child: bytes
    bribe: float
    depth: int = 1  # blocks the announcer's tip stood above the base


class ForkTracker:
    """Follows an announced fork and the branch it competes with inside one view."""

    def __init__(self, view, ann: ForkAnnouncement):
        self.view = view
        self.ann = ann
        tree = view.tree
        self.base_h = tree.blocks[ann.base].height
        self.fork_tip = ann.base
        self.fork_h = self.base_h
        self.main_tip = ann.main_child
        self.main_h = self.base_h + 1
        self.fork_blocks: list[bytes] = []
        self.max_lead = max(1, ann.depth)  # deepest the fork has trailed
        self._pos = 0

    def update(self) -> list[bytes]:
        """Scan newly received blocks; returns the new fork-side ones."""
        view, tree = self.view, self.view.tree
        new_fork = []
        log = view.log
        for bid in log[self._pos:]:
            b = tree.blocks[bid]
            if b.height <= self.base_h:
                continue
            anc = tree.ancestor(bid, self.base_h + 1)
            if anc.parent != self.ann.base:
                continue
            if anc.id == self.ann.main_child:
                if b.height > self.main_h:
                    self.main_h, self.main_tip = b.height, bid
            else:
                new_fork.append(bid)
                if b.height > self.fork_h:
                    self.fork_h, self.fork_tip = b.height, bid
            self.max_lead = max(self.max_lead, self.main_h - self.fork_h)
        self._pos = len(log)
        self.fork_blocks.extend(new_fork)
        return new_fork

    @property
    def lead(self) -> int:
        """How far the competing branch is ahead of the fork."""
        return self.main_h - self.fork_h

    @property
    def fork_root(self) -> Optional[bytes]:
        if self.fork_h <= self.base_h:
            return None
        return self.view.tree.ancestor(self.fork_tip, self.base_h + 1).id

    def invalidated(self, invalid_roots) -> bool:
        root = self.fork_root
        return root is not None and root in invalid_roots


# ------------------------------------------------------------ behaviors

class Behavior:
    """Per-party decision logic driven by the engine.

    ``act`` reacts to what the party's view now holds, ``allocate`` returns
    the mining groups for the round, ``build`` fills in a mined block.
    """

    attack = False
    decides_at_end = False

    def __init__(self, kind, party: str, sim):
        self.kind = kind
        self.party = party
        self.outcome = Outcome.NOT_ATTEMPTED
        self.view = sim.views[party]

    def act(self, sim, round_: int) -> None:
        pass

    def allocate(self, sim, round_: int) -> list:
        return []

    def build(self, sim, group: Group, miner: int, round_: int):
        """Return ``(declared_timestamp, txs, publish)`` for a block found by ``group``."""
        ts = honest_timestamp(sim.tree, group.target, round_)
        txs = list(group.payload) + sim.select_txs(self.party, group.target, miner)
        return ts, txs, True

    def on_mined(self, sim, block, group: Group) -> None:
        pass

    def wakeup(self, round_: int) -> Optional[int]:
        return None

    def tx_policy(self):
        return self.kind

    def finish(self, sim, summary: dict) -> None:
        pass

    # shared helpers
    def profitable(self, sim, target: bytes) -> bool:
        cfg = sim.cfg
        if cfg.chi == 0:
            return True
        p = cfg.base_rate / sim.tree.next_difficulty(target)
        r = cfg.rewards.at(sim.tree.blocks[target].height + 1)
        return sim.signal.theta * cfg.cr * r * p > cfg.chi

    def honest_groups(self, sim, miners, tag="main") -> list:
        if not miners:
            return []
        view = self.view
        if not self.profitable(sim, view.best):
            return []
        tied = view.tied() if sim.cfg.random_ties else [view.best]
        if len(tied) == 1:
            return [Group(self.party, view.best, tuple(miners), tag)]
        choice = self._tie_split(sim, tied, miners)
        groups = []
        for i, tip in enumerate(tied):
            chosen = tuple(m for m, c in zip(miners, choice) if c == i)
            if chosen:
                groups.append(Group(self.party, tip, chosen, tag))
        return groups

    def _tie_split(self, sim, tied, miners):
        key = (self.view.version, len(miners))
        cached = getattr(self, "_split_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        choice = sim.rng.integers(len(tied), size=len(miners))
        self._split_cache = (key, choice)
        return choice


class HonestBehavior(Behavior):
    """Protocol follower; with invalidity commitments on, also polices announced forks."""

    def __init__(self, kind, party, sim):
        super().__init__(kind, party, sim)
        self.tracker: Optional[ForkTracker] = None
        self.commits: dict[bytes, tuple] = {}  # commitment -> (commit, secret, referenced block)
        self.current = None
        self.poi_block: Optional[bytes] = None
        self.buried = False
        self.revealed = False
        self.diverting = False

    def act(self, sim, round_):
        if not sim.cfg.pragthos.pc_mod or not sim.announcements or self.revealed:
            return
        ann = sim.announcements[-1]
        if self.tracker is None or self.tracker.ann is not ann:
            self.tracker = ForkTracker(self.view, ann)
            self.commits.clear()
            self.current = None
            self.poi_block = None
            self.buried = False
        tr = self.tracker
        for bid in tr.update():
            b = sim.tree.blocks[bid]
            if self.poi_block is None:
                if any(tx.payload in self.commits for tx in b.txs):
                    self.poi_block = bid
            if self.poi_block is not None and b.parent == self.poi_block:
                self.buried = True
        if tr.invalidated(sim.invalidated):
            self.diverting = False
            return
        k = sim.k_floor
        if self.poi_block is not None and tr.lead <= 1 \
                and sim.tree.is_ancestor(self.poi_block, tr.fork_tip):
            carrier = sim.tree.blocks[self.poi_block]
            for tx in carrier.txs:
                if tx.payload in self.commits:
                    commit, secret, ref = self.commits[tx.payload]
                    verdict = sim.reveal(self.party, commit, secret, ref, tr.fork_tip,
                                         carrier.height, tr.fork_root)
                    if verdict is Verdict.VALID_INVALIDATION:
                        self.revealed = True
                        self.diverting = False
                        return
        if self.poi_block is not None:
            self.diverting = not self.buried
            return
        self.diverting = tr.fork_h + 1 <= tr.main_h - k
        if self.diverting:
            if self.current is None or self.current[0].committed_height - k < tr.fork_h + 1:
                commit, secret = make_poi(sim.rng, tr.main_tip, tr.main_h,
                                          creator=sim.miners[self.party][0], key=sim.poi_key)
                self.current = (commit, secret, tr.main_tip)
                self.commits[commit.commitment] = self.current
                if sim.cfg.pragthos.broadcast_poi:
                    sim.broadcast_tx(commit.to_tx(), self.party)

    def allocate(self, sim, round_):
        miners = sim.miners[self.party]
        if not self.diverting:
            return self.honest_groups(sim, miners)
        n_div = math.ceil(sim.cfg.pragthos.divert_fraction * len(miners))
        diverted, rest = miners[:n_div], miners[n_div:]
        target = self.tracker.fork_tip
        if self.poi_block is None:
            payload = (self.current[0].to_tx(),)
            tag = "poi"
        else:
            # keep building on the carrier until it is one block deep
            payload, tag = (), "poi-bury"
            if not sim.tree.is_ancestor(self.poi_block, target):
                target = self.poi_block
        groups = [Group(self.party, target, tuple(diverted), tag, payload)] if diverted else []
        return groups + self.honest_groups(sim, rest)

    def build(self, sim, group, miner, round_):
        ts, txs, publish = super().build(sim, group, miner, round_)
        if group.tag == "poi":
            # the own commitment goes first; drop a relayed copy of it
            own = {tx.id for tx in group.payload}
            txs = list(group.payload) + [tx for tx in txs[len(group.payload):] if tx.id not in own]
        return ts, txs, publish

    def tx_policy(self):
        return Honest()


class RationalBehavior(Behavior):
    """Follows the protocol unless an announced fork pays more and cannot be flagged."""

    def __init__(self, kind, party, sim):
        super().__init__(kind, party, sim)
        self.tracker: Optional[ForkTracker] = None
        self.joined = False
        self.decided_for = None

    def _decide(self, sim, round_, tr):
        cfg = sim.cfg
        pop = cfg.population
        lead = tr.lead
        r_block = cfg.rewards.at(sim.tree.blocks[tr.fork_tip].height + 1)
        # a fork that has already trailed by rho gets flagged once it wins
        guard = tr.max_lead < cfg.rho
        v_dev = v_fol = None
        join = False
        if guard and 0 < pop.beta_hon < 0.5 and lead >= 1:
            m = qf_m_min(lead, pop.beta_hon)
            chi1 = cfg.chi1
            eta = r_block / chi1 if chi1 > 0 else 0.0
            args = (pop.n, pop.beta_hon, pop.beta_rat, pop.beta_adv, eta,
                    cfg.rewards.vartheta, lead, m)
            if cfg.pragthos.pc_mod:
                v_dev, v_fol = pcmod_deviation_payoff(*args, rho=cfg.rho, mu=cfg.pragthos.mu,
                                                      e_security=cfg.e_security, chi1=chi1,
                                                      r_block=r_block)
            else:
                v_dev, v_fol = qf_deviation_payoff(*args, chi1=chi1, r_block=r_block)
            join = v_dev > v_fol
        sim.meta["rp_decisions"].append({
            "round": round_, "lead": lead, "max_lead": tr.max_lead, "guard": guard,
            "v_deviate": v_dev, "v_follow": v_fol, "joined": join,
        })
        return join

    def act(self, sim, round_):
        if not sim.announcements:
            return
        ann = sim.announcements[-1]
        if self.decided_for is not ann:
            self.tracker = ForkTracker(self.view, ann)
            self.tracker.update()
            self.decided_for = ann
            self.joined = self._decide(sim, round_, self.tracker)
            return
        if self.joined:
            tr = self.tracker
            tr.update()
            if tr.lead >= sim.cfg.rho or tr.invalidated(sim.invalidated):
                self.joined = False

    def allocate(self, sim, round_):
        miners = sim.miners[self.party]
        if self.joined:
            return [Group(self.party, self.tracker.fork_tip, tuple(miners), "fork")]
        if sim.cfg.random_ties:
            # in a tie, take the tip whose block pays a bribe to its successor
            tied = self.view.tied()
            for tip in tied:
                if has_bribe(sim.tree.blocks[tip]):
                    return [Group(self.party, tip, tuple(miners), "bribe")]
        return self.honest_groups(sim, miners)

    def tx_policy(self):
        return self.kind


class IdleAdversary(Behavior):
    """Adversarial miners with no attack bound: they simply mine honestly."""

    attack = True

    def allocate(self, sim, round_):
        return self.honest_groups(sim, sim.miners[self.party])


class DaaBehavior(Behavior):
    """Private fork whose stretched stamps drag the next epoch's difficulty down."""

    attack = True

    def __init__(self, kind: DifficultyAltering, party, sim):
        super().__init__(kind, party, sim)
        epoch = sim.tree.epoch
        if epoch is None:
            raise ValueError("the difficulty attack needs difficulty epochs")
        lam = epoch.lam
        self.lam = lam
        self.interval = epoch.target_block_interval
        beta = sim.cfg.population.beta_adv
        self.stretch = (kind.alpha if kind.alpha is not None else beta / epoch.tau_min) / beta
        self.fork_height = kind.launch_epoch * lam + math.floor(kind.r1 * lam)
        self.epoch_end = (kind.launch_epoch + 1) * lam
        self.deadline = self.epoch_end + math.ceil(kind.r2 * lam)
        self.base: Optional[bytes] = None
        self.private: list[bytes] = []
        self.tip: Optional[bytes] = None
        self.max_stamp = 0
        self.publish_ready = False

    def act(self, sim, round_):
        if self.outcome is not Outcome.NOT_ATTEMPTED:
            return
        view = self.view
        if self.base is None:
            if view.height() >= self.fork_height:
                self.base = sim.tree.ancestor(view.best, self.fork_height).id
                self.tip = self.base
                sim.meta["daa_fork_round"] = round_
            return
        priv_h = sim.tree.blocks[self.tip].height
        pub_h = view.height()
        # publication only makes sense once the private chain runs at the lowered difficulty
        if priv_h > pub_h and priv_h > self.epoch_end:
            if self.kind.respect_timestamps and round_ < self.max_stamp:
                return
            sim.publish(self.private)
            self.outcome = Outcome.SUCCEEDED
        elif pub_h >= self.deadline:
            self.outcome = Outcome.FAILED

    def wakeup(self, round_):
        if self.kind.respect_timestamps and self.private and self.outcome is Outcome.NOT_ATTEMPTED:
            if self.max_stamp > round_:
                return self.max_stamp
        return None

    def allocate(self, sim, round_):
        miners = sim.miners[self.party]
        if self.base is None or self.outcome is not Outcome.NOT_ATTEMPTED:
            return self.honest_groups(sim, miners)
        return [Group(self.party, self.tip, tuple(miners), "private")]

    def build(self, sim, group, miner, round_):
        if group.tag != "private":
            return super().build(sim, group, miner, round_)
        parent = sim.tree.blocks[group.target]
        h = parent.height + 1
        base = sim.tree.blocks[self.base]
        if h <= self.epoch_end:
            j = h - base.height
            ts = base.declared_timestamp + math.ceil(j * self.interval * self.stretch)
        else:
            ts = parent.declared_timestamp + self.interval
        return ts, [], False

    def on_mined(self, sim, block, group):
        if group.tag != "private":
            return
        self.private.append(block.id)
        if block.height > sim.tree.blocks[self.tip].height:
            self.tip = block.id
        self.max_stamp = max(self.max_stamp, block.declared_timestamp)


class QuickForkBehavior(Behavior):
    """Public fork a few blocks back, announced so rational miners can join."""

    attack = True

    def __init__(self, kind: QuickFork, party, sim):
        super().__init__(kind, party, sim)
        self.tracker: Optional[ForkTracker] = None

    def act(self, sim, round_):
        if self.outcome is not Outcome.NOT_ATTEMPTED:
            return
        view = self.view
        k = self.kind.k
        if self.tracker is None:
            h = view.height()
            start = self.kind.launch_height if self.kind.launch_height is not None else k + 1
            if h > k and h >= start:
                base = sim.tree.ancestor(view.best, h - k)
                child = sim.tree.ancestor(view.best, h - k + 1)
                ann = ForkAnnouncement(round_, base.id, child.id, self.kind.bribe, k)
                sim.announce(ann)
                self.tracker = ForkTracker(view, ann)
            else:
                return
        tr = self.tracker
        tr.update()
        if tr.invalidated(sim.invalidated) or tr.lead >= sim.cfg.rho:
            self.outcome = Outcome.FAILED
        elif tr.lead <= 0:
            self.outcome = Outcome.SUCCEEDED

    def allocate(self, sim, round_):
        miners = sim.miners[self.party]
        if self.tracker is None or self.outcome is not Outcome.NOT_ATTEMPTED:
            return self.honest_groups(sim, miners)
        return [Group(self.party, self.tracker.fork_tip, tuple(miners), "fork")]

    def build(self, sim, group, miner, round_):
        ts = honest_timestamp(sim.tree, group.target, round_)
        txs = []
        if group.tag == "fork" and self.kind.bribe > 0:
            txs.append(Transaction.bribe(self.kind.bribe, sim.rng.bytes(16)))
        return ts, txs, True


class SelfishBehavior(Behavior):
    """Selfish mining whose private blocks each carry a small bribe for the next miner."""

    attack = True
    decides_at_end = True

    def __init__(self, kind: SelfishMiningBribing, party, sim):
        super().__init__(kind, party, sim)
        self.tip = sim.tree.genesis
        self.unpublished: list[bytes] = []
        self.tie = False
        self.seen_pub_h = 0

    def _height(self, sim, bid):
        return sim.tree.blocks[bid].height

    def _publish_through(self, sim, height):
        out = [b for b in self.unpublished if self._height(sim, b) <= height]
        if out:
            sim.publish(out)
            self.unpublished = [b for b in self.unpublished if b not in set(out)]

    def act(self, sim, round_):
        view = self.view
        pub_h = view.height()
        if pub_h <= self.seen_pub_h:
            return
        self.seen_pub_h = pub_h
        priv_h = self._height(sim, self.tip)
        if pub_h > priv_h:
            self.tip = view.best
            self.unpublished = []
            self.tie = False
        elif pub_h == priv_h:
            if self.unpublished:
                self._publish_through(sim, priv_h)
                self.tie = True
        elif pub_h == priv_h - 1:
            self._publish_through(sim, priv_h)
            self.tie = False
        else:
            self._publish_through(sim, pub_h)
        self.seen_pub_h = max(self.seen_pub_h, view.height())

    def allocate(self, sim, round_):
        return [Group(self.party, self.tip, tuple(sim.miners[self.party]), "selfish")]

    def build(self, sim, group, miner, round_):
        ts = honest_timestamp(sim.tree, group.target, round_)
        r = sim.cfg.rewards.at(self._height(sim, group.target) + 1)
        return ts, [Transaction.bribe(self.kind.z * r, sim.rng.bytes(16))], False

    def on_mined(self, sim, block, group):
        if block.height <= self._height(sim, self.tip):
            return
        self.tip = block.id
        self.unpublished.append(block.id)
        if self.tie:
            self._publish_through(sim, block.height)
            self.tie = False

    def finish(self, sim, summary):
        share = summary["adv_revenue_share"]
        self.outcome = Outcome.SUCCEEDED if share > sim.cfg.population.beta_adv else Outcome.FAILED


class GoldfingerBehavior:
    """Wraps an attack and reprices the attacker's coins with a short position."""

    def __init__(self, kind: GoldfingerOverlay, party, sim):
        self.kind = kind
        self.inner = make_behavior(kind.inner, party, sim)

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def fiat_value(self, theta_final: float, coin: float) -> float:
        return goldfinger_value(self.kind.theta_init, theta_final, self.kind.c1, coin)


def make_behavior(kind, party: str, sim):
    if isinstance(kind, GoldfingerOverlay):
        return GoldfingerBehavior(kind, party, sim)
    if party == ADV:
        if isinstance(kind, DifficultyAltering):
            return DaaBehavior(kind, party, sim)
        if isinstance(kind, QuickFork):
            return QuickForkBehavior(kind, party, sim)
        if isinstance(kind, SelfishMiningBribing):
            return SelfishBehavior(kind, party, sim)
        if isinstance(kind, Honest):
            return IdleAdversary(kind, party, sim)
        raise ValueError(f"{type(kind).__name__} cannot drive adversarial miners")
    if isinstance(kind, ATTACKS):
        raise ValueError(f"attack {type(kind).__name__} is only for the adversary")
    if party == RAT and isinstance(kind, (RationalConditional, TransactionWithholding)):
        return RationalBehavior(kind, party, sim)
    if party == HON and not isinstance(kind, Honest):
        raise ValueError("honest miners follow the protocol")
    return HonestBehavior(kind, party, sim)
