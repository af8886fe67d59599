"""The passive watcher that turns public chain events into a conversion rate."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from ..chain import ChainTree, TxKind
from .view import View


class Flag(Enum):
    FAIRNESS = "Fairness"
    SECURITY = "Security"


@dataclass
class ExternalitySignal:
    e_fairness: float = 0.1
    e_security: float = 0.01
    rho: int = 6
    theta: float = 1.0
    cr: float = 1.0
    flagged_events: list = field(default_factory=list)  # (round, Flag)
    fairness_window: Optional[int] = None  # rounds a fairness flag lasts; None = rest of run
    bribe_threshold: float = math.inf  # public bribe size that counts as a fairness event
    fairness_until: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.e_security < self.e_fairness < 1:
            raise ValueError("need 0 < e_security < e_fairness < 1")
        if self.rho < 1:
            raise ValueError("rho must be at least 1")
        if self.fairness_window is not None and self.fairness_window < 1:
            raise ValueError("fairness_window must be positive")

    @property
    def security(self) -> bool:
        return any(f is Flag.SECURITY for _, f in self.flagged_events)

    def raise_flag(self, round_: int, flag: Flag) -> None:
        self.flagged_events.append((round_, flag))
        if flag is Flag.FAIRNESS:
            end = math.inf if self.fairness_window is None else round_ + self.fairness_window
            self.fairness_until = end if self.fairness_until is None else max(self.fairness_until, end)

    def theta_at(self, round_: int) -> float:
        if self.security:
            return self.e_security
        if self.fairness_until is not None and round_ < self.fairness_until:
            return self.e_fairness
        return 1.0

    def refresh(self, round_: int) -> float:
        self.theta = self.theta_at(round_)
        return self.theta

    def next_change(self, round_: int) -> Optional[int]:
        """First round after ``round_`` at which theta changes on its own."""
        if self.security or self.fairness_until is None or math.isinf(self.fairness_until):
            return None
        return int(self.fairness_until) if self.fairness_until > round_ else None


@dataclass(frozen=True)
class BlockSeen:
    round: int
    block_id: bytes


@dataclass(frozen=True)
class OfferSeen:
    round: int
    amount: float


@dataclass(frozen=True)
class RevealSeen:
    round: int
    valid: bool
    accused_root: Optional[bytes] = None


Evidence = Union[BlockSeen, OfferSeen, RevealSeen]


class ExternalObserver:
    """Watches only broadcast data and keeps its own view of the chain."""

    def __init__(self, tree: ChainTree, signal: ExternalitySignal):
        self.tree = tree
        self.signal = signal
        self.view = View(tree)

    def see_blocks(self, block_ids: Iterable[bytes], round_: int) -> None:
        """Receive every block that became public in ``round_``."""
        before = self.view.best
        new = []
        for bid in block_ids:
            new.extend(self.view.add(bid, round_))
        for bid in new:
            for tx in self.tree.blocks[bid].txs:
                if tx.kind is TxKind.BRIBE and tx.amount >= self.signal.bribe_threshold:
                    self.signal.raise_flag(round_, Flag.FAIRNESS)
        after = self.view.best
        if after != before and not self.tree.is_ancestor(before, after):
            self._check_reorg(before, after)

    def _check_reorg(self, old_tip: bytes, new_tip: bytes) -> None:
        tree = self.tree
        lca = tree.common_ancestor(old_tip, new_tip)
        arrival = self.view.arrival

        def branch(tip):
            out = []
            b = tree.blocks[tip]
            while b.id != lca.id:
                out.append((arrival[b.id], b.height))
                b = tree.blocks[b.parent]
            return out

        losing, winning = branch(old_tip), branch(new_tip)
        rounds = sorted({r for r, _ in losing} | {r for r, _ in winning})
        worst = 0
        for r in rounds:
            lose_h = max((h for a, h in losing if a <= r), default=lca.height)
            win_h = max((h for a, h in winning if a <= r), default=lca.height)
            worst = max(worst, lose_h - win_h)
        if worst >= self.signal.rho:
            self.signal.raise_flag(max(rounds), Flag.SECURITY)

    def see_offer(self, round_: int, amount: float) -> None:
        if amount >= self.signal.bribe_threshold:
            self.signal.raise_flag(round_, Flag.FAIRNESS)

    def see_reveal(self, round_: int, valid: bool, accused_root: Optional[bytes] = None) -> None:
        # a proven invalid fork counts as an attack that happened
        if valid:
            self.signal.raise_flag(round_, Flag.SECURITY)
            if accused_root is not None and accused_root in self.tree:
                self.view.exclude(accused_root)

    def apply(self, ev: Evidence) -> None:
        if isinstance(ev, BlockSeen):
            self.see_blocks([ev.block_id], ev.round)
        elif isinstance(ev, OfferSeen):
            self.see_offer(ev.round, ev.amount)
        elif isinstance(ev, RevealSeen):
            self.see_reveal(ev.round, ev.valid, ev.accused_root)
        else:
            raise TypeError(f"not an evidence item: {ev!r}")


def observer_update(tree: ChainTree, signal: ExternalitySignal,
                    evidence: Iterable[Evidence]) -> ExternalitySignal:
    """Replay ``evidence`` in round order on a fresh observer; the input signal is not mutated."""
    out = copy.deepcopy(signal)
    obs = ExternalObserver(tree, out)
    items = sorted(evidence, key=lambda e: e.round)
    last = 0
    i = 0
    while i < len(items):
        r = items[i].round
        blocks = []
        while i < len(items) and items[i].round == r:
            ev = items[i]
            if isinstance(ev, BlockSeen):
                blocks.append(ev.block_id)
            else:
                obs.apply(ev)
            i += 1
        if blocks:
            obs.see_blocks(blocks, r)
        last = r
    out.refresh(last)
    return out
