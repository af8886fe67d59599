"""Block tree, difficulty epochs, reward phases and fork choice."""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

GENESIS_ID = bytes(32)


class ChainError(Exception):
    pass


class UnknownParent(ChainError):
    pass


class DuplicateBlock(ChainError):
    pass


class HeightMismatch(ChainError):
    pass


class DifficultyMismatch(ChainError):
    pass


class WrongEpochLength(ChainError):
    pass


class NonMonotoneTimestamps(ChainError):
    pass


class CustomSeriesExhausted(ChainError):
    pass


def digest(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    return h.digest()


class TxKind(Enum):
    NORMAL = "normal"
    BRIBE = "bribe"
    POI_COMMIT = "poi_commit"


@dataclass(frozen=True, slots=True)
class Transaction:
    """A transaction as carried in a block body.

    ``kind`` is bookkeeping for the simulator; it never reaches
    :meth:`wire_bytes`, so a commitment transaction serializes exactly like
    a normal one with a 32-byte payload.
    """

    id: bytes
    fee: float = 0.0
    kind: TxKind = TxKind.NORMAL
    payload: bytes = b""
    amount: float = 0.0  # bribe value, claimable by whoever mines the child block

    def __post_init__(self):
        if self.fee < 0:
            raise ValueError("fee must be non-negative")
        if self.kind is TxKind.BRIBE and not self.amount > 0:
            raise ValueError("bribe amount must be positive")

    def wire_bytes(self) -> bytes:
        return struct.pack(">dd", self.fee, self.amount) + self.payload

    @staticmethod
    def _make(fee, kind, payload, amount) -> "Transaction":
        body = struct.pack(">dd", fee, amount) + payload
        return Transaction(digest(body), fee, kind, payload, amount)

    @classmethod
    def normal(cls, payload: bytes, fee: float = 0.0) -> "Transaction":
        return cls._make(fee, TxKind.NORMAL, payload, 0.0)

    @classmethod
    def bribe(cls, amount: float, payload: bytes = b"") -> "Transaction":
        return cls._make(0.0, TxKind.BRIBE, payload, amount)

    @classmethod
    def poi_commit(cls, commitment: bytes, fee: float = 0.0) -> "Transaction":
        return cls._make(fee, TxKind.POI_COMMIT, commitment, 0.0)


@dataclass(frozen=True, slots=True)
class Block:
    id: bytes
    parent: Optional[bytes]
    height: int
    miner: int
    declared_timestamp: int
    actual_round: int
    difficulty_target: float
    txs: tuple = ()
    nonce: bytes = b""
    coinbase: bytes = b""


def block_id(parent: bytes, height: int, miner: int, declared_timestamp: int,
             difficulty: float, txs: Iterable[Transaction], nonce: bytes,
             coinbase: bytes = b"") -> bytes:
    head = struct.pack(">qqqd", height, miner, declared_timestamp, difficulty)
    body = b"".join(tx.wire_bytes() for tx in txs)
    return digest(parent, head, coinbase, digest(body), nonce)


def better_tip(a: Block, b: Block) -> bool:
    """True when ``a`` wins fork choice over ``b``.

    Higher wins; equal heights go to the earlier ``actual_round`` and then
    to the smaller id.
    """
    if a.height != b.height:
        return a.height > b.height
    if a.actual_round != b.actual_round:
        return a.actual_round < b.actual_round
    return a.id < b.id


@dataclass(frozen=True)
class EpochParams:
    lam: int
    tau_min: float = 0.25
    tau_max: float = 4.0
    target_block_interval: int = 60

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lam must be at least 1")
        if not 0 < self.tau_min <= 1 <= self.tau_max:
            raise ValueError("need 0 < tau_min <= 1 <= tau_max")
        if self.target_block_interval < 1:
            raise ValueError("target_block_interval must be at least 1")

    @property
    def schedule(self) -> int:
        """Rounds an epoch should take."""
        return self.lam * self.target_block_interval


def recalc_difficulty(epoch_blocks, params: EpochParams, old_difficulty: float, *,
                      boundary_timestamp: int):
    """Rescale difficulty after ``params.lam`` blocks.

    ``boundary_timestamp`` is the declared timestamp of the block that closed
    the previous epoch. Returns ``(new_difficulty, tau_applied)``.
    """
    if len(epoch_blocks) != params.lam:
        raise WrongEpochLength(f"expected {params.lam} blocks, got {len(epoch_blocks)}")
    prev = boundary_timestamp
    for b in epoch_blocks:
        if b.declared_timestamp < prev:
            raise NonMonotoneTimestamps(f"block at height {b.height} goes back in time")
        prev = b.declared_timestamp
    declared = epoch_blocks[-1].declared_timestamp - boundary_timestamp
    if declared <= 0:
        tau = params.tau_max
    else:
        tau = min(max(params.schedule / declared, params.tau_min), params.tau_max)
    return old_difficulty * tau, tau


class ChainTree:
    """Append-only block tree with per-branch difficulty."""

    def __init__(self, epoch: Optional[EpochParams] = None, initial_difficulty: float = 1.0):
        if not initial_difficulty > 0:
            raise ValueError("initial_difficulty must be positive")
        self.epoch = epoch
        genesis = Block(GENESIS_ID, None, 0, -1, 0, 0, initial_difficulty)
        self.genesis = GENESIS_ID
        self.blocks: dict[bytes, Block] = {GENESIS_ID: genesis}
        self.children: dict[bytes, list[bytes]] = {GENESIS_ID: []}
        self.tips: set[bytes] = {GENESIS_ID}
        self._next_difficulty: dict[bytes, float] = {GENESIS_ID: initial_difficulty}
        # (closing block id, tau applied) for every epoch transition seen
        self.epoch_log: list[tuple[bytes, float]] = []

    def __len__(self):
        return len(self.blocks)

    def __contains__(self, block_id):
        return block_id in self.blocks

    def __getitem__(self, block_id) -> Block:
        return self.blocks[block_id]

    @property
    def per_branch_difficulty(self) -> dict[bytes, float]:
        return {t: self._next_difficulty[t] for t in self.tips}

    def next_difficulty(self, parent_id: bytes) -> float:
        """Difficulty a child of ``parent_id`` must be mined at."""
        return self._next_difficulty[parent_id]

    def child(self, parent_id: bytes, miner: int, declared_timestamp: int, actual_round: int,
              txs=(), nonce: bytes = b"", coinbase: bytes = b"") -> Block:
        """Build (but do not append) a well-formed child of ``parent_id``."""
        parent = self.blocks.get(parent_id)
        if parent is None:
            raise UnknownParent(parent_id.hex())
        diff = self._next_difficulty[parent_id]
        txs = tuple(txs)
        h = parent.height + 1
        bid = block_id(parent_id, h, miner, declared_timestamp, diff, txs, nonce, coinbase)
        return Block(bid, parent_id, h, miner, declared_timestamp, actual_round, diff, txs,
                     nonce, coinbase)

    def append(self, block: Block) -> "ChainTree":
        if block.id in self.blocks:
            raise DuplicateBlock(block.id.hex())
        parent = self.blocks.get(block.parent)
        if parent is None:
            raise UnknownParent(f"parent {block.parent.hex() if block.parent else None} not in tree")
        if block.height != parent.height + 1:
            raise HeightMismatch(f"height {block.height} on parent of height {parent.height}")
        expected = self._next_difficulty[parent.id]
        if not math.isclose(block.difficulty_target, expected, rel_tol=1e-12):
            raise DifficultyMismatch(f"{block.difficulty_target} != {expected}")
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[parent.id].append(block.id)
        self.tips.discard(parent.id)
        self.tips.add(block.id)
        nxt = expected
        if self.epoch is not None and block.height % self.epoch.lam == 0:
            span = self.segment(block.id, self.epoch.lam)
            boundary = self.blocks[span[0].parent]
            nxt, tau = recalc_difficulty(span, self.epoch, expected,
                                         boundary_timestamp=boundary.declared_timestamp)
            self.epoch_log.append((block.id, tau))
        self._next_difficulty[block.id] = nxt
        return self

    def segment(self, tip_id: bytes, length: int) -> list[Block]:
        """The last ``length`` blocks ending at ``tip_id``, oldest first."""
        out = []
        b = self.blocks[tip_id]
        for _ in range(length):
            out.append(b)
            b = self.blocks[b.parent]
        out.reverse()
        return out

    def ancestor(self, block_id: bytes, height: int) -> Block:
        b = self.blocks[block_id]
        if height > b.height or height < 0:
            raise ValueError(f"no ancestor at height {height} for block at {b.height}")
        while b.height > height:
            b = self.blocks[b.parent]
        return b

    def is_ancestor(self, anc_id: bytes, block_id: bytes) -> bool:
        """True when ``anc_id`` is ``block_id`` or one of its ancestors."""
        a = self.blocks[anc_id]
        b = self.blocks[block_id]
        if a.height > b.height:
            return False
        return self.ancestor(block_id, a.height).id == anc_id

    def common_ancestor(self, a_id: bytes, b_id: bytes) -> Block:
        a, b = self.blocks[a_id], self.blocks[b_id]
        while a.height > b.height:
            a = self.blocks[a.parent]
        while b.height > a.height:
            b = self.blocks[b.parent]
        while a.id != b.id:
            a, b = self.blocks[a.parent], self.blocks[b.parent]
        return a

    def path(self, tip_id: bytes) -> list[bytes]:
        out = []
        b = self.blocks[tip_id]
        while True:
            out.append(b.id)
            if b.parent is None:
                break
            b = self.blocks[b.parent]
        out.reverse()
        return out

    def records(self):
        """Export rows, one per block, genesis first then by height."""
        for b in sorted(self.blocks.values(), key=lambda b: (b.height, b.actual_round, b.id)):
            yield {
                "id": b.id.hex(),
                "parent": b.parent.hex() if b.parent is not None else None,
                "height": b.height,
                "miner": b.miner,
                "declared_timestamp": b.declared_timestamp,
                "actual_round": b.actual_round,
                "difficulty_target": b.difficulty_target,
            }

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def read_chain_export(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def append_block(tree: ChainTree, block: Block) -> ChainTree:
    return tree.append(block)


def best_tip(tree: ChainTree, candidates: Iterable[bytes]) -> bytes:
    best = None
    for cid in candidates:
        b = tree.blocks[cid]
        if best is None or better_tip(b, best):
            best = b
    if best is None:
        return tree.genesis
    return best.id


def longest_chain(tree: ChainTree, visible: Optional[Iterable[bytes]] = None) -> list[bytes]:
    """Fork-choice result as a genesis-to-tip id list.

    With ``visible`` only those blocks compete (the caller guarantees they
    are ancestor-closed).
    """
    cands = tree.tips if visible is None else visible
    return tree.path(best_tip(tree, cands))


# ---------------------------------------------------------------- rewards

FAMILIES = ("constant", "geometric", "harmonic", "custom")


@dataclass(frozen=True)
class RewardSchedule:
    r0: float
    capital_lambda: int
    family: str = "constant"
    vartheta: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown reward family {self.family!r}")
        if self.r0 < 0 or self.capital_lambda < 1:
            raise ValueError("need r0 >= 0 and capital_lambda >= 1")
        if self.family == "geometric" and not 0 < self.vartheta <= 1:
            raise ValueError("geometric vartheta must lie in (0, 1]")
        if self.family == "custom":
            if not self.values or any(v <= 0 for v in self.values):
                raise ValueError("custom series needs positive values")

    def factor(self, phase: int) -> float:
        if self.family == "constant":
            return 1.0
        if self.family == "geometric":
            return self.vartheta ** phase
        if self.family == "harmonic":
            return 1.0 / (phase + 1)
        if phase >= len(self.values):
            raise CustomSeriesExhausted(f"phase {phase} beyond {len(self.values)} supplied values")
        return float(self.values[phase])

    def at(self, height: int) -> float:
        return self.r0 * self.factor(height // self.capital_lambda)


def block_reward_at(schedule: RewardSchedule, height: int) -> float:
    return schedule.at(height)


@dataclass
class InflationVerdict:
    inflationary: bool
    partial_sums: np.ndarray
    conclusive: bool = True


def is_inflationary(schedule: RewardSchedule, horizon: int) -> InflationVerdict:
    """Classify a reward series by whether its per-phase sums diverge.

    The named families are decided analytically; a custom series is judged
    from its prefix by checking whether the sums over successive doubling
    blocks stop shrinking.
    """
    if schedule.family == "custom":
        n = min(horizon, len(schedule.values))
        terms = schedule.r0 * np.asarray(schedule.values[:n], dtype=float)
    else:
        n = horizon
        i = np.arange(n, dtype=float)
        if schedule.family == "constant":
            terms = np.full(n, schedule.r0, dtype=float)
        elif schedule.family == "harmonic":
            terms = schedule.r0 / (i + 1)
        else:
            terms = schedule.r0 * schedule.vartheta ** i
    sums = np.cumsum(terms)
    if schedule.family in ("constant", "harmonic"):
        return InflationVerdict(True, sums)
    if schedule.family == "geometric":
        return InflationVerdict(schedule.vartheta >= 1.0, sums)
    blocks = []
    lo = 1
    while 2 * lo <= n:
        blocks.append(sums[2 * lo - 1] - sums[lo - 1])
        lo *= 2
    diverging = len(blocks) >= 2 and blocks[-1] >= 0.9 * blocks[-2]
    if diverging:
        warnings.warn("custom reward series looks unbounded on its prefix; "
                      "a finite prefix cannot prove divergence", stacklevel=2)
    return InflationVerdict(diverging, sums, conclusive=False)


__all__ = [
    "GENESIS_ID", "Block", "ChainTree", "EpochParams", "RewardSchedule", "Transaction", "TxKind",
    "InflationVerdict", "append_block", "best_tip", "better_tip", "block_id", "block_reward_at",
    "digest", "is_inflationary", "longest_chain", "read_chain_export", "recalc_difficulty",
    "ChainError", "UnknownParent", "DuplicateBlock", "HeightMismatch", "DifficultyMismatch",
    "WrongEpochLength", "NonMonotoneTimestamps", "CustomSeriesExhausted",
]
