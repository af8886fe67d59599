"""Countermeasures: invalidity commitments on lagging forks, the difficulty
clamp, and hash-bound transaction inclusion."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .analytics import qf_deviation_payoff
from .chain import ChainTree, EpochParams, Transaction, digest

CLAMP_FLOOR = 0.5


class DegeneratePhi(ValueError):
    pass


class UnknownCommit(LookupError):
    pass


class Verdict(Enum):
    VALID_INVALIDATION = "ValidInvalidation"
    INVALID = "Invalid"


@dataclass(frozen=True)
class PragthosConfig:
    pc_mod: bool = False
    tau_clamp: bool = False
    tx_inclusion: bool = False
    mu: float = 0.2
    l: int = 8
    divert_fraction: float = 1.0
    broadcast_poi: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.l < 0:
            raise ValueError("l must be non-negative")
        if not 0.0 <= self.divert_fraction <= 1.0:
            raise ValueError("divert_fraction must lie in [0, 1]")


def clamp_epoch(epoch: EpochParams) -> EpochParams:
    """Raise the lower difficulty factor to one half."""
    if epoch.tau_min >= CLAMP_FLOOR:
        return epoch
    return replace(epoch, tau_min=CLAMP_FLOOR)


# ------------------------------------------------------------ threshold gap

def k_th_compute(beta_hon: float, rho: int, mu: float):
    """Fork deficit the fork side still closes with probability at least ``1 - mu``.

    Returns ``(real_value, floor)``; the floor is what triggers placement.
    """
    if not 0.0 < beta_hon < 0.5:
        raise DegeneratePhi("need 0 < beta_hon < 1/2 so the fork side can overtake")
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    phi = beta_hon / (1.0 - beta_hon)
    x = mu + phi ** rho * (1.0 - mu)
    k = rho - math.log(x) / math.log(phi)
    k = min(max(k, 0.0), float(rho))
    return k, math.floor(k + 1e-9)


class PoiInclusion(NamedTuple):
    exact: float
    bound: float


def poi_inclusion_probability(beta_hon: float, k_th: float) -> PoiInclusion:
    """Chance honest miners land at least one of ``k_th`` fork blocks."""
    if not 0.0 <= beta_hon <= 1.0 or k_th < 0:
        raise ValueError("need beta_hon in [0, 1] and k_th >= 0")
    return PoiInclusion(1.0 - (1.0 - beta_hon) ** k_th, 1.0 - math.exp(-beta_hon * k_th))


@dataclass
class WindowStats:
    windows: int
    own: float
    broadcast: float
    combined: float


def simulate_poi_windows(rng, beta_hon: float, k_th: int, windows: int,
                         inclusion_rate: float = 0.0) -> WindowStats:
    """Monte Carlo over ``windows`` fork stretches of ``k_th`` blocks.

    Each block goes to an honest miner with probability ``beta_hon`` (who
    places the commitment). Any other block carries the broadcast
    commitment with probability ``inclusion_rate``.
    """
    k = int(k_th)
    if k <= 0:
        return WindowStats(windows, 0.0, 0.0, 0.0)
    honest = rng.random((windows, k)) < beta_hon
    carried = (rng.random((windows, k)) < inclusion_rate) & ~honest
    own = honest.any(axis=1)
    bcast = carried.any(axis=1)
    return WindowStats(windows, float(own.mean()), float(bcast.mean()), float((own | bcast).mean()))


# ------------------------------------------------------------ commit / reveal

def poi_hash(ref_digest: bytes, secret: bytes, key: bytes = b"") -> bytes:
    return hashlib.blake2b(ref_digest + secret, key=key, digest_size=32).digest()


@dataclass(frozen=True)
class PoICommit:
    commitment: bytes
    creator: int = -1
    committed_height: int = 0

    def to_tx(self, fee: float = 0.0) -> Transaction:
        return Transaction.poi_commit(self.commitment, fee)


@dataclass(frozen=True)
class PoIReveal:
    m_secret: bytes
    referenced_block: bytes
    poi_tx_location: tuple  # (tip id of the accused chain, height of the carrying block)


def make_poi(rng, honest_tip_digest: bytes, height: int, *, creator: int = -1, key: bytes = b""):
    secret = rng.bytes(32)
    return PoICommit(poi_hash(honest_tip_digest, secret, key), creator, height), secret


def verify_poi_reveal(commit: PoICommit, reveal: PoIReveal, tree: ChainTree, k_th: int,
                      key: bytes = b"") -> Verdict:
    """Check that a commitment on a fork proves the fork trailed by ``k_th``.

    Raises :class:`UnknownCommit` when the named block of the accused
    chain does not carry the commitment.
    """
    tip, height = reveal.poi_tx_location
    if tip not in tree or reveal.referenced_block not in tree:
        return Verdict.INVALID
    if height > tree[tip].height or height < 1:
        return Verdict.INVALID
    carrier = tree.ancestor(tip, height)
    if not any(tx.payload == commit.commitment for tx in carrier.txs):
        raise UnknownCommit("commitment not carried at the stated location")
    if poi_hash(reveal.referenced_block, reveal.m_secret, key) != commit.commitment:
        return Verdict.INVALID
    ref = tree[reveal.referenced_block]
    # the referenced block has to sit on a competing branch
    if tree.is_ancestor(carrier.id, ref.id) or tree.is_ancestor(ref.id, carrier.id):
        return Verdict.INVALID
    if carrier.height > ref.height - k_th:
        return Verdict.INVALID
    return Verdict.VALID_INVALIDATION


def expected_fork_theta(beta_hon: float, k_th: int, e_security: float) -> float:
    """Conversion rate a fork joiner should expect once commitments can expose the fork."""
    p = poi_inclusion_probability(beta_hon, k_th).exact
    return (1.0 - p) + p * e_security


def pcmod_deviation_payoff(n, beta_hon, beta_rat, beta_adv, eta, vartheta, k, m, *, rho, mu,
                           e_security, chi1=1.0, r_block=None):
    """Fork-joining comparison when invalidity commitments are in force."""
    _, k_floor = k_th_compute(beta_hon, rho, mu)
    theta = expected_fork_theta(beta_hon, k_floor, e_security)
    return qf_deviation_payoff(n, beta_hon, beta_rat, beta_adv, eta, vartheta, k, m,
                               chi1=chi1, theta_deviate=theta, r_block=r_block)


# ------------------------------------------------------------ transaction inclusion

def _low_bits(h: bytes, l: int) -> int:
    return int.from_bytes(h, "big") & ((1 << l) - 1)


def c1_filter(tx: Transaction, dest: bytes, parent_hash: bytes, l: int) -> bool:
    """Whether a miner paying to ``dest`` may include ``tx`` on ``parent_hash``."""
    if l < 0:
        raise ValueError("l must be non-negative")
    if l == 0:
        return True
    a = digest(tx.wire_bytes(), parent_hash)
    b = digest(dest, parent_hash)
    return _low_bits(a, l) == _low_bits(b, l)


def epsilon_g_bound(total_withheld_fee: float, l: int) -> float:
    if total_withheld_fee < 0 or l < 0:
        raise ValueError("need non-negative fee and l")
    return total_withheld_fee / 2 ** l


def miner_dest(miner: int) -> bytes:
    return digest(b"dest", miner.to_bytes(8, "big", signed=True))


@dataclass
class WithholdingTrial:
    l: int
    reps: int
    gaps: np.ndarray  # secret minus gossip utility, one entry per rep
    bound: float

    @property
    def mean(self) -> float:
        return float(self.gaps.mean())

    @property
    def stderr(self) -> float:
        return float(self.gaps.std(ddof=1) / math.sqrt(self.reps))


def tx_inclusion_trial(rng, fee: float, pool_share: float, l: int, reps: int,
                       delta: float = 0.9, horizon: Optional[int] = None) -> WithholdingTrial:
    """Paired Monte Carlo of a pool that keeps a transaction private versus gossiping it.

    Every rep draws one block sequence (miner, parent hash) and evaluates
    both worlds on it. Under gossip the first block whose miner passes the
    inclusion filter takes the fee; kept private, only the pool's own
    passing blocks can. Fees are discounted by ``delta`` per block.
    """
    if not 0 <= l <= 32:
        raise ValueError("l must lie in [0, 32]")
    if horizon is None:
        horizon = math.ceil(math.log(1e-12) / math.log(delta))
    tx = Transaction.normal(rng.bytes(32), fee)
    wire = tx.wire_bytes()
    pool_dest = miner_dest(0)
    mask = (1 << l) - 1
    gaps = np.empty(reps)
    for i in range(reps):
        secret = gossip = 0.0
        pool_blocks = rng.random(horizon) < pool_share
        parents = rng.bytes(32 * horizon)
        dests = rng.bytes(32 * horizon)  # coinbase targets of the other miners
        disc = delta
        done_g = False
        for t in range(horizon):
            parent = parents[32 * t:32 * t + 32]
            mine = pool_blocks[t]
            dest = pool_dest if mine else dests[32 * t:32 * t + 32]
            a = int.from_bytes(digest(wire, parent)[-4:], "big")
            b = int.from_bytes(digest(dest, parent)[-4:], "big")
            if l == 0 or (a & mask) == (b & mask):
                if not done_g:
                    done_g = True
                    if mine:
                        gossip = fee * disc
                if mine:
                    secret = fee * disc
                    break
            disc *= delta
        gaps[i] = secret - gossip
    return WithholdingTrial(l, reps, gaps, epsilon_g_bound(fee, l))


def block_txs_allowed(txs, dest: bytes, parent_hash: bytes, l: int) -> list:
    """The subset of relayed ``txs`` a compliant miner may include."""
    return [tx for tx in txs if c1_filter(tx, dest, parent_hash, l)]
