"""Randomized invariants of the block tree, difficulty rescaling and reward schedule.

Each property runs 2500 examples, 10^4 in all. The acceptance suite calls
them; the module name keeps pytest from collecting them a second time.
"""

import math

from hypothesis import given, settings, strategies as st

from powsec.chain import (
    GENESIS_ID, Block, ChainTree, EpochParams, RewardSchedule, longest_chain, recalc_difficulty,
)
from powsec.pragthos import clamp_epoch

CASES = settings(max_examples=2500)

# a tree is grown from (parent choice, round gap) pairs; the parent index wraps over known blocks
growth = st.lists(st.tuples(st.integers(0, 10 ** 6), st.integers(0, 50)), min_size=1, max_size=40)


def build(steps, epoch=None):
    t = ChainTree(epoch)
    ids = [GENESIS_ID]
    clock = 0
    for i, (pick, gap) in enumerate(steps):
        parent = ids[pick % len(ids)]
        clock += gap
        ts = max(clock, t[parent].declared_timestamp)
        b = t.child(parent, i % 7, ts, clock, nonce=i.to_bytes(4, "big"))
        t.append(b)
        ids.append(b.id)
    return t, ids


@CASES
@given(growth)
def prop_parent_closure(steps):
    t, ids = build(steps)
    for bid in ids[1:]:
        assert t[bid].parent in t
    chain = longest_chain(t)
    assert chain[0] == GENESIS_ID
    for a, b in zip(chain, chain[1:]):
        assert t[b].parent == a
    # every tip is a block with no children, and every childless block is a tip
    assert t.tips == {bid for bid in ids if not t.children[bid]}


@CASES
@given(growth, st.integers(1, 6))
def prop_heights(steps, lam):
    t, ids = build(steps, EpochParams(lam, target_block_interval=5))
    for bid in ids[1:]:
        assert t[bid].height == t[t[bid].parent].height + 1
    tip = longest_chain(t)[-1]
    assert len(longest_chain(t)) == t[tip].height + 1
    assert t[tip].height == max(t[b].height for b in ids)


@CASES
@given(st.lists(st.integers(0, 10 ** 5), min_size=1, max_size=30),
       st.floats(0.01, 1.0), st.floats(1.0, 8.0), st.integers(1, 500), st.integers(0, 10 ** 4))
def prop_difficulty_clamp(gaps, tau_min, tau_max, interval, start):
    params = EpochParams(len(gaps), tau_min, tau_max, interval)
    stamps = []
    clock = start
    for g in gaps:
        clock += g
        stamps.append(clock)
    blocks = [Block(bytes(32), None, i + 1, 0, s, s, 1.0) for i, s in enumerate(stamps)]
    d, tau = recalc_difficulty(blocks, params, 2.0, boundary_timestamp=start)
    assert tau_min <= tau <= tau_max
    assert math.isclose(d, 2.0 * tau)
    clamped = clamp_epoch(params)
    _, tau_c = recalc_difficulty(blocks, clamped, 2.0, boundary_timestamp=start)
    assert tau_c >= 0.5
    assert tau_c == max(tau, 0.5)


@CASES
@given(st.sampled_from(["constant", "geometric", "harmonic"]), st.floats(0.05, 1.0),
       st.floats(0.1, 100.0), st.integers(1, 20), st.integers(1, 400))
def prop_reward_partial_sums(family, vartheta, r0, cap, horizon):
    s = RewardSchedule(r0, cap, family, vartheta)
    rewards = [s.at(h) for h in range(horizon)]
    assert all(r >= 0 for r in rewards)
    assert all(b <= a for a, b in zip(rewards, rewards[1:]))
    total = math.fsum(rewards)
    phases, rest = divmod(horizon, cap)
    by_phase = math.fsum(cap * r0 * s.factor(i) for i in range(phases)) + rest * r0 * s.factor(phases)
    assert math.isclose(total, by_phase, rel_tol=1e-9)
    if family == "geometric" and vartheta < 1:
        assert total <= r0 * cap / (1 - vartheta) * (1 + 1e-12)


PROPERTIES = (prop_parent_closure, prop_heights, prop_difficulty_clamp, prop_reward_partial_sums)
