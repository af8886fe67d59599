import math

import pytest

from powsec.chain import (
    GENESIS_ID, Block, ChainTree, CustomSeriesExhausted, DifficultyMismatch, DuplicateBlock,
    EpochParams, HeightMismatch, NonMonotoneTimestamps, RewardSchedule, Transaction, TxKind,
    UnknownParent, WrongEpochLength, best_tip, better_tip, block_reward_at, digest,
    is_inflationary, longest_chain, read_chain_export, recalc_difficulty,
)


def grow(tree, parent, n, miner=0, start_round=1, step=1):
    ids = []
    for i in range(n):
        r = start_round + i * step
        b = tree.child(parent, miner, r, r, nonce=bytes([miner % 256, i % 256]))
        tree.append(b)
        ids.append(b.id)
        parent = b.id
    return ids


class TestAppend:
    def test_child_of_genesis(self):
        t = ChainTree()
        b = t.child(GENESIS_ID, 0, 1, 1)
        t.append(b)
        assert len(t) == 2
        assert t.tips == {b.id}
        assert t[b.id].height == 1

    def test_second_child_forks(self):
        t = ChainTree()
        a = t.child(GENESIS_ID, 0, 1, 1)
        b = t.child(GENESIS_ID, 1, 1, 1)
        t.append(a).append(b)
        assert t.tips == {a.id, b.id}
        assert {t[x].height for x in t.tips} == {1}

    def test_unknown_parent(self):
        t = ChainTree()
        orphan = Block(b"x" * 32, b"y" * 32, 1, 0, 1, 1, 1.0)
        with pytest.raises(UnknownParent):
            t.append(orphan)

    def test_duplicate(self):
        t = ChainTree()
        b = t.child(GENESIS_ID, 0, 1, 1)
        t.append(b)
        with pytest.raises(DuplicateBlock):
            t.append(b)

    def test_height_and_difficulty_checked(self):
        t = ChainTree()
        good = t.child(GENESIS_ID, 0, 1, 1)
        bad_h = Block(good.id, GENESIS_ID, 2, 0, 1, 1, 1.0)
        with pytest.raises(HeightMismatch):
            t.append(bad_h)
        bad_d = Block(good.id, GENESIS_ID, 1, 0, 1, 1, 2.0)
        with pytest.raises(DifficultyMismatch):
            t.append(bad_d)

    def test_child_rejects_missing_parent(self):
        with pytest.raises(UnknownParent):
            ChainTree().child(b"z" * 32, 0, 1, 1)

    def test_nonpositive_initial_difficulty(self):
        with pytest.raises(ValueError):
            ChainTree(initial_difficulty=0)

    def test_block_id_covers_body(self):
        t = ChainTree()
        a = t.child(GENESIS_ID, 0, 1, 1, txs=[Transaction.normal(b"a", 1.0)])
        b = t.child(GENESIS_ID, 0, 1, 1, txs=[Transaction.normal(b"b", 1.0)])
        assert a.id != b.id


class TestForkChoice:
    def test_linear(self):
        t = ChainTree()
        ids = grow(t, GENESIS_ID, 5)
        assert longest_chain(t) == [GENESIS_ID] + ids

    def test_strict_longest(self):
        t = ChainTree()
        short = grow(t, GENESIS_ID, 4, miner=1)
        long_ = grow(t, GENESIS_ID, 6, miner=2)
        assert longest_chain(t)[-1] == long_[-1]
        assert short[-1] in t.tips

    def test_tie_goes_to_earlier_round(self):
        t = ChainTree()
        early = grow(t, GENESIS_ID, 4, miner=1, start_round=7, step=1)  # tip at round 10
        late = grow(t, GENESIS_ID, 4, miner=2, start_round=3, step=3)  # tip at round 12
        assert t[early[-1]].actual_round == 10 and t[late[-1]].actual_round == 12
        assert longest_chain(t)[-1] == early[-1]

    def test_tie_then_id(self):
        a = Block(b"\x01" * 32, GENESIS_ID, 1, 0, 1, 5, 1.0)
        b = Block(b"\x02" * 32, GENESIS_ID, 1, 0, 1, 5, 1.0)
        assert better_tip(a, b) and not better_tip(b, a)

    def test_visible_subset(self):
        t = ChainTree()
        a = grow(t, GENESIS_ID, 3, miner=1)
        b = grow(t, GENESIS_ID, 5, miner=2)
        assert longest_chain(t, visible=a)[-1] == a[-1]
        assert best_tip(t, []) == GENESIS_ID
        assert longest_chain(t, visible=a + b)[-1] == b[-1]

    def test_ancestry_helpers(self):
        t = ChainTree()
        trunk = grow(t, GENESIS_ID, 3)
        x = grow(t, trunk[1], 2, miner=5)
        y = grow(t, trunk[1], 1, miner=6)
        assert t.common_ancestor(x[-1], y[-1]).id == trunk[1]
        assert t.is_ancestor(trunk[0], x[-1])
        assert not t.is_ancestor(x[0], y[0])
        assert t.ancestor(x[-1], 2).id == trunk[1]
        with pytest.raises(ValueError):
            t.ancestor(y[0], 9)
        assert [b.id for b in t.segment(x[-1], 2)] == x


class TestDifficulty:
    P = EpochParams(lam=4, tau_min=0.25, tau_max=4.0, target_block_interval=10)

    def _epoch(self, duration):
        stamps = [duration * (i + 1) // 4 for i in range(4)]
        return [Block(bytes([i]) * 32, None, i + 1, 0, s, s, 1.0) for i, s in enumerate(stamps)]

    def test_on_schedule(self):
        d, tau = recalc_difficulty(self._epoch(40), self.P, 3.0, boundary_timestamp=0)
        assert tau == 1.0 and d == 3.0

    def test_slow_epoch_clamped(self):
        d, tau = recalc_difficulty(self._epoch(8 * 40), self.P, 1.0, boundary_timestamp=0)
        assert tau == 0.25 and d == 0.25

    def test_fast_epoch_clamped(self):
        _, tau = recalc_difficulty(self._epoch(4), self.P, 1.0, boundary_timestamp=0)
        assert tau == 4.0

    def test_zero_duration(self):
        _, tau = recalc_difficulty(self._epoch(0), self.P, 1.0, boundary_timestamp=0)
        assert tau == 4.0

    def test_wrong_length(self):
        with pytest.raises(WrongEpochLength):
            recalc_difficulty(self._epoch(40)[:3], self.P, 1.0, boundary_timestamp=0)

    def test_backwards_stamp(self):
        blocks = self._epoch(40)
        blocks[2] = Block(blocks[2].id, None, 3, 0, 1, 1, 1.0)
        with pytest.raises(NonMonotoneTimestamps):
            recalc_difficulty(blocks, self.P, 1.0, boundary_timestamp=0)

    def test_tree_applies_per_branch(self):
        t = ChainTree(self.P)
        slow = grow(t, GENESIS_ID, 4, miner=1, start_round=20, step=20)  # 80 rounds, tau 0.5
        fast = grow(t, GENESIS_ID, 4, miner=2, start_round=5, step=5)  # 20 rounds, tau 2
        assert t.next_difficulty(slow[-1]) == pytest.approx(0.5)
        assert t.next_difficulty(fast[-1]) == pytest.approx(2.0)
        assert len(t.epoch_log) == 2
        assert t.per_branch_difficulty[fast[-1]] == pytest.approx(2.0)

    def test_epoch_params_validated(self):
        with pytest.raises(ValueError):
            EpochParams(lam=0)
        with pytest.raises(ValueError):
            EpochParams(lam=10, tau_min=1.5)


class TestRewards:
    def test_geometric(self):
        s = RewardSchedule(50.0, 10, "geometric", 0.5)
        assert s.at(25) == 12.5
        assert block_reward_at(s, 9) == 50.0

    def test_constant(self):
        s = RewardSchedule(50.0, 10)
        assert {s.at(h) for h in (0, 1, 99, 10 ** 7)} == {50.0}

    def test_harmonic(self):
        assert RewardSchedule(60.0, 10, "harmonic").at(20) == pytest.approx(20.0)

    def test_custom_exhausted(self):
        s = RewardSchedule(1.0, 5, "custom", values=(1.0, 0.5))
        assert s.at(7) == 0.5
        with pytest.raises(CustomSeriesExhausted):
            s.at(10)

    def test_bad_family(self):
        with pytest.raises(ValueError):
            RewardSchedule(1.0, 5, "linear")

    def test_inflation_verdicts(self):
        assert not is_inflationary(RewardSchedule(50.0, 10, "geometric", 0.5), 200).inflationary
        assert is_inflationary(RewardSchedule(50.0, 10), 200).inflationary
        assert is_inflationary(RewardSchedule(50.0, 10, "harmonic"), 200).inflationary
        v = is_inflationary(RewardSchedule(50.0, 10, "geometric", 0.5), 200)
        assert v.partial_sums[-1] <= 100.0

    def test_custom_verdict_is_inconclusive(self):
        with pytest.warns(UserWarning):
            v = is_inflationary(RewardSchedule(1.0, 5, "custom", values=(1.0,) * 64), 64)
        assert v.inflationary and not v.conclusive
        v = is_inflationary(RewardSchedule(1.0, 5, "custom", values=tuple(0.5 ** i for i in range(64))), 64)
        assert not v.inflationary


class TestTransactions:
    def test_kind_does_not_reach_wire(self):
        c = Transaction.poi_commit(b"c" * 32, 0.5)
        n = Transaction.normal(b"c" * 32, 0.5)
        assert c.wire_bytes() == n.wire_bytes()
        assert c.kind is TxKind.POI_COMMIT

    def test_validation(self):
        with pytest.raises(ValueError):
            Transaction.normal(b"", -1.0)
        with pytest.raises(ValueError):
            Transaction.bribe(0.0)

    def test_digest_is_length_prefixed(self):
        assert digest(b"ab", b"c") != digest(b"a", b"bc")


def test_export_round_trip(tmp_path):
    t = ChainTree(EpochParams(lam=3, target_block_interval=1))
    ids = grow(t, GENESIS_ID, 5)
    path = tmp_path / "chain.jsonl"
    t.to_jsonl(path)
    rows = read_chain_export(path)
    assert len(rows) == 6
    assert rows[0]["parent"] is None
    assert [r["id"] for r in rows[1:]] == [i.hex() for i in ids]
    assert all(math.isfinite(r["difficulty_target"]) for r in rows)
