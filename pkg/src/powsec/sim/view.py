from __future__ import annotations

from ..chain import ChainTree


class View:
    """The blocks one participant has received, with its current best tip.

    The best tip only moves to a strictly higher block, so among equal
    heights the first one received wins. ``excluded`` holds roots of
    branches proven invalid; blocks under them are kept but never chosen.
    """

    def __init__(self, tree: ChainTree):
        self.tree = tree
        g = tree.genesis
        self.known: set[bytes] = {g}
        self.arrival: dict[bytes, int] = {g: 0}
        self.tips: set[bytes] = {g}
        self.best = g
        self.top: list[bytes] = [g]  # every known block at the best height
        self.log: list[bytes] = []  # arrival order, for incremental readers
        self.version = 0
        self.excluded: set[bytes] = set()
        self._pos: dict[bytes, int] = {}

    def _is_excluded(self, bid: bytes) -> bool:
        if not self.excluded:
            return False
        blocks = self.tree.blocks
        b = blocks[bid]
        heights = {blocks[r].height for r in self.excluded}
        lo = min(heights)
        while b.height >= lo:
            if b.id in self.excluded:
                return True
            b = blocks[b.parent]
        return False

    def add(self, bid: bytes, round_: int) -> list[bytes]:
        """Receive ``bid`` and any missing ancestors; returns the new ids, oldest first."""
        if bid in self.known:
            return []
        blocks = self.tree.blocks
        chain = []
        cur = bid
        while cur not in self.known:
            chain.append(cur)
            cur = blocks[cur].parent
        chain.reverse()
        for cid in chain:
            self._accept(blocks[cid], round_)
        return chain

    def _accept(self, b, round_):
        self.known.add(b.id)
        self.arrival[b.id] = round_
        self.tips.discard(b.parent)
        self.tips.add(b.id)
        self._pos[b.id] = len(self.log)
        self.log.append(b.id)
        if self._is_excluded(b.id):
            return
        best = self.tree.blocks[self.best]
        if b.height > best.height:
            self.top = [b.id]
            self.best = b.id
        elif b.height == best.height:
            self.top.append(b.id)
        self.version += 1

    def exclude(self, root: bytes) -> None:
        """Drop the branch rooted at ``root`` from fork choice."""
        self.excluded.add(root)
        blocks = self.tree.blocks
        live = [k for k in self.known if not self._is_excluded(k)]
        h = max(blocks[k].height for k in live)
        self.top = sorted((k for k in live if blocks[k].height == h),
                          key=lambda k: (self.arrival[k], self.log_index(k)))
        self.best = self.top[0]
        self.version += 1

    def log_index(self, bid: bytes) -> int:
        return -1 if bid == self.tree.genesis else self._pos[bid]

    def tied(self) -> list[bytes]:
        """Competing tips at the best height, in a stable order."""
        if len(self.top) <= 1:
            return [self.best]
        return sorted(self.top, key=self.log_index)

    def height(self) -> int:
        return self.tree.blocks[self.best].height
