"""Header tree with cumulative-work fork choice.

Shared by full nodes and light clients: both track every valid header
they have seen, keep the tip on the branch with the most accumulated
work, and only switch branches when a competitor is strictly heavier
(ties keep the first-seen branch).
"""

from __future__ import annotations

from .chain import BlockHeader, ZERO32, block_work, header_hash, pow_ok
from .errors import ValidationError


class HeaderIndex:
    def __init__(self):
        self.headers: dict[bytes, BlockHeader] = {}
        self.work: dict[bytes, int] = {}
        self.tip: bytes | None = None
        self._active: list[bytes] = []  # hashes by height on the tip's branch

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self.headers

    @property
    def tip_height(self) -> int:
        if self.tip is None:
            raise ValidationError("unknown-block", "header index is empty")
        return self.headers[self.tip].height

    def add(self, header: BlockHeader) -> bytes:
        """Validate and index a header; returns its hash.

        Raises ValidationError with code 'pow-failure', 'unknown-parent',
        or 'bad-height'. Re-adding a known header is a no-op.
        """
        hh = header_hash(header)
        if hh in self.headers:
            return hh
        if not pow_ok(header):
            raise ValidationError("pow-failure", height=header.height)
        if header.prev_hash == ZERO32 and header.height == 0:
            parent_work = 0
        elif header.prev_hash not in self.headers:
            raise ValidationError("unknown-parent", height=header.height)
        else:
            parent = self.headers[header.prev_hash]
            if header.height != parent.height + 1:
                raise ValidationError("bad-height", height=header.height)
            parent_work = self.work[header.prev_hash]
        self.headers[hh] = header
        self.work[hh] = parent_work + block_work(header)
        if self.tip is None or self.work[hh] > self.work[self.tip]:
            self.tip = hh
            self._active = self._branch_of(hh)
        return hh

    def _branch_of(self, block_hash: bytes) -> list[bytes]:
        branch = []
        cursor = block_hash
        while True:
            branch.append(cursor)
            header = self.headers[cursor]
            if header.prev_hash == ZERO32 and header.height == 0:
                break
            cursor = header.prev_hash
        branch.reverse()
        return branch

    def active_chain(self) -> list[bytes]:
        return list(self._active)

    def active_hash_at(self, height: int) -> bytes:
        if not 0 <= height < len(self._active):
            raise ValidationError("unknown-block", f"no active block at height {height}")
        return self._active[height]

    def on_active_chain(self, block_hash: bytes) -> bool:
        if block_hash not in self.headers:
            return False
        height = self.headers[block_hash].height
        return height < len(self._active) and self._active[height] == block_hash

    def header_at(self, height: int) -> BlockHeader:
        return self.headers[self.active_hash_at(height)]

    def fork_height(self, a: bytes, b: bytes) -> int:
        """Height of the deepest common ancestor of two indexed blocks."""
        seen = set()
        cursor = a
        while True:
            seen.add(cursor)
            header = self.headers[cursor]
            if header.prev_hash == ZERO32 and header.height == 0:
                break
            cursor = header.prev_hash
        cursor = b
        while cursor not in seen:
            cursor = self.headers[cursor].prev_hash
        return self.headers[cursor].height
