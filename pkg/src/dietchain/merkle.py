"""Binary Merkle trees with partial (multi-leaf) proofs.

Parents are ``hash256(left || right)``. A layer with an odd number of
nodes pairs its last node with itself. A single leaf is its own root,
with no hashing step.

A partial tree carries a subset of leaves plus the minimal set of
sibling hashes needed to rebuild the root: a sibling is included only if
it cannot be derived from the included leaves themselves. Updating
included leaves keeps every sibling valid, which is what lets a verifier
patch a few shard hashes and recompute the root without the full tree.

Wire layout::

    total_leaves(u32)
    included: count(u16), then per entry index(u32) hash(32), index-sorted
    siblings: count(u16), then per entry level(u8) index(u32) hash(32),
              sorted by (level, index)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .chain import Reader
from .crypto import hash256
from .errors import DecodeError, IncompleteProofError


def _layer_widths(n: int) -> list[int]:
    """Node counts per level, leaves first. [5] -> [5, 3, 2, 1]."""
    widths = [n]
    while widths[-1] > 1:
        widths.append((widths[-1] + 1) // 2)
    return widths


def build_levels(leaves: list[bytes]) -> list[list[bytes]]:
    """All tree levels, leaves first, root level last."""
    if not leaves:
        raise ValueError("cannot build a tree with no leaves")
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        layer = levels[-1]
        parents = []
        for i in range(0, len(layer), 2):
            left = layer[i]
            right = layer[i + 1] if i + 1 < len(layer) else left
            parents.append(hash256(left + right))
        levels.append(parents)
    return levels


def build_root(leaves: list[bytes]) -> bytes:
    return build_levels(leaves)[-1][0]


@dataclass(frozen=True)
class MerkleTree:
    levels: tuple[tuple[bytes, ...], ...]

    @classmethod
    def from_leaves(cls, leaves: list[bytes]) -> "MerkleTree":
        return cls(levels=tuple(tuple(level) for level in build_levels(leaves)))

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]


@dataclass(frozen=True)
class PartialMerkleTree:
    total_leaves: int
    included: dict[int, bytes]          # leaf index -> leaf hash
    siblings: dict[tuple[int, int], bytes]  # (level, index) -> node hash

    def __post_init__(self):
        if self.total_leaves <= 0:
            raise ValueError("partial tree over zero leaves")
        if not self.included:
            raise ValueError("partial tree must include at least one leaf")
        for idx in self.included:
            if not 0 <= idx < self.total_leaves:
                raise ValueError(f"included leaf index {idx} out of range")


def extract_partial(leaves: list[bytes], include: set[int]) -> PartialMerkleTree:
    """Build a partial tree proving the leaves at ``include``.

    The sibling set is minimal: per level, only nodes adjacent to the
    proven paths that the included leaves cannot reproduce.
    """
    n = len(leaves)
    if not include:
        raise ValueError("must include at least one leaf")
    if not all(0 <= i < n for i in include):
        raise ValueError("include set out of range")
    levels = build_levels(leaves)
    siblings: dict[tuple[int, int], bytes] = {}
    frontier = set(include)
    for level in range(len(levels) - 1):
        width = len(levels[level])
        for i in frontier:
            sib = i ^ 1
            if sib < width and sib not in frontier:
                siblings[(level, sib)] = levels[level][sib]
        frontier = {i // 2 for i in frontier}
    return PartialMerkleTree(
        total_leaves=n,
        included={i: leaves[i] for i in include},
        siblings=siblings,
    )


def partial_root(p: PartialMerkleTree) -> bytes:
    """Recompute the root from included leaves plus siblings.

    Raises IncompleteProofError if a needed node is neither included,
    provided as a sibling, nor an odd-layer self-pair.
    """
    widths = _layer_widths(p.total_leaves)
    known: dict[tuple[int, int], bytes] = {}
    for idx, h in p.included.items():
        known[(0, idx)] = h
    for (level, idx), h in p.siblings.items():
        if level >= len(widths) or not 0 <= idx < widths[level]:
            raise IncompleteProofError(f"sibling ({level}, {idx}) outside the tree")
        known.setdefault((level, idx), h)

    frontier = sorted(p.included)
    for level in range(len(widths) - 1):
        width = widths[level]
        parents = sorted({i // 2 for i in frontier})
        for j in parents:
            left = known.get((level, 2 * j))
            if 2 * j + 1 < width:
                right = known.get((level, 2 * j + 1))
            else:
                right = left  # odd layer: last node pairs with itself
            if left is None or right is None:
                raise IncompleteProofError(
                    f"missing node at level {level}, pair {j}"
                )
            known[(level + 1, j)] = hash256(left + right)
        frontier = parents
    return known[(len(widths) - 1, 0)]


def contains(p: PartialMerkleTree, leaf_hash: bytes) -> bool:
    """Is ``leaf_hash`` one of the included leaves?"""
    return leaf_hash in p.included.values()


def update_in_place(p: PartialMerkleTree, changed: dict[int, bytes]) -> PartialMerkleTree:
    """Replace included leaf hashes; siblings stay valid by construction."""
    for idx in changed:
        if idx not in p.included:
            raise ValueError(f"leaf {idx} is not included in the partial tree")
    return PartialMerkleTree(
        total_leaves=p.total_leaves,
        included={**p.included, **changed},
        siblings=p.siblings,
    )


def encode_partial(p: PartialMerkleTree) -> bytes:
    parts = [struct.pack("<IH", p.total_leaves, len(p.included))]
    for idx in sorted(p.included):
        parts.append(struct.pack("<I", idx) + p.included[idx])
    parts.append(struct.pack("<H", len(p.siblings)))
    for level, idx in sorted(p.siblings):
        parts.append(struct.pack("<BI", level, idx) + p.siblings[(level, idx)])
    return b"".join(parts)


def read_partial(r: Reader) -> PartialMerkleTree:
    """Decode a partial tree from a reader positioned at its first byte."""
    total = r.u32()
    included = {}
    for _ in range(r.u16()):
        idx = r.u32()
        included[idx] = r.take(32)
    siblings = {}
    for _ in range(r.u16()):
        level = r.u8()
        idx = r.u32()
        siblings[(level, idx)] = r.take(32)
    try:
        return PartialMerkleTree(total_leaves=total, included=included, siblings=siblings)
    except ValueError as exc:
        raise DecodeError(str(exc), r.offset) from exc


def decode_partial(data: bytes) -> PartialMerkleTree:
    r = Reader(data)
    p = read_partial(r)
    r.done()
    return p
