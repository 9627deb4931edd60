"""Sharded UTXO set with height-versioned history and a Merkle root.

Coins are bucketed by the first ``k`` bits of their creating txid (byte
0 first, most significant bit first), giving ``2**k`` shards. The store
commits to a root over all shard hashes after every block and keeps
every previous version of every shard it ever changed, so it can later
prove what any shard looked like just before a given block.

Two rules shape the commitment:

* The committed root for a block covers the state after that block's
  non-coinbase transactions. The block's own reward coins depend on the
  coinbase txid, which embeds the root itself, so they cannot be under
  it; they are parked in ``pending`` and enter the shards at the start
  of the next block's application, making them spendable immediately
  but first reflected in the next committed root.

* When total serialized shard bytes exceed ``size_cap`` per shard on
  average, ``k`` increments (splitting every shard in two) until the
  average fits. The split runs before root computation, so committed
  roots always describe the post-split tree, and it is a pure function
  of the coin set, so any verifier holding all shards can replay it.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

from .chain import KIND_PAYMENT, OutPoint, Reader, Transaction, txid
from .crypto import hash256
from .errors import DecodeError, HistoryUnavailableError, InconsistentStateError
from .merkle import PartialMerkleTree, build_root, extract_partial

COIN_SIZE = 76
EMPTY_SHARD_BYTES = b"\x00\x00"


class Coin(NamedTuple):
    outpoint: OutPoint
    value: int
    challenge: bytes


def shard_key(tx_id: bytes, k: int) -> int:
    """First ``k`` bits of the txid as an unsigned integer."""
    if not 0 <= k <= 32:
        raise ValueError(f"k must be in [0, 32], got {k}")
    if k == 0:
        return 0
    return int.from_bytes(tx_id[:4], "big") >> (32 - k)


def coins_of(tx: Transaction) -> list[Coin]:
    """The spendable coins a transaction creates (payment outputs only)."""
    tid = txid(tx)
    return [
        Coin(OutPoint(tid, n), out.value, out.payload)
        for n, out in enumerate(tx.outputs)
        if out.kind == KIND_PAYMENT
    ]


def encode_coin(c: Coin) -> bytes:
    return c.outpoint.txid + struct.pack("<IQ", c.outpoint.index, c.value) + c.challenge


def encode_shard_coins(coins: list[Coin]) -> bytes:
    return struct.pack("<H", len(coins)) + b"".join(encode_coin(c) for c in coins)


def shard_leaf_hash(encoded: bytes) -> bytes:
    """Leaf hash of a serialized shard; an empty shard hashes as the
    empty byte string, not as its two count bytes."""
    if encoded == EMPTY_SHARD_BYTES:
        return hash256(b"")
    return hash256(encoded)


@dataclass(frozen=True)
class Shard:
    index: int
    coins: tuple[Coin, ...]  # sorted by outpoint

    def encode(self) -> bytes:
        return encode_shard_coins(list(self.coins))

    @property
    def leaf_hash(self) -> bytes:
        return shard_leaf_hash(self.encode())


def decode_shard(data: bytes, index: int) -> Shard:
    r = Reader(data)
    count = r.u16()
    coins = []
    for _ in range(count):
        tid = r.take(32)
        idx, value = struct.unpack("<IQ", r.take(12))
        coins.append(Coin(OutPoint(tid, idx), value, r.take(32)))
    r.done()
    if coins != sorted(coins):
        raise DecodeError("shard coins out of order", len(data))
    return Shard(index=index, coins=tuple(coins))


@dataclass(frozen=True)
class RebalanceStep:
    height: int
    k_from: int
    k_to: int
    avg_before: float
    avg_after: float


@dataclass(frozen=True)
class TouchedRecord:
    """Which shards a block's application changed, in the coordinates of
    the tree its proofs are checked against (the pre-split ``k``)."""
    indices: frozenset[int]
    k: int
    rebalanced: bool


@dataclass
class VersionedShardStore:
    initial_k: int = 0
    size_cap: int = 1024
    k: int = field(init=False)
    shards: dict[int, list[Coin]] = field(init=False)
    pending: list[Coin] = field(init=False, default_factory=list)
    height: int | None = field(init=False, default=None)
    current_root: bytes = field(init=False)
    # (k, shard index) -> [(height, encoded shard bytes)] in height order
    versions: dict[tuple[int, int], list[tuple[int, bytes]]] = field(init=False, default_factory=dict)
    root_log: dict[int, bytes] = field(init=False, default_factory=dict)
    touched_log: dict[int, TouchedRecord] = field(init=False, default_factory=dict)
    policy_log: list[tuple[int, int]] = field(init=False, default_factory=list)
    rebalance_log: list[RebalanceStep] = field(init=False, default_factory=list)
    _leaf_cache: dict[int, bytes] = field(init=False, default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.initial_k <= 32:
            raise ValueError("initial_k must be in [0, 32]")
        if self.size_cap <= 0:
            raise ValueError("size_cap must be positive")
        self.k = self.initial_k
        self.shards = {i: [] for i in range(1 << self.k)}
        self._refresh_all_leaves()
        self.current_root = build_root([self._leaf_cache[i] for i in range(1 << self.k)])

    # -- current-state queries -------------------------------------------

    def get_coin(self, outpoint: OutPoint) -> Coin | None:
        """Look up a spendable coin, including not-yet-committed rewards."""
        shard = self.shards[shard_key(outpoint.txid, self.k)]
        i = bisect.bisect_left(shard, outpoint, key=lambda c: c.outpoint)
        if i < len(shard) and shard[i].outpoint == outpoint:
            return shard[i]
        for coin in self.pending:
            if coin.outpoint == outpoint:
                return coin
        return None

    def all_coins(self) -> Iterator[Coin]:
        for i in range(1 << self.k):
            yield from self.shards[i]
        yield from self.pending

    def total_shard_bytes(self) -> int:
        return sum(2 + COIN_SIZE * len(self.shards[i]) for i in range(1 << self.k))

    def average_shard_bytes(self) -> float:
        return self.total_shard_bytes() / (1 << self.k)

    def utxo_root(self) -> bytes:
        return self.current_root

    def k_at(self, height: int) -> int:
        """The shard count exponent in effect after applying ``height``."""
        k = self.initial_k
        for h, new_k in self.policy_log:
            if h <= height:
                k = new_k
        return k

    # -- mutation ---------------------------------------------------------

    def apply_block(self, block, height: int) -> tuple[bytes, frozenset[int]]:
        """Apply a validated block; returns (committed root, changed shards).

        The caller must have validated the block: missing inputs here are
        an InconsistentStateError, not a verdict.
        """
        if self.height is not None and height != self.height + 1:
            raise InconsistentStateError(
                f"expected height {self.height + 1}, got {height}")
        if self.height is None and height != 0:
            raise InconsistentStateError("first applied block must have height 0")
        coinbase = block.transactions[0]
        if not coinbase.is_coinbase:
            raise InconsistentStateError("block does not start with a coinbase")
        root = self._apply_core(list(block.transactions[1:]), height)
        self.pending = coins_of(coinbase)
        self.height = height
        return root, self.touched_log[height].indices

    def preview_root(self, txs: list[Transaction], height: int) -> bytes:
        """The root a block with these non-coinbase txs would commit,
        without touching this store."""
        return self.clone()._apply_core(txs, height)

    def _apply_core(self, txs: list[Transaction], height: int) -> bytes:
        changed: set[int] = set()
        for coin in self.pending:
            changed.add(self._insert(coin))
        self.pending = []
        for tx in txs:
            for inp in tx.inputs:
                changed.add(self._remove(inp.prevout))
            for coin in coins_of(tx):
                changed.add(self._insert(coin))

        k_before = self.k
        rebalanced = False
        while self.total_shard_bytes() > self.size_cap * (1 << self.k):
            avg_before = self.average_shard_bytes()
            self._split()
            self.rebalance_log.append(RebalanceStep(
                height=height, k_from=self.k - 1, k_to=self.k,
                avg_before=avg_before, avg_after=self.average_shard_bytes(),
            ))
            rebalanced = True
        if rebalanced:
            self.policy_log.append((height, self.k))
            changed = set(range(1 << self.k))

        for idx in sorted(changed):
            encoded = encode_shard_coins(self.shards[idx])
            self.versions.setdefault((self.k, idx), []).append((height, encoded))
            self._leaf_cache[idx] = shard_leaf_hash(encoded)
        root = build_root([self._leaf_cache[i] for i in range(1 << self.k)])
        self.current_root = root
        self.root_log[height] = root
        self.touched_log[height] = TouchedRecord(
            indices=frozenset(range(1 << k_before)) if rebalanced else frozenset(changed),
            k=k_before,
            rebalanced=rebalanced,
        )
        return root

    def _insert(self, coin: Coin) -> int:
        idx = shard_key(coin.outpoint.txid, self.k)
        shard = self.shards[idx]
        i = bisect.bisect_left(shard, coin.outpoint, key=lambda c: c.outpoint)
        if i < len(shard) and shard[i].outpoint == coin.outpoint:
            raise InconsistentStateError(f"duplicate coin {coin.outpoint}")
        shard.insert(i, coin)
        return idx

    def _remove(self, outpoint: OutPoint) -> int:
        idx = shard_key(outpoint.txid, self.k)
        shard = self.shards[idx]
        i = bisect.bisect_left(shard, outpoint, key=lambda c: c.outpoint)
        if i >= len(shard) or shard[i].outpoint != outpoint:
            raise InconsistentStateError(f"spent coin {outpoint} not in store")
        del shard[i]
        return idx

    def _split(self) -> None:
        new_k = self.k + 1
        if new_k > 32:
            raise InconsistentStateError("shard key space exhausted")
        new_shards: dict[int, list[Coin]] = {i: [] for i in range(1 << new_k)}
        for coins in self.shards.values():
            for coin in coins:
                new_shards[shard_key(coin.outpoint.txid, new_k)].append(coin)
        self.k = new_k
        self.shards = new_shards  # per-shard order survives: the split preserves it
        self._refresh_all_leaves()

    def _refresh_all_leaves(self) -> None:
        self._leaf_cache = {
            i: shard_leaf_hash(encode_shard_coins(self.shards[i]))
            for i in range(1 << self.k)
        }

    # -- history ----------------------------------------------------------

    def state_before(self, height: int, indices: set[int]) -> tuple[dict[int, Shard], PartialMerkleTree]:
        """Shards and proof for the state the given block was applied to.

        The returned partial tree recomputes the root committed at
        ``height - 1`` and includes exactly ``indices``.
        """
        if self.height is None or not 1 <= height <= self.height + 1:
            raise HistoryUnavailableError(f"no history for height {height}")
        kb = self.k_at(height - 1)
        if not all(0 <= i < (1 << kb) for i in indices):
            raise ValueError("shard index out of range for the tree at that height")
        encodings = [self._version_at(kb, i, height - 1) for i in range(1 << kb)]
        leaves = [shard_leaf_hash(enc) for enc in encodings]
        partial = extract_partial(leaves, set(indices))
        shards = {i: decode_shard(encodings[i], i) for i in indices}
        return shards, partial

    def _version_at(self, k: int, index: int, height: int) -> bytes:
        for h, encoded in reversed(self.versions.get((k, index), [])):
            if h <= height:
                return encoded
        return EMPTY_SHARD_BYTES

    # -- branch switching ---------------------------------------------------

    def clone(self) -> "VersionedShardStore":
        other = VersionedShardStore(initial_k=self.initial_k, size_cap=self.size_cap)
        other.k = self.k
        other.shards = {i: list(coins) for i, coins in self.shards.items()}
        other.pending = list(self.pending)
        other.height = self.height
        other.current_root = self.current_root
        other.versions = {key: list(entries) for key, entries in self.versions.items()}
        other.root_log = dict(self.root_log)
        other.touched_log = dict(self.touched_log)
        other.policy_log = list(self.policy_log)
        other.rebalance_log = list(self.rebalance_log)
        other._leaf_cache = dict(self._leaf_cache)
        return other

    def rewind_to(self, height: int, block) -> None:
        """Drop all state above ``height``; ``block`` is the block at that
        height (its reward coins become pending again)."""
        if self.height is None or height > self.height or height not in self.root_log:
            raise HistoryUnavailableError(f"cannot rewind to height {height}")
        for key in list(self.versions):
            entries = [(h, enc) for h, enc in self.versions[key] if h <= height]
            if entries:
                self.versions[key] = entries
            else:
                del self.versions[key]
        self.root_log = {h: r for h, r in self.root_log.items() if h <= height}
        self.touched_log = {h: t for h, t in self.touched_log.items() if h <= height}
        self.policy_log = [(h, k) for h, k in self.policy_log if h <= height]
        self.rebalance_log = [s for s in self.rebalance_log if s.height <= height]
        self.k = self.k_at(height)
        self.shards = {}
        for i in range(1 << self.k):
            encoded = self._version_at(self.k, i, height)
            self.shards[i] = list(decode_shard(encoded, i).coins)
        self.pending = coins_of(block.transactions[0])
        self.current_root = self.root_log[height]
        self.height = height
        self._refresh_all_leaves()
