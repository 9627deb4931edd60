"""Full node: complete validation, canonical state, and query services.

A full node validates every block in full, keeps the sharded UTXO store
for the active branch only, and answers the four queries light clients
need: filtered header/tx sync, committed roots, whole blocks, and the
shards a block touched together with their membership proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .chain import (
    Block,
    BlockHeader,
    ChainParams,
    KIND_COMMITMENT,
    KIND_PAYMENT,
    OutPoint,
    Transaction,
    header_hash,
    txid,
)
from .crypto import BloomFilter, hash256, verify
from .errors import ValidationError
from .headers import HeaderIndex
from .merkle import PartialMerkleTree, build_root, extract_partial
from .utxo import Coin, Shard, VersionedShardStore, coins_of


@dataclass(frozen=True)
class ConnectResult:
    status: str  # 'accepted' | 'rejected' | 'branch' | 'duplicate'
    reason: str | None = None
    height: int | None = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


@dataclass(frozen=True)
class MerkleBlockMatch:
    header: BlockHeader
    tx_tree: PartialMerkleTree
    transactions: tuple[Transaction, ...]


@dataclass(frozen=True)
class MerkleBlocksResponse:
    headers: tuple[BlockHeader, ...]
    matches: tuple[MerkleBlockMatch, ...]


@dataclass(frozen=True)
class UtxosResponse:
    shards: dict[int, Shard]
    tree: PartialMerkleTree


def tx_merkle_root(txs) -> bytes:
    return build_root([txid(tx) for tx in txs])


class _OverlayView:
    """Coin view layering in-flight spends and creations over the store."""

    def __init__(self, store: VersionedShardStore):
        self.store = store
        self.spent: set[OutPoint] = set()
        self.created: dict[OutPoint, Coin] = {}

    def get_coin(self, outpoint: OutPoint) -> Coin | None:
        if outpoint in self.spent:
            return None
        if outpoint in self.created:
            return self.created[outpoint]
        return self.store.get_coin(outpoint)

    def absorb(self, tx: Transaction) -> None:
        for inp in tx.inputs:
            self.spent.add(inp.prevout)
        for coin in coins_of(tx):
            self.created[coin.outpoint] = coin


def validate_transaction(tx: Transaction, view) -> int:
    """Check ownership, value balance, and double spends; returns the fee.

    ``view`` needs a ``get_coin(outpoint)`` method. Raises
    ValidationError with code 'missing-input', 'ownership-failure', or
    'value-creation'.
    """
    from .chain import sighash as tx_sighash

    if tx.is_coinbase or not tx.inputs:
        raise ValidationError("bad-structure", "expected a spending transaction")
    digest = tx_sighash(tx)
    seen: set[OutPoint] = set()
    total_in = 0
    for inp in tx.inputs:
        if inp.prevout in seen:
            raise ValidationError("missing-input", f"{inp.prevout} spent twice in one tx")
        seen.add(inp.prevout)
        coin = view.get_coin(inp.prevout)
        if coin is None:
            raise ValidationError("missing-input", f"{inp.prevout} not in the UTXO set")
        if hash256(inp.public_key) != coin.challenge:
            raise ValidationError("ownership-failure", "key does not match the challenge")
        if not verify(inp.public_key, digest, inp.signature):
            raise ValidationError("ownership-failure", "bad signature")
        total_in += coin.value
    total_out = sum(out.value for out in tx.outputs)
    if total_in < total_out:
        raise ValidationError("value-creation", f"outputs {total_out} exceed inputs {total_in}")
    return total_in - total_out


def commitment_of(block: Block) -> bytes:
    """The committed UTXO root a block carries in its coinbase."""
    for out in block.transactions[0].outputs:
        if out.kind == KIND_COMMITMENT:
            return out.payload
    raise ValidationError("utxo-root-mismatch", "coinbase carries no commitment",
                          height=block.header.height)


def check_block_structure(block: Block) -> None:
    if not block.transactions:
        raise ValidationError("bad-structure", "block has no transactions",
                              height=block.header.height)
    if not block.transactions[0].is_coinbase:
        raise ValidationError("bad-structure", "first transaction is not a coinbase",
                              height=block.header.height)
    for tx in block.transactions[1:]:
        if any(i.prevout.is_coinbase_marker for i in tx.inputs):
            raise ValidationError("bad-structure", "coinbase marker outside the coinbase",
                                  height=block.header.height)
    if tx_merkle_root(block.transactions) != block.header.tx_mroot:
        raise ValidationError("tx-mroot-mismatch", height=block.header.height)


@dataclass
class FullNode:
    params: ChainParams
    check_commitments: bool = True  # off: interop with chains that do not commit
    headers: HeaderIndex = field(init=False, default_factory=HeaderIndex)
    blocks: dict[bytes, Block] = field(init=False, default_factory=dict)
    utxo: VersionedShardStore = field(init=False)
    mempool: list[Transaction] = field(init=False, default_factory=list)

    def __post_init__(self):
        self.utxo = VersionedShardStore(
            initial_k=self.params.initial_k, size_cap=self.params.size_cap)

    @property
    def tip_hash(self) -> bytes:
        if self.headers.tip is None:
            raise ValidationError("unknown-block", "node has no chain yet")
        return self.headers.tip

    @property
    def tip_height(self) -> int:
        return self.headers.tip_height

    def block_at(self, height: int) -> Block:
        return self.blocks[self.headers.active_hash_at(height)]

    # -- block intake -------------------------------------------------------

    def connect_block(self, block: Block) -> ConnectResult:
        hh = header_hash(block.header)
        height = block.header.height
        if hh in self.blocks:
            return ConnectResult("duplicate", height=height)
        try:
            check_block_structure(block)
        except ValidationError as exc:
            return ConnectResult("rejected", exc.code, height)

        extends_tip = (
            self.headers.tip is None and block.header.height == 0
        ) or (self.headers.tip is not None and block.header.prev_hash == self.headers.tip)

        if extends_tip:
            try:
                staged = self._validate_and_stage(block)
            except ValidationError as exc:
                return ConnectResult("rejected", exc.code, height)
            self.headers.add(block.header)
            self.blocks[hh] = block
            self.utxo = staged
            self._drop_mined_from_mempool(block)
            return ConnectResult("accepted", height=height)

        # Off-tip: index header and block, then reorganize if the new
        # branch is strictly heavier than the active one.
        old_tip = self.headers.tip
        try:
            self.headers.add(block.header)
        except ValidationError as exc:
            return ConnectResult("rejected", exc.code, height)
        self.blocks[hh] = block
        if self.headers.tip == old_tip:
            return ConnectResult("branch", height=height)
        return self._reorganize(old_tip, block)

    def _validate_and_stage(self, block: Block) -> VersionedShardStore:
        """Fully validate a tip-extending block; returns the store to adopt."""
        self._validate_header_linkage(block.header)
        view = _OverlayView(self.utxo)
        fees = 0
        for tx in block.transactions[1:]:
            fees += validate_transaction(tx, view)
            view.absorb(tx)
        coinbase = block.transactions[0]
        reward = sum(out.value for out in coinbase.outputs if out.kind == KIND_PAYMENT)
        if reward > self.params.subsidy + fees:
            raise ValidationError("bad-coinbase-value",
                                  f"reward {reward} exceeds subsidy plus fees",
                                  height=block.header.height)
        staged = self.utxo.clone()
        root, _ = staged.apply_block(block, block.header.height)
        if self.check_commitments and root != commitment_of(block):
            raise ValidationError("utxo-root-mismatch", height=block.header.height)
        return staged

    def _validate_header_linkage(self, header: BlockHeader) -> None:
        # Raises the same codes HeaderIndex.add would, without mutating it.
        scratch = HeaderIndex()
        scratch.headers = dict(self.headers.headers)
        scratch.work = dict(self.headers.work)
        scratch.tip = self.headers.tip
        scratch.add(header)

    def _reorganize(self, old_tip: bytes, new_block: Block) -> ConnectResult:
        new_tip = self.headers.tip
        fork = self.headers.fork_height(old_tip, new_tip)
        fork_block = self.blocks[self.headers.active_hash_at(fork)]
        rewound = self.utxo
        self.utxo = self.utxo.clone()
        self.utxo.rewind_to(fork, fork_block)
        for hh in self.headers.active_chain()[fork + 1:]:
            block = self.blocks[hh]
            try:
                self.utxo = self._validate_and_stage(block)
            except ValidationError as exc:
                # The heavier branch is invalid: forget it and restore.
                bad_height = block.header.height
                self._discard_branch(new_tip, fork)
                self.headers.tip = old_tip
                self.headers._active = self.headers._branch_of(old_tip)
                self.utxo = rewound
                return ConnectResult("rejected", exc.code, bad_height)
        return ConnectResult("accepted", height=new_block.header.height)

    def _discard_branch(self, tip: bytes, fork: int) -> None:
        cursor = tip
        while self.headers.headers[cursor].height > fork:
            parent = self.headers.headers[cursor].prev_hash
            del self.headers.headers[cursor]
            del self.headers.work[cursor]
            self.blocks.pop(cursor, None)
            cursor = parent

    def _drop_mined_from_mempool(self, block: Block) -> None:
        mined = {txid(tx) for tx in block.transactions}
        spent = {i.prevout for tx in block.transactions[1:] for i in tx.inputs}
        self.mempool = [
            tx for tx in self.mempool
            if txid(tx) not in mined and not any(i.prevout in spent for i in tx.inputs)
        ]

    # -- mempool ------------------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> None:
        """Validate against the current view plus the pool, then queue."""
        view = _OverlayView(self.utxo)
        for pooled in self.mempool:
            view.absorb(pooled)
        validate_transaction(tx, view)
        self.mempool.append(tx)

    def build_template(self) -> tuple[list[Transaction], int]:
        """Mempool txs that fit together on the current tip, plus total fees."""
        view = _OverlayView(self.utxo)
        selected = []
        fees = 0
        for tx in self.mempool:
            try:
                fees += validate_transaction(tx, view)
            except ValidationError:
                continue
            view.absorb(tx)
            selected.append(tx)
        return selected, fees

    # -- query services ------------------------------------------------------

    def serve_query_merkle_blocks(self, since: bytes, bloom: BloomFilter) -> MerkleBlocksResponse:
        chain = self.headers.active_chain()
        start = 0
        if self.headers.on_active_chain(since):
            start = self.headers.headers[since].height + 1
        headers = []
        matches = []
        for hh in chain[start:]:
            block = self.blocks[hh]
            headers.append(block.header)
            matched = [
                i for i, tx in enumerate(block.transactions)
                if _tx_matches(tx, bloom)
            ]
            if matched:
                tx_ids = [txid(tx) for tx in block.transactions]
                matches.append(MerkleBlockMatch(
                    header=block.header,
                    tx_tree=extract_partial(tx_ids, set(matched)),
                    transactions=tuple(block.transactions[i] for i in matched),
                ))
        return MerkleBlocksResponse(headers=tuple(headers), matches=tuple(matches))

    def serve_query_utxo_mroot(self, block_hash: bytes) -> bytes:
        return commitment_of(self._active_block(block_hash))

    def serve_query_block(self, block_hash: bytes) -> Block:
        return self._active_block(block_hash)

    def serve_query_utxos(self, block_hash: bytes) -> UtxosResponse:
        block = self._active_block(block_hash)
        height = block.header.height
        record = self.utxo.touched_log.get(height)
        if record is None or height == 0:
            raise ValidationError("history-unavailable",
                                  "no pre-state exists for that block", height=height)
        if record.rebalanced:
            indices = set(range(1 << record.k))
        else:
            indices = set(record.indices)
        shards, tree = self.utxo.state_before(height, indices)
        return UtxosResponse(shards=shards, tree=tree)

    def _active_block(self, block_hash: bytes) -> Block:
        if not self.headers.on_active_chain(block_hash) or block_hash not in self.blocks:
            raise ValidationError("unknown-block")
        return self.blocks[block_hash]


def _tx_matches(tx: Transaction, bloom: BloomFilter) -> bool:
    for inp in tx.inputs:
        if not inp.prevout.is_coinbase_marker and bloom.may_contain(inp.public_key):
            return True
    return any(
        out.kind == KIND_PAYMENT and bloom.may_contain(out.payload)
        for out in tx.outputs
    )
