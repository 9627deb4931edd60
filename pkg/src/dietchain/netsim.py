"""Deterministic message bus with adversarial interception.

Every byte between nodes crosses the bus: queries are synchronous
request/response pairs, block announcements are queued and delivered one
at a time in an order fixed entirely by the bus seed. Each message is
traced with a sequence number, type, endpoints, and size, so two runs
with the same seed produce byte-identical traces.

An adversary owns one victim. It can divert the victim's queries to a
shadow node serving a counterfeit branch, or rewrite individual
responses in flight. Forged blocks are prepared up front by a builder
that charges each proof-of-work solution against a mining budget;
nothing the adversary serves is exempt from the proof-of-work check.

Message types::

    0x01/0x02  query_merkle_blocks   since(32) bloom | headers, matches
    0x03/0x04  query_utxo_mroot      block hash      | committed root
    0x05/0x06  query_block           block hash      | whole block
    0x07/0x08  query_utxos           block hash      | shards, shard proof
    0x10       block_announce        whole block     (no response)
"""

from __future__ import annotations

import random
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .chain import (
    Block,
    ChainParams,
    Reader,
    Transaction,
    encode_block,
    encode_header,
    encode_transaction,
    read_block,
    read_header,
    read_transaction,
)
from .crypto import BloomFilter
from .errors import ScenarioError, ValidationError
from .full_node import (
    FullNode,
    MerkleBlockMatch,
    MerkleBlocksResponse,
    UtxosResponse,
    tx_merkle_root,
)
from .merkle import encode_partial, read_partial
from .miner import BlockTemplate, solve_pow, assemble_block, make_coinbase
from .utxo import Coin, Shard, decode_shard

MSG_QUERY_MERKLE_BLOCKS = 0x01
MSG_MERKLE_BLOCKS = 0x02
MSG_QUERY_UTXO_MROOT = 0x03
MSG_UTXO_MROOT = 0x04
MSG_QUERY_BLOCK = 0x05
MSG_BLOCK = 0x06
MSG_QUERY_UTXOS = 0x07
MSG_UTXOS = 0x08
MSG_BLOCK_ANNOUNCE = 0x10
MSG_WAKE = 0x00  # bus-internal: tells a client to run its sync loop

QUERY_NAMES = {
    MSG_QUERY_MERKLE_BLOCKS: "query_merkle_blocks",
    MSG_QUERY_UTXO_MROOT: "query_utxo_mroot",
    MSG_QUERY_BLOCK: "query_block",
    MSG_QUERY_UTXOS: "query_utxos",
}


# -- payload codecs ----------------------------------------------------------

def encode_merkle_blocks_request(since: bytes, bloom: BloomFilter) -> bytes:
    return since + bloom.encode()


def decode_merkle_blocks_request(payload: bytes) -> tuple[bytes, BloomFilter]:
    return payload[:32], BloomFilter.decode(payload[32:])


def encode_merkle_blocks_response(resp: MerkleBlocksResponse) -> bytes:
    parts = [struct.pack("<H", len(resp.headers))]
    parts.extend(encode_header(h) for h in resp.headers)
    parts.append(struct.pack("<H", len(resp.matches)))
    for match in resp.matches:
        parts.append(encode_header(match.header))
        parts.append(encode_partial(match.tx_tree))
        parts.append(struct.pack("<H", len(match.transactions)))
        parts.extend(encode_transaction(tx) for tx in match.transactions)
    return b"".join(parts)


def decode_merkle_blocks_response(payload: bytes) -> MerkleBlocksResponse:
    r = Reader(payload)
    headers = tuple(read_header(r) for _ in range(r.u16()))
    matches = []
    for _ in range(r.u16()):
        header = read_header(r)
        tree = read_partial(r)
        txs = tuple(read_transaction(r) for _ in range(r.u16()))
        matches.append(MerkleBlockMatch(header=header, tx_tree=tree, transactions=txs))
    r.done()
    return MerkleBlocksResponse(headers=headers, matches=tuple(matches))


def encode_utxos_response(resp: UtxosResponse) -> bytes:
    parts = [struct.pack("<H", len(resp.shards))]
    for idx in sorted(resp.shards):
        parts.append(struct.pack("<I", idx))
        parts.append(resp.shards[idx].encode())
    parts.append(encode_partial(resp.tree))
    return b"".join(parts)


def decode_utxos_response(payload: bytes) -> UtxosResponse:
    r = Reader(payload)
    shards: dict[int, Shard] = {}
    for _ in range(r.u16()):
        idx = r.u32()
        count_at = r.offset
        count = r.u16()
        r.offset = count_at
        raw = r.take(2 + 76 * count)
        shards[idx] = decode_shard(raw, idx)
    tree = read_partial(r)
    r.done()
    return UtxosResponse(shards=shards, tree=tree)


# -- the bus -----------------------------------------------------------------

@dataclass
class Adversary:
    """Interception rules applied to one victim's traffic."""
    victim: str
    shadow: "FullNodeService | None" = None
    hijack: set[int] = field(default_factory=set)            # request types
    transforms: dict[int, Callable[[bytes], bytes]] = field(default_factory=dict)


class Bus:
    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)
        self.services: dict[str, object] = {}
        self.queues: dict[tuple[str, str], deque] = {}
        self.trace: list[dict] = []
        self.adversaries: list[Adversary] = []
        self._seq = 0

    def register(self, node_id: str, service) -> None:
        if node_id in self.services:
            raise ScenarioError(f"duplicate node id {node_id!r}")
        self.services[node_id] = service
        service.node_id = node_id

    def attach_adversary(self, adversary: Adversary) -> None:
        self.adversaries.append(adversary)

    def _record(self, kind: str, **fields) -> dict:
        event = {"seq": self._seq, "kind": kind, **fields}
        self._seq += 1
        self.trace.append(event)
        return event

    def note(self, kind: str, **fields) -> None:
        """Trace a node-level event (verdicts, connects) between messages."""
        self._record(kind, **fields)

    def request(self, src: str, dst: str, msg_type: int, payload: bytes) -> bytes:
        self._record("message", type=msg_type, src=src, dst=dst, bytes=len(payload))
        responder = self.services[dst]
        hijacked = False
        for adv in self.adversaries:
            if adv.victim == src and msg_type in adv.hijack and adv.shadow is not None:
                responder = adv.shadow
                hijacked = True
        response = responder.handle_query(msg_type, payload)
        resp_type = msg_type + 1
        for adv in self.adversaries:
            if adv.victim == src and resp_type in adv.transforms:
                response = adv.transforms[resp_type](response)
                hijacked = True
        self._record("message", type=resp_type, src=dst, dst=src,
                     bytes=len(response), intercepted=hijacked)
        return response

    def post(self, src: str, dst: str, msg_type: int, payload: bytes) -> None:
        self.queues.setdefault((src, dst), deque()).append((msg_type, payload))

    def run_until_idle(self) -> None:
        while True:
            links = sorted(link for link, q in self.queues.items() if q)
            if not links:
                return
            link = self.rng.choice(links)
            msg_type, payload = self.queues[link].popleft()
            src, dst = link
            self._record("message", type=msg_type, src=src, dst=dst, bytes=len(payload))
            self.services[dst].handle_message(self, src, msg_type, payload)


# -- node adapters -------------------------------------------------------------

class FullNodeService:
    """Wire adapter: decodes queries for a FullNode and encodes answers."""

    def __init__(self, node: FullNode):
        self.node = node
        self.node_id = "?"

    def handle_query(self, msg_type: int, payload: bytes) -> bytes:
        if msg_type == MSG_QUERY_MERKLE_BLOCKS:
            since, bloom = decode_merkle_blocks_request(payload)
            return encode_merkle_blocks_response(
                self.node.serve_query_merkle_blocks(since, bloom))
        if msg_type == MSG_QUERY_UTXO_MROOT:
            return self.node.serve_query_utxo_mroot(payload)
        if msg_type == MSG_QUERY_BLOCK:
            return encode_block(self.node.serve_query_block(payload))
        if msg_type == MSG_QUERY_UTXOS:
            return encode_utxos_response(self.node.serve_query_utxos(payload))
        raise ScenarioError(f"unhandled query type 0x{msg_type:02x}")

    def handle_message(self, bus: Bus, src: str, msg_type: int, payload: bytes) -> None:
        if msg_type != MSG_BLOCK_ANNOUNCE:
            raise ScenarioError(f"unhandled message type 0x{msg_type:02x}")
        block = read_block(Reader(payload))
        result = self.node.connect_block(block)
        bus.note("connect", node=self.node_id, height=block.header.height,
                 status=result.status, reason=result.reason)


class BusTransport:
    """Remote-query transport for light clients; returns (value, wire bytes)."""

    def __init__(self, bus: Bus, src: str, peer: str):
        self.bus = bus
        self.src = src
        self.peer = peer

    def query_merkle_blocks(self, since: bytes, bloom: BloomFilter):
        payload = self.bus.request(self.src, self.peer, MSG_QUERY_MERKLE_BLOCKS,
                                   encode_merkle_blocks_request(since, bloom))
        return decode_merkle_blocks_response(payload), len(payload)

    def query_utxo_mroot(self, block_hash: bytes):
        payload = self.bus.request(self.src, self.peer, MSG_QUERY_UTXO_MROOT, block_hash)
        if len(payload) != 32:
            raise ValidationError("proof-mismatch", "committed root has the wrong width")
        return payload, len(payload)

    def query_block(self, block_hash: bytes):
        payload = self.bus.request(self.src, self.peer, MSG_QUERY_BLOCK, block_hash)
        r = Reader(payload)
        block = read_block(r)
        r.done()
        return block, len(payload)

    def query_utxos(self, block_hash: bytes):
        payload = self.bus.request(self.src, self.peer, MSG_QUERY_UTXOS, block_hash)
        return decode_utxos_response(payload), len(payload)


class DietNodeService:
    """Bus endpoint for a light client; a wake message runs one sync pass."""

    def __init__(self, diet_node):
        self.diet = diet_node
        self.node_id = "?"
        self.results = []

    def handle_message(self, bus: Bus, src: str, msg_type: int, payload: bytes) -> None:
        if msg_type != MSG_WAKE:
            raise ScenarioError(f"unhandled message type 0x{msg_type:02x}")
        result = self.diet.update_chain()
        self.results.append(result)
        for verdict in result.verdicts:
            bus.note("verdict", node=self.node_id, tx=verdict.tx_id.hex(),
                     height=verdict.height, status=verdict.status,
                     reason=verdict.reason, fail_height=verdict.fail_height,
                     first=verdict.first, last=verdict.last)


# -- forged chains --------------------------------------------------------------

class ForgedChainBuilder:
    """Builds the counterfeit branch an adversary serves.

    The builder replays an honest prefix into its own replica node, may
    slip extra coins into the replica's not-yet-committed set (the seam
    every forgery needs), and then mines counterfeit blocks with real
    proof-of-work, each solution charged against the mining budget.
    """

    def __init__(self, params: ChainParams, budget: int, seed: int = 0,
                 accept_bad_commitments: bool = False):
        self.params = params
        self.budget = budget
        self.seed = seed
        self.mined = 0
        self.node = FullNode(params, check_commitments=not accept_bad_commitments)

    def replay(self, blocks: list[Block]) -> None:
        for block in blocks:
            result = self.node.connect_block(block)
            if not result.accepted:
                raise ScenarioError(
                    f"replayed honest block failed: {result.reason}")

    def inject_coin(self, coin: Coin) -> None:
        """Plant a coin the next counterfeit commitment will cover."""
        self.node.utxo.pending.append(coin)

    def mine(self, txs: list[Transaction], reward_key: bytes,
             fake_commitment: bytes | None = None) -> Block:
        if self.mined + 1 > self.budget:
            raise ScenarioError("adversary mining budget exceeded")
        fees = 0
        for tx in txs:
            # Charge the declared fee; the replica re-validates on connect.
            total_in = sum(
                c.value for c in (self.node.utxo.get_coin(i.prevout) for i in tx.inputs)
                if c is not None)
            fees += max(0, total_in - sum(o.value for o in tx.outputs))
        template = BlockTemplate(
            parent_hash=self.node.tip_hash,
            height=self.node.tip_height + 1,
            target_bits=self.params.target_bits,
            transactions=tuple(txs),
            reward_key=reward_key,
            reward_value=self.params.subsidy + fees,
        )
        block = assemble_block(template, self.node.utxo)
        if fake_commitment is not None:
            coinbase = make_coinbase(template, fake_commitment)
            block_txs = (coinbase,) + template.transactions
            block = Block(
                header=block.header._replace(tx_mroot=tx_merkle_root(block_txs)),
                transactions=block_txs,
            )
        nonce = solve_pow(block.header, 1 << 20, seed=self.seed + self.mined)
        if nonce is None:
            raise ScenarioError("adversary failed to solve proof-of-work")
        self.mined += 1
        mined = Block(header=block.header._replace(nonce=nonce),
                      transactions=block.transactions)
        result = self.node.connect_block(mined)
        if not result.accepted:
            raise ScenarioError(f"replica rejected forged block: {result.reason}")
        return mined

    def service(self) -> FullNodeService:
        return FullNodeService(self.node)
