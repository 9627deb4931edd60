"""Core chain value types and their canonical wire encodings.

All integers are little-endian and fixed-width; every list is preceded
by a 16-bit element count. Nothing here touches state: these are plain
values plus the hashing rules derived from their encodings.

Wire layout summary::

    OutPoint     txid(32) index(u32)                          36 bytes
    TxInput      outpoint(36) public_key(33) signature(64)   133 bytes
    TxOutput     value(u64) kind(u8) payload(32)              41 bytes
    Transaction  version(u32) inputs(u16+...) outputs(u16+...)
    BlockHeader  prev_hash(32) tx_mroot(32) target_bits(u8)
                 nonce(u64) height(u32)                       77 bytes
    Block        header(77) transactions(u16+...)

A transaction's id is ``hash256`` of its encoding; its signing digest is
``hash256`` of the encoding with every input's public key and signature
zeroed, so signatures cover the spends and amounts but not each other.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

from .crypto import PUBLIC_KEY_SIZE, SIGNATURE_SIZE, hash256
from .errors import DecodeError

ZERO32 = b"\x00" * 32

# The marker outpoint carried by a coinbase's single input.
COINBASE_TXID = ZERO32
COINBASE_INDEX = 0xFFFFFFFF

KIND_PAYMENT = 0x00
KIND_COMMITMENT = 0x01

HEADER_SIZE = 77


@dataclass(frozen=True)
class ChainParams:
    """Consensus constants shared by every node in a deployment."""

    target_bits: int = 8
    subsidy: int = 50
    size_cap: int = 1024
    initial_k: int = 0


class OutPoint(NamedTuple):
    txid: bytes
    index: int

    @property
    def is_coinbase_marker(self) -> bool:
        return self.txid == COINBASE_TXID and self.index == COINBASE_INDEX


class TxInput(NamedTuple):
    prevout: OutPoint
    public_key: bytes  # 33 bytes
    signature: bytes   # 64 bytes


class TxOutput(NamedTuple):
    value: int
    kind: int          # KIND_PAYMENT or KIND_COMMITMENT
    payload: bytes     # challenge (payment) or committed root (commitment)


class Transaction(NamedTuple):
    version: int
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].prevout.is_coinbase_marker


class BlockHeader(NamedTuple):
    prev_hash: bytes
    tx_mroot: bytes
    target_bits: int
    nonce: int
    height: int


class Block(NamedTuple):
    header: BlockHeader
    transactions: tuple[Transaction, ...]


class Reader:
    """Cursor over wire bytes; raises DecodeError with the failing offset."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DecodeError("input truncated", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> None:
        if self.offset != len(self.data):
            raise DecodeError("trailing bytes after value", self.offset)


def _check_width(name: str, value: bytes, width: int) -> bytes:
    if len(value) != width:
        raise ValueError(f"{name} must be {width} bytes, got {len(value)}")
    return value


def encode_outpoint(o: OutPoint) -> bytes:
    return _check_width("txid", o.txid, 32) + struct.pack("<I", o.index)


def encode_input(i: TxInput) -> bytes:
    return (
        encode_outpoint(i.prevout)
        + _check_width("public_key", i.public_key, PUBLIC_KEY_SIZE)
        + _check_width("signature", i.signature, SIGNATURE_SIZE)
    )


def encode_output(o: TxOutput) -> bytes:
    return struct.pack("<QB", o.value, o.kind) + _check_width("payload", o.payload, 32)


def encode_transaction(tx: Transaction) -> bytes:
    parts = [struct.pack("<IH", tx.version, len(tx.inputs))]
    parts.extend(encode_input(i) for i in tx.inputs)
    parts.append(struct.pack("<H", len(tx.outputs)))
    parts.extend(encode_output(o) for o in tx.outputs)
    return b"".join(parts)


def encode_header(h: BlockHeader) -> bytes:
    return (
        _check_width("prev_hash", h.prev_hash, 32)
        + _check_width("tx_mroot", h.tx_mroot, 32)
        + struct.pack("<BQI", h.target_bits, h.nonce, h.height)
    )


def encode_block(b: Block) -> bytes:
    parts = [encode_header(b.header), struct.pack("<H", len(b.transactions))]
    parts.extend(encode_transaction(tx) for tx in b.transactions)
    return b"".join(parts)


def _read_outpoint(r: Reader) -> OutPoint:
    return OutPoint(txid=r.take(32), index=r.u32())


def _read_input(r: Reader) -> TxInput:
    return TxInput(
        prevout=_read_outpoint(r),
        public_key=r.take(PUBLIC_KEY_SIZE),
        signature=r.take(SIGNATURE_SIZE),
    )


def _read_output(r: Reader) -> TxOutput:
    value = r.u64()
    kind = r.u8()
    if kind not in (KIND_PAYMENT, KIND_COMMITMENT):
        raise DecodeError(f"unknown output kind 0x{kind:02x}", r.offset - 1)
    return TxOutput(value=value, kind=kind, payload=r.take(32))


def read_transaction(r: Reader) -> Transaction:
    version = r.u32()
    inputs = tuple(_read_input(r) for _ in range(r.u16()))
    outputs = tuple(_read_output(r) for _ in range(r.u16()))
    return Transaction(version=version, inputs=inputs, outputs=outputs)


def read_header(r: Reader) -> BlockHeader:
    prev_hash = r.take(32)
    tx_mroot = r.take(32)
    target_bits = r.u8()
    nonce = r.u64()
    height = r.u32()
    return BlockHeader(prev_hash, tx_mroot, target_bits, nonce, height)


def read_block(r: Reader) -> Block:
    header = read_header(r)
    txs = tuple(read_transaction(r) for _ in range(r.u16()))
    return Block(header=header, transactions=txs)


def decode_transaction(data: bytes) -> Transaction:
    r = Reader(data)
    tx = read_transaction(r)
    r.done()
    return tx


def decode_header(data: bytes) -> BlockHeader:
    r = Reader(data)
    h = read_header(r)
    r.done()
    return h


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    b = read_block(r)
    r.done()
    return b


def txid(tx: Transaction) -> bytes:
    return hash256(encode_transaction(tx))


def sighash(tx: Transaction) -> bytes:
    """Signing digest: the encoding with all input proofs blanked."""
    blanked = tx._replace(inputs=tuple(
        i._replace(public_key=b"\x00" * PUBLIC_KEY_SIZE, signature=b"\x00" * SIGNATURE_SIZE)
        for i in tx.inputs
    ))
    return hash256(encode_transaction(blanked))


def header_hash(h: BlockHeader) -> bytes:
    return hash256(encode_header(h))


def block_hash(b: Block) -> bytes:
    return header_hash(b.header)


def leading_zero_bits(digest: bytes) -> int:
    count = 0
    for byte in digest:
        if byte == 0:
            count += 8
        else:
            count += 8 - byte.bit_length()
            break
    return count


def pow_ok(h: BlockHeader) -> bool:
    """Proof-of-work check: the header hash needs target_bits leading zero bits."""
    return leading_zero_bits(header_hash(h)) >= h.target_bits


def block_work(h: BlockHeader) -> int:
    """Work contributed to fork choice; derived from the same field the
    proof-of-work check uses, so overstating it only makes mining harder."""
    return 1 << h.target_bits


def make_coinbase_input() -> TxInput:
    return TxInput(
        prevout=OutPoint(COINBASE_TXID, COINBASE_INDEX),
        public_key=b"\x00" * PUBLIC_KEY_SIZE,
        signature=b"\x00" * SIGNATURE_SIZE,
    )
