"""Shared helpers for building small real chains in tests."""

from __future__ import annotations

from dietchain.chain import (
    ChainParams,
    KIND_PAYMENT,
    Transaction,
    TxInput,
    TxOutput,
    sighash,
)
from dietchain.crypto import KeyPair, hash256
from dietchain.full_node import FullNode
from dietchain.miner import make_genesis, mine_on
from dietchain.utxo import Coin

FAST = ChainParams(target_bits=5, subsidy=50, size_cap=1024, initial_k=2)


def key_of(name: str) -> KeyPair:
    return KeyPair.from_seed(hash256(b"test-key:" + name.encode()))


def mined_node(params: ChainParams, miner: KeyPair, n_blocks: int,
               seed: int = 0) -> FullNode:
    node = FullNode(params)
    result = node.connect_block(make_genesis(params, miner.public_key, seed=seed))
    assert result.accepted
    for i in range(1, n_blocks):
        mine_on(node, miner.public_key, seed=seed + i)
    return node


def coins_owned(node: FullNode, owner: KeyPair) -> list[Coin]:
    mine = [c for c in node.utxo.all_coins() if c.challenge == owner.challenge]
    return sorted(mine, key=lambda c: (-c.value, c.outpoint))


def payment(node: FullNode, sender: KeyPair, pays: list[tuple[bytes, int]],
            fee: int = 1) -> Transaction:
    """Spend the sender's largest coins to cover the given (challenge, value)
    outputs plus the fee; change goes back to the sender."""
    needed = sum(v for _, v in pays) + fee
    picked: list[Coin] = []
    for coin in coins_owned(node, sender):
        picked.append(coin)
        if sum(c.value for c in picked) >= needed:
            break
    total = sum(c.value for c in picked)
    assert total >= needed, "test wallet out of funds"
    outputs = [TxOutput(value=v, kind=KIND_PAYMENT, payload=ch) for ch, v in pays]
    if total > needed:
        outputs.append(TxOutput(value=total - needed, kind=KIND_PAYMENT,
                                payload=sender.challenge))
    tx = Transaction(
        version=0,
        inputs=tuple(TxInput(prevout=c.outpoint, public_key=sender.public_key,
                             signature=b"\x00" * 64) for c in picked),
        outputs=tuple(outputs),
    )
    signature = sender.sign(sighash(tx))
    return tx._replace(inputs=tuple(i._replace(signature=signature)
                                    for i in tx.inputs))
