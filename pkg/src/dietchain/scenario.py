"""Scripted end-to-end runs: a JSON config describes nodes, a sequence of
actions (mining, payments, attacks), and the verdicts and chain facts the
run must end with.

Everything is derived from the config seed: keys, proof-of-work nonce
starts, message interleaving, forged commitments. Two runs of the same
config produce byte-identical traces and reports.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .chain import (
    ChainParams,
    Transaction,
    TxInput,
    TxOutput,
    KIND_PAYMENT,
    encode_block,
    sighash,
    txid,
)
from .crypto import KeyPair, hash256
from .diet_node import DietConfig, DietNode
from .errors import ScenarioError
from .full_node import FullNode, UtxosResponse
from .miner import make_genesis, mine_on
from .netsim import (
    MSG_BLOCK_ANNOUNCE,
    MSG_QUERY_BLOCK,
    MSG_QUERY_MERKLE_BLOCKS,
    MSG_QUERY_UTXO_MROOT,
    MSG_QUERY_UTXOS,
    MSG_UTXOS,
    MSG_WAKE,
    Adversary,
    Bus,
    BusTransport,
    DietNodeService,
    ForgedChainBuilder,
    FullNodeService,
    decode_utxos_response,
    encode_utxos_response,
)
from .utxo import Coin, OutPoint, Shard

ALL_QUERIES = frozenset({
    MSG_QUERY_MERKLE_BLOCKS, MSG_QUERY_UTXO_MROOT, MSG_QUERY_BLOCK, MSG_QUERY_UTXOS,
})

_NODE_ROLES = ("full", "spv", "diet")


def derive_key(seed: int, name: str) -> KeyPair:
    material = hash256(b"dietchain-key" + seed.to_bytes(8, "little") + name.encode())
    return KeyPair.from_seed(material)


@dataclass
class ScenarioState:
    config: dict
    params: ChainParams
    rng: random.Random
    bus: Bus
    keys: dict[str, KeyPair]
    full_nodes: dict[str, FullNode] = field(default_factory=dict)
    diet_services: dict[str, DietNodeService] = field(default_factory=dict)
    reference: str = ""                      # chain-of-record full node
    labeled: dict[str, tuple[Transaction, list[Coin]]] = field(default_factory=dict)

    def full(self, node_id: str) -> FullNode:
        if node_id not in self.full_nodes:
            raise ScenarioError(f"{node_id!r} is not a full node")
        return self.full_nodes[node_id]

    def key(self, name: str) -> KeyPair:
        if not isinstance(name, str) or name not in self.keys:
            raise ScenarioError(f"unknown key {name!r}")
        return self.keys[name]

    def key_by_public(self, public_key: bytes) -> KeyPair:
        for pair in self.keys.values():
            if pair.public_key == public_key:
                return pair
        raise ScenarioError("no scenario key matches that public key")


def load_config(source) -> dict:
    if isinstance(source, dict):
        cfg = source
    else:
        with open(source) as fh:
            cfg = json.load(fh)
    for req in ("name", "seed", "nodes", "script"):
        if req not in cfg:
            raise ScenarioError(f"config is missing {req!r}")
    cfg.setdefault("keys", [])
    cfg.setdefault("expect", [])
    return cfg


def _build(cfg: dict) -> ScenarioState:
    params = ChainParams(
        target_bits=cfg.get("target_bits", 8),
        subsidy=cfg.get("subsidy", 50),
        size_cap=cfg.get("size_cap", 1024),
        initial_k=cfg.get("initial_k", 0),
    )
    seed = cfg["seed"]
    state = ScenarioState(
        config=cfg,
        params=params,
        rng=random.Random(seed),
        bus=Bus(seed=seed),
        keys={name: derive_key(seed, name) for name in cfg["keys"]},
    )
    full_ids = [n["id"] for n in cfg["nodes"] if n.get("role", "full") == "full"]
    if not full_ids:
        raise ScenarioError("at least one full node is required")
    state.reference = full_ids[0]
    for spec in cfg["nodes"]:
        role = spec.get("role", "full")
        node_id = spec["id"]
        if role not in _NODE_ROLES:
            raise ScenarioError(f"unknown role {role!r} for node {node_id!r}")
        if role == "full":
            node = FullNode(params, check_commitments=not spec.get("legacy", False))
            state.full_nodes[node_id] = node
            state.bus.register(node_id, FullNodeService(node))
        else:
            key_names = spec.get("keys", [])
            if not key_names:
                raise ScenarioError(f"light node {node_id!r} watches no keys")
            config = DietConfig(
                keys=tuple(state.key(n).public_key for n in key_names),
                max_depth=spec.get("max_depth", 6),
                max_length=spec.get("max_length", 2),
                diet_enabled=role == "diet",
            )
            peer = spec.get("peer", state.reference)
            diet = DietNode(params, config, BusTransport(state.bus, node_id, peer))
            service = DietNodeService(diet)
            state.diet_services[node_id] = service
            state.bus.register(node_id, service)
    return state


# -- script actions ----------------------------------------------------------

def _announce(state: ScenarioState, miner_id: str, block) -> None:
    payload = encode_block(block)
    for node_id in state.full_nodes:
        if node_id != miner_id:
            state.bus.post(miner_id, node_id, MSG_BLOCK_ANNOUNCE, payload)
    state.bus.run_until_idle()


def _act_mine(state: ScenarioState, step: dict) -> None:
    node_id = step.get("node", state.reference)
    node = state.full(node_id)
    reward = state.key(step["reward"]).public_key
    for _ in range(step.get("count", 1)):
        pow_seed = state.rng.getrandbits(32)
        if node.headers.tip is None:
            block = make_genesis(state.params, reward, seed=pow_seed)
            result = node.connect_block(block)
            if not result.accepted:
                raise ScenarioError(f"genesis rejected: {result.reason}")
        else:
            block = mine_on(node, reward, seed=pow_seed)
        _announce(state, node_id, block)


def _act_pay(state: ScenarioState, step: dict) -> None:
    node = state.full(step.get("node", state.reference))
    sender = state.key(step["from"])
    names = step["to"] if isinstance(step["to"], list) else [step["to"]]
    receivers = [state.key(name) for name in names]
    amount = step["amount"]
    fee = step.get("fee", 1)
    n_out = step.get("outputs", len(receivers))
    if n_out < len(receivers):
        raise ScenarioError("fewer outputs than recipients")
    if amount < n_out:
        raise ScenarioError("amount too small to split across outputs")

    in_mempool = {i.prevout for tx in node.mempool for i in tx.inputs}
    owned = sorted(
        (c for c in node.utxo.all_coins()
         if c.challenge == sender.challenge and c.outpoint not in in_mempool),
        key=lambda c: (-c.value, c.outpoint),
    )
    picked: list[Coin] = []
    for coin in owned:
        picked.append(coin)
        if sum(c.value for c in picked) >= amount + fee:
            break
    total = sum(c.value for c in picked)
    if total < amount + fee:
        raise ScenarioError(
            f"insufficient funds: {step['from']} has {total}, needs {amount + fee}")

    part = amount // n_out
    amounts = [part] * n_out
    amounts[0] += amount - part * n_out
    outputs = [TxOutput(value=v, kind=KIND_PAYMENT,
                        payload=receivers[i % len(receivers)].challenge)
               for i, v in enumerate(amounts)]
    if total - amount - fee > 0:
        outputs.append(TxOutput(value=total - amount - fee, kind=KIND_PAYMENT,
                                payload=sender.challenge))
    tx = Transaction(
        version=0,
        inputs=tuple(
            TxInput(prevout=c.outpoint, public_key=sender.public_key,
                    signature=b"\x00" * 64)
            for c in picked),
        outputs=tuple(outputs),
    )
    signature = sender.sign(sighash(tx))
    tx = tx._replace(inputs=tuple(i._replace(signature=signature) for i in tx.inputs))
    node.submit_transaction(tx)
    if "label" in step:
        state.labeled[step["label"]] = (tx, picked)


def _act_update(state: ScenarioState, step: dict) -> None:
    for node_id in step["nodes"]:
        if node_id not in state.diet_services:
            raise ScenarioError(f"{node_id!r} is not a light node")
        state.bus.post("script", node_id, MSG_WAKE, b"")
    state.bus.run_until_idle()


def _act_repeat(state: ScenarioState, step: dict) -> None:
    for _ in range(step["count"]):
        for inner in step["steps"]:
            _run_step(state, inner)


def _honest_blocks(state: ScenarioState) -> list:
    ref = state.full(state.reference)
    return [ref.blocks[h] for h in ref.headers.active_chain()]


def _victim_challenges(state: ScenarioState, victims: list[str]) -> list[bytes]:
    challenges = []
    for victim in victims:
        spec = next(n for n in state.config["nodes"] if n["id"] == victim)
        challenges.append(state.key(spec["keys"][0]).challenge)
    return challenges


def _signed_spend(key: KeyPair, coins: list[Coin], outputs: list[TxOutput]) -> Transaction:
    tx = Transaction(
        version=0,
        inputs=tuple(TxInput(prevout=c.outpoint, public_key=key.public_key,
                             signature=b"\x00" * 64) for c in coins),
        outputs=tuple(outputs),
    )
    signature = key.sign(sighash(tx))
    return tx._replace(inputs=tuple(i._replace(signature=signature) for i in tx.inputs))


def _act_corrupt_shard(state: ScenarioState, step: dict) -> None:
    """Flip a coin value inside every utxo response headed for the victim."""
    def transform(payload: bytes) -> bytes:
        resp = decode_utxos_response(payload)
        for idx in sorted(resp.shards):
            shard = resp.shards[idx]
            if shard.coins:
                first = shard.coins[0]
                tampered = Shard(index=idx, coins=(
                    first._replace(value=first.value + 1),) + shard.coins[1:])
                shards = dict(resp.shards)
                shards[idx] = tampered
                return encode_utxos_response(UtxosResponse(shards=shards, tree=resp.tree))
        return payload
    state.bus.attach_adversary(
        Adversary(victim=step["victim"], transforms={MSG_UTXOS: transform}))


def _act_forge_commitment_tip(state: ScenarioState, step: dict) -> None:
    """One forged block on the honest tip whose commitment is garbage."""
    attacker = state.key(step["attacker"])
    builder = ForgedChainBuilder(state.params, budget=1,
                                 seed=state.rng.getrandbits(32),
                                 accept_bad_commitments=True)
    builder.replay(_honest_blocks(state))
    owned = sorted(c for c in builder.node.utxo.all_coins()
                   if c.challenge == attacker.challenge)
    if not owned:
        raise ScenarioError("attacker owns nothing to lure with")
    coin = owned[-1]
    victims = step["victims"] if "victims" in step else [step["victim"]]
    challenges = _victim_challenges(state, victims)
    lure = _signed_spend(attacker, [coin], _split_outputs(coin.value, challenges))
    builder.mine([lure], attacker.public_key,
                 fake_commitment=state.rng.randbytes(32))
    _deploy(state, step, builder, victims, lure, [coin])


def _split_outputs(value: int, challenges: list[bytes]) -> list[TxOutput]:
    part = value // len(challenges)
    amounts = [part] * len(challenges)
    amounts[0] += value - part * len(challenges)
    return [TxOutput(value=v, kind=KIND_PAYMENT, payload=ch)
            for v, ch in zip(amounts, challenges)]


def _deploy(state: ScenarioState, step: dict, builder: ForgedChainBuilder,
            victims: list[str], lure: Transaction, consumed: list[Coin]) -> None:
    shadow = builder.service()
    for victim in victims:
        state.bus.attach_adversary(
            Adversary(victim=victim, shadow=shadow, hijack=set(ALL_QUERIES)))
    if "label" in step:
        state.labeled[step["label"]] = (lure, consumed)


def _act_double_spend(state: ScenarioState, step: dict) -> None:
    """Re-spend a coin the honest chain already consumed, on a forged tip."""
    if step["spent_tx"] not in state.labeled:
        raise ScenarioError(f"no payment labeled {step['spent_tx']!r}")
    spent_tx, consumed = state.labeled[step["spent_tx"]]
    coin = consumed[0]
    attacker = state.key_by_public(spent_tx.inputs[0].public_key)
    builder = ForgedChainBuilder(state.params, budget=1,
                                 seed=state.rng.getrandbits(32))
    builder.replay(_honest_blocks(state))
    builder.inject_coin(coin)
    victims = step["victims"]
    lure = _signed_spend(attacker, [coin],
                         _split_outputs(coin.value, _victim_challenges(state, victims)))
    builder.mine([lure], attacker.public_key)
    _deploy(state, step, builder, victims, lure, [coin])


def _act_forge_chain(state: ScenarioState, step: dict) -> None:
    """Fork below the tip, plant a coin that never existed, spend it to the
    victim at the end of a freshly mined branch one block past the honest tip."""
    attacker = state.key(step["attacker"])
    forge_count = step["forge_count"]
    ref = state.full(state.reference)
    fork = ref.tip_height + 1 - forge_count
    if fork < 0:
        raise ScenarioError("honest chain too short for that forge length")
    builder = ForgedChainBuilder(state.params, budget=forge_count,
                                 seed=state.rng.getrandbits(32))
    builder.replay(_honest_blocks(state)[:fork + 1])
    fake = Coin(
        outpoint=OutPoint(txid=state.rng.randbytes(32), index=0),
        value=step.get("amount", 40),
        challenge=attacker.challenge,
    )
    builder.inject_coin(fake)
    victims = step["victims"] if "victims" in step else [step["victim"]]
    lure = _signed_spend(attacker, [fake],
                         _split_outputs(fake.value, _victim_challenges(state, victims)))
    for _ in range(forge_count - 1):
        builder.mine([], attacker.public_key)
    builder.mine([lure], attacker.public_key)
    _deploy(state, step, builder, victims, lure, [fake])


_ACTIONS = {
    "mine": _act_mine,
    "pay": _act_pay,
    "update": _act_update,
    "repeat": _act_repeat,
    "corrupt_shard": _act_corrupt_shard,
    "forge_commitment_tip": _act_forge_commitment_tip,
    "double_spend": _act_double_spend,
    "forge_chain": _act_forge_chain,
}


def _run_step(state: ScenarioState, step: dict) -> None:
    action = step.get("action")
    if action not in _ACTIONS:
        raise ScenarioError(f"unknown action {action!r}")
    _ACTIONS[action](state, step)


# -- expectations ---------------------------------------------------------------

def _last_verdict(state: ScenarioState, node_id: str, label: str):
    if label not in state.labeled:
        return None
    wanted = txid(state.labeled[label][0])
    found = None
    for result in state.diet_services[node_id].results:
        for verdict in result.verdicts:
            if verdict.tx_id == wanted:
                found = verdict
    return found


def _chain_stats(state: ScenarioState) -> dict:
    store = state.full(state.reference).utxo
    per_block = []
    for h in range(store.height + 1):
        k = store.k_at(h)
        shards, _ = store.state_before(h + 1, set(range(1 << k)))
        total = sum(len(s.encode()) for s in shards.values())
        record = store.touched_log[h]
        per_block.append({
            "height": h,
            "k": k,
            "total_bytes": total,
            "average_bytes": total / (1 << k),
            "touched": len(record.indices),
            "rebalanced": record.rebalanced,
        })
    return {
        "tip_height": state.full(state.reference).tip_height,
        "k_final": store.k,
        "k_history": [[h, k] for h, k in store.policy_log],
        "per_block": per_block,
        "rebalances": [{
            "height": s.height, "k_from": s.k_from, "k_to": s.k_to,
            "average_before": s.avg_before, "average_after": s.avg_after,
        } for s in store.rebalance_log],
    }


def _check_one(state: ScenarioState, chain: dict, check: dict) -> tuple[bool, str]:
    kind = check["check"]
    if kind == "verdict":
        verdict = _last_verdict(state, check["node"], check["tx"])
        if verdict is None:
            return False, "no verdict observed for that payment"
        if verdict.status != check["status"]:
            return False, f"status {verdict.status} (reason {verdict.reason})"
        if "reason" in check and verdict.reason != check["reason"]:
            return False, f"reason {verdict.reason}"
        return True, f"status {verdict.status}" + (
            f", reason {verdict.reason}" if verdict.reason else "")
    if kind == "tip_height":
        node_id = check["node"]
        if node_id in state.full_nodes:
            tip = state.full_nodes[node_id].tip_height
        else:
            tip = state.diet_services[node_id].diet.headers.tip_height
        return tip == check["height"], f"tip at {tip}"
    if kind == "same_tip":
        tips = []
        for node_id in check["nodes"]:
            if node_id in state.full_nodes:
                tips.append(state.full_nodes[node_id].tip_hash)
            else:
                tips.append(state.diet_services[node_id].diet.headers.tip)
        same = all(t == tips[0] for t in tips)
        return same, "tips agree" if same else "tips diverge"
    if kind == "cap_every_block":
        cap = state.params.size_cap
        worst = max(per["average_bytes"] for per in chain["per_block"])
        return worst <= cap, f"worst average {worst:.1f} vs cap {cap}"
    if kind == "halving":
        tol = check.get("tolerance", 1.0)
        worst = 0.0
        for step in chain["rebalances"]:
            worst = max(worst, abs(step["average_after"] - step["average_before"] / 2))
        ok = worst <= tol and chain["rebalances"]
        return bool(ok), f"{len(chain['rebalances'])} splits, worst drift {worst:.2f}"
    if kind == "k_final":
        ok = chain["k_final"] >= check["min"]
        return ok, f"k ended at {chain['k_final']}"
    if kind == "touched_max":
        worst = max(per["touched"] for per in chain["per_block"]
                    if not per["rebalanced"])
        return worst <= check["max"], f"worst non-split block touched {worst}"
    if kind == "utxos_bytes_ratio":
        totals = {per["height"]: per["total_bytes"] for per in chain["per_block"]}
        worst = 0.0
        samples = 0
        for result in state.diet_services[check["node"]].results:
            for entry in result.per_height:
                if "utxos_bytes" not in entry:
                    continue
                # proofs for block h describe the set as of block h-1
                denominator = totals[entry["height"] - 1]
                worst = max(worst, entry["utxos_bytes"] / denominator)
                samples += 1
        ok = samples > 0 and worst <= check["max"]
        return ok, f"{samples} samples, worst ratio {worst:.3f}"
    raise ScenarioError(f"unknown expectation {kind!r}")


# -- entry point -----------------------------------------------------------------

@dataclass
class ScenarioRun:
    report: dict
    trace: list[dict]
    state: ScenarioState

    @property
    def passed(self) -> bool:
        return self.report["pass"]


def run_scenario(source, seed_override: int | None = None) -> ScenarioRun:
    cfg = dict(load_config(source))
    if seed_override is not None:
        cfg["seed"] = seed_override
    state = _build(cfg)
    for step in cfg["script"]:
        _run_step(state, step)

    chain = _chain_stats(state)
    expectations = []
    for check in cfg["expect"]:
        ok, detail = _check_one(state, chain, check)
        expectations.append({**check, "pass": ok, "detail": detail})

    queries = {}
    for node_id, service in sorted(state.diet_services.items()):
        verdicts = []
        for result in service.results:
            for v in result.verdicts:
                verdicts.append({
                    "tx": v.tx_id.hex(), "height": v.height, "status": v.status,
                    "reason": v.reason, "fail_height": v.fail_height,
                    "window_first": v.first, "window_last": v.last,
                })
        last = service.results[-1] if service.results else None
        queries[node_id] = {
            "verdicts": verdicts,
            "bytes_by_type": dict(last.bytes_by_type) if last else {},
            "per_height": list(last.per_height) if last else [],
        }

    report = {
        "scenario": cfg["name"],
        "seed": cfg["seed"],
        "chain": chain,
        "queries": queries,
        "expectations": expectations,
        "pass": all(e["pass"] for e in expectations),
    }
    return ScenarioRun(report=report, trace=state.bus.trace, state=state)


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def render_trace(trace: list[dict]) -> str:
    return "".join(json.dumps(event, sort_keys=True) + "\n" for event in trace)
