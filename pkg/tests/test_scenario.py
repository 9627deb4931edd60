from __future__ import annotations

import json

import pytest

from dietchain import cli
from dietchain.errors import ScenarioError
from dietchain.scenario import (
    derive_key,
    load_config,
    render_report,
    render_trace,
    run_scenario,
)

BASE = {
    "name": "mini",
    "seed": 9,
    "target_bits": 5,
    "keys": ["alice", "carol"],
    "nodes": [
        {"id": "full-1", "role": "full"},
        {"id": "carol-node", "role": "diet", "keys": ["carol"],
         "max_depth": 8, "max_length": 2, "peer": "full-1"},
    ],
    "script": [
        {"action": "mine", "node": "full-1", "reward": "alice", "count": 3},
        {"action": "pay", "label": "p1", "from": "alice", "to": "carol",
         "amount": 10, "node": "full-1"},
        {"action": "mine", "node": "full-1", "reward": "alice"},
        {"action": "update", "nodes": ["carol-node"]},
    ],
    "expect": [
        {"check": "tip_height", "node": "full-1", "height": 3},
        {"check": "verdict", "node": "carol-node", "tx": "p1",
         "status": "diet-verified"},
    ],
}


def _cfg(**overrides) -> dict:
    cfg = json.loads(json.dumps(BASE))
    cfg.update(overrides)
    return cfg


def test_every_bundled_scenario_passes():
    bundled = cli.bundled_scenarios()
    assert len(bundled) == 7
    for name, text in sorted(bundled.items()):
        run = run_scenario(json.loads(text))
        assert run.passed, f"{name}: {run.report['expectations']}"


def test_minimal_config_runs():
    run = run_scenario(_cfg())
    assert run.passed
    report = run.report
    assert report["scenario"] == "mini"
    assert report["chain"]["tip_height"] == 3
    verdicts = report["queries"]["carol-node"]["verdicts"]
    assert [v["status"] for v in verdicts] == ["diet-verified"]


def test_same_seed_same_bytes():
    one = run_scenario(_cfg())
    two = run_scenario(_cfg())
    assert render_report(one.report) == render_report(two.report)
    assert render_trace(one.trace) == render_trace(two.trace)


def test_seed_override_lands_in_report():
    run = run_scenario(_cfg(), seed_override=123)
    assert run.report["seed"] == 123
    assert run.passed  # expectations here do not depend on the seed


def test_missing_required_key_rejected():
    for dropped in ("name", "seed", "nodes", "script"):
        cfg = _cfg()
        del cfg[dropped]
        with pytest.raises(ScenarioError, match=dropped):
            load_config(cfg)


def test_unknown_action_rejected():
    cfg = _cfg(script=[{"action": "launder"}])
    with pytest.raises(ScenarioError, match="launder"):
        run_scenario(cfg)


def test_unknown_role_rejected():
    cfg = _cfg(nodes=[{"id": "full-1", "role": "full"},
                      {"id": "x", "role": "oracle"}])
    with pytest.raises(ScenarioError, match="oracle"):
        run_scenario(cfg)


def test_full_node_is_mandatory():
    cfg = _cfg(nodes=[{"id": "x", "role": "spv", "keys": ["carol"]}])
    with pytest.raises(ScenarioError, match="full node"):
        run_scenario(cfg)


def test_overdraft_rejected():
    cfg = _cfg(script=[
        {"action": "mine", "node": "full-1", "reward": "alice"},
        {"action": "pay", "label": "p1", "from": "carol", "to": "alice",
         "amount": 10, "node": "full-1"},
    ], expect=[])
    with pytest.raises(ScenarioError):
        run_scenario(cfg)


def test_pay_splits_across_listed_recipients():
    cfg = _cfg(keys=["alice", "carol", "sable"])
    cfg["nodes"].append({"id": "sable-node", "role": "spv", "keys": ["sable"],
                         "peer": "full-1"})
    cfg["script"][1] = {"action": "pay", "label": "p1", "from": "alice",
                        "to": ["carol", "sable"], "amount": 10, "node": "full-1"}
    cfg["script"][-1] = {"action": "update", "nodes": ["carol-node", "sable-node"]}
    cfg["expect"].append({"check": "verdict", "node": "sable-node", "tx": "p1",
                          "status": "spv-only"})
    run = run_scenario(cfg)
    assert run.passed, run.report["expectations"]
    # one tx, seen by both watchers
    carol_tx = run.report["queries"]["carol-node"]["verdicts"][-1]["tx"]
    sable_tx = run.report["queries"]["sable-node"]["verdicts"][-1]["tx"]
    assert carol_tx == sable_tx


def test_non_string_key_name_is_a_config_error():
    cfg = _cfg()
    cfg["script"][1]["to"] = 5
    with pytest.raises(ScenarioError, match="unknown key"):
        run_scenario(cfg)


def test_key_derivation_is_name_and_seed_bound():
    alice_nine = derive_key(9, "alice")
    assert derive_key(9, "alice").public_key == alice_nine.public_key
    assert derive_key(10, "alice").public_key != alice_nine.public_key
    assert derive_key(9, "bob").public_key != alice_nine.public_key


def test_report_has_no_timestamps():
    run = run_scenario(_cfg())
    text = render_report(run.report) + render_trace(run.trace)
    for needle in ("time", "date", "stamp"):
        assert needle not in text


def test_cli_run_passes(capsys, tmp_path):
    report_file = tmp_path / "report.json"
    code = cli.main(["run", "honest_chain", "--report", str(report_file)])
    out = capsys.readouterr().out
    assert code == 0
    assert "overall: PASS" in out
    saved = json.loads(report_file.read_text())
    assert saved["pass"] is True


def test_cli_reports_expectation_failure(capsys, tmp_path):
    cfg = _cfg()
    cfg["expect"] = [{"check": "tip_height", "node": "full-1", "height": 99}]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    code = cli.main(["run", str(path)])
    out = capsys.readouterr().out
    assert code == 1
    assert "overall: FAIL" in out
    assert out.count("FAIL") >= 2  # the check line and the overall line


def test_cli_unknown_scenario_is_a_usage_error(capsys):
    code = cli.main(["run", "no_such_scenario"])
    err = capsys.readouterr().err
    assert code == 2
    assert "no_such_scenario" in err


def test_cli_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("honest_chain", "forge_l_plus_1", "legacy_interop"):
        assert name in out


def test_cli_trace_writes_jsonl(tmp_path, capsys):
    out_file = tmp_path / "trace.jsonl"
    assert cli.main(["trace", "forged_shard", "--out", str(out_file)]) == 0
    capsys.readouterr()
    lines = out_file.read_text().splitlines()
    assert lines, "trace should not be empty"
    kinds = {json.loads(line)["kind"] for line in lines}
    assert "message" in kinds and "verdict" in kinds
