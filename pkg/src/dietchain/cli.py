"""``dietchain`` command line: run scenarios, list the bundled ones, dump
message traces. Exit status 0 = all expectations met, 1 = some failed,
2 = the scenario could not run at all.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

from .errors import DietchainError, ScenarioError
from .scenario import load_config, render_report, render_trace, run_scenario


def bundled_scenarios() -> dict[str, str]:
    """Map of bundled scenario name to its packaged JSON text."""
    out = {}
    for entry in resources.files("dietchain.scenarios").iterdir():
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = entry.read_text()
    return dict(sorted(out.items()))


def _resolve(spec: str) -> dict:
    if os.path.exists(spec):
        return load_config(spec)
    bundled = bundled_scenarios()
    name = spec[:-5] if spec.endswith(".json") else spec
    if name in bundled:
        return load_config(json.loads(bundled[name]))
    raise ScenarioError(
        f"no file or bundled scenario named {spec!r}"
        f" (bundled: {', '.join(bundled)})")


def _cmd_run(args) -> int:
    cfg = _resolve(args.scenario)
    run = run_scenario(cfg, seed_override=args.seed)
    for item in run.report["expectations"]:
        flag = "PASS" if item["pass"] else "FAIL"
        label = {k: v for k, v in item.items() if k not in ("pass", "detail")}
        print(f"{flag}  {json.dumps(label, sort_keys=True)}  -- {item['detail']}")
    if args.verbose:
        for node_id, info in run.report["queries"].items():
            print(f"{node_id}: {json.dumps(info['bytes_by_type'], sort_keys=True)}")
        chain = run.report["chain"]
        print(f"chain: tip {chain['tip_height']}, k {chain['k_final']},"
              f" {len(chain['rebalances'])} splits")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(render_report(run.report) + "\n")
        print(f"report written to {args.report}")
    print("overall:", "PASS" if run.passed else "FAIL")
    return 0 if run.passed else 1


def _cmd_list(_args) -> int:
    for name, text in bundled_scenarios().items():
        cfg = json.loads(text)
        print(f"{name:28} seed={cfg['seed']:<6} nodes={len(cfg['nodes'])}"
              f" checks={len(cfg.get('expect', []))}")
    return 0


def _cmd_trace(args) -> int:
    cfg = _resolve(args.scenario)
    run = run_scenario(cfg, seed_override=args.seed)
    with open(args.out, "w") as fh:
        fh.write(render_trace(run.trace))
    print(f"{len(run.trace)} events written to {args.out}")
    return 0 if run.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dietchain",
        description="scripted runs of a sharded-commitment blockchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and check expectations")
    p_run.add_argument("scenario", help="bundled name or path to a config file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--report", metavar="FILE", help="write the JSON report")
    p_run.add_argument("--verbose", action="store_true",
                       help="print per-node bandwidth and chain stats")
    p_run.set_defaults(func=_cmd_run)

    p_list = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p_list.set_defaults(func=_cmd_list)

    p_trace = sub.add_parser("trace", help="run and dump the message trace")
    p_trace.add_argument("scenario")
    p_trace.add_argument("--out", required=True, metavar="FILE",
                         help="JSONL trace destination")
    p_trace.add_argument("--seed", type=int, default=None)
    p_trace.set_defaults(func=_cmd_trace)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DietchainError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
