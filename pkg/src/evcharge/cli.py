"""Command-line entry point.

Exit codes: 0 all checks passed, 1 a security or invariant check failed,
2 bad usage or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import DuplicateVehicle, ScenarioError
from .registry import Registry
from .scenario import RunResult, bundled_scenarios, load_scenario, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_DIR_ENV = "EVCHARGE_OUT_DIR"


def _default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, "evcharge-out")


def _parse_vehicle_spec(line: str, where: str):
    parts = line.split(maxsplit=4)
    if len(parts) < 2:
        raise ScenarioError(f"{where}: expected '<id-hex> <key-hex> [balance] [channel] [contact]'")
    try:
        id_a, k_a = bytes.fromhex(parts[0]), bytes.fromhex(parts[1])
        balance = int(parts[2]) if len(parts) > 2 else 0
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    channel = parts[3] if len(parts) > 3 else "sms"
    contact = parts[4] if len(parts) > 4 else ""
    return id_a, k_a, balance, channel, contact


def cmd_provision(args) -> int:
    path = Path(args.registry)
    registry = Registry.load(path) if path.exists() else Registry()
    specs = []
    if args.spec:
        for lineno, line in enumerate(Path(args.spec).read_text().splitlines(), 1):
            if line.strip() and not line.lstrip().startswith("#"):
                specs.append(_parse_vehicle_spec(line, f"{args.spec}:{lineno}"))
    for i, line in enumerate(args.vehicle or [], 1):
        specs.append(_parse_vehicle_spec(line, f"--vehicle #{i}"))
    if not specs:
        raise ScenarioError("nothing to provision: give --spec or --vehicle")
    for id_a, k_a, balance, channel, contact in specs:
        try:
            registry.register_vehicle(id_a, k_a, balance, contact, channel)
        except DuplicateVehicle as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    registry.save(path)
    print(f"{len(specs)} vehicle(s) provisioned, {len(registry)} in {path}")
    return EXIT_OK


def _resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    for p in bundled_scenarios():
        if p.name == name or p.stem == name:
            return p
    raise ScenarioError(f"no scenario file {name!r} (and no bundled scenario by that name)")


def _write_outputs(result: RunResult, out_dir: Path) -> RunResult:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = result.scenario.name
    transcript = out_dir / f"{stem}.transcript.jsonl"
    invoices = out_dir / f"{stem}.invoices.txt"
    report = out_dir / f"{stem}.report.json"
    transcript.write_text(result.transcript)
    result.sim.registry.save_invoices(invoices)
    result.files = {"transcript": str(transcript), "invoices": str(invoices), "report": str(report)}
    report.write_text(json.dumps(result.to_report(), indent=2, sort_keys=True) + "\n")
    return result


def _print_human(result: RunResult):
    print(f"scenario {result.scenario.name} (seed {result.seed}): "
          f"{'PASS' if result.passed else 'FAIL'}")
    for name, v in result.sim.party_verdicts()["vehicles"].items():
        print(f"  vehicle {name}: {v['phase']}")
    for seq, link, outcome in result.sim.lookups():
        print(f"  lookup @{seq} via {link}: {outcome.name}")
    for inv in result.sim.invoices:
        print(f"  invoice {inv.id_a.hex()}: {inv.duration_ms} ms, amount {inv.amount}")
    for c in result.checks:
        mark = "ok  " if c.passed else "FAIL"
        extra = f" [{c.detail}]" if c.detail and not c.passed else ""
        ev = f" seq={c.evidence}" if c.evidence and not c.passed else ""
        print(f"  {mark} {c.name}{extra}{ev}")


def _run_one(path: Path, args, out_dir: Path) -> RunResult:
    sc = load_scenario(path)
    registry = Registry.load(args.registry) if getattr(args, "registry", None) else None
    result = run_scenario(
        sc, seed=args.seed, tariff=getattr(args, "tariff", None), registry=registry,
        verify_macs=not args.insecure_skip_mac, strict_replay=args.strict_replay or None,
    )
    return _write_outputs(result, out_dir)


def cmd_run(args) -> int:
    result = _run_one(_resolve_scenario(args.scenario), args, Path(args.out_dir))
    if args.json:
        print(json.dumps(result.to_report(), sort_keys=True))
    else:
        _print_human(result)
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_attack_suite(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [_run_one(p, args, out_dir) for p in bundled_scenarios()]
    summary = {
        "status": "pass" if all(r.passed for r in results) else "fail",
        "scenarios": {
            r.scenario.name: {
                "status": "pass" if r.passed else "fail",
                "failed_checks": [c.name for c in r.checks if not c.passed],
                "transcript_sha256": r.transcript_digest(),
            }
            for r in results
        },
    }
    (out_dir / "suite.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for r in results:
            failed = [c.name for c in r.checks if not c.passed]
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.scenario.name}"
                  + (f"  ({'; '.join(failed)})" if failed else ""))
        print(f"suite: {summary['status'].upper()} ({len(results)} scenarios)")
    return EXIT_OK if summary["status"] == "pass" else EXIT_FAIL


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out-dir", default=_default_out_dir(),
                   help=f"output directory (default: ${OUT_DIR_ENV} or ./evcharge-out)")
    p.add_argument("--strict-replay", action="store_true",
                   help="remember every nonce per vehicle, not just the last")
    p.add_argument("--json", action="store_true", help="print the structured report")
    # negative control for the test suite; never use outside it
    p.add_argument("--insecure-skip-mac", action="store_true", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evcharge", description="EV charging authentication and billing simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("provision", help="add vehicles to a registry file")
    p.add_argument("registry", help="registry file (created if missing)")
    p.add_argument("--spec", help="file of '<id-hex> <key-hex> [balance] [channel] [contact]' lines")
    p.add_argument("--vehicle", action="append", help="one vehicle spec line; repeatable")
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--tariff", type=int, help="override the per-minute tariff")
    p.add_argument("--registry", help="preload vehicles from a registry file")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack-suite", help="run every bundled scenario")
    _add_run_flags(p)
    p.set_defaults(func=cmd_attack_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
