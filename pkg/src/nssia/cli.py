"""Command line: init a consortium, run scenarios, report budgets, audit.

Exit codes: 0 success, 2 protocol or scenario error, 3 tamper/validation
finding, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from pathlib import Path

from . import __version__
from .avatar import avatar_id
from .errors import NssiaError
from .ledger import JournalError
from .protocol import SystemParams
from .reporting import build_report, render_figures, report_from_state, report_text, write_csv
from .scenario import Scenario, ScenarioInvalid, TamperDetected, run_scenario
from .statedir import (
    SimulationState,
    init_state,
    load_library_file,
    load_state,
    params_from_config,
    save_state,
    state_initialized,
)

EXIT_OK = 0
EXIT_PROTOCOL = 2
EXIT_TAMPER = 3
EXIT_IO = 4


def _params_from_args(args: argparse.Namespace, overrides: dict | None = None) -> SystemParams:
    config: dict = {}
    if getattr(args, "config", None):
        config.update(json.loads(Path(args.config).read_text()))
    config.update(overrides or {})
    for key in ("n1", "t1", "n2", "t2", "n", "b"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return params_from_config(config)


def cmd_init(args: argparse.Namespace) -> int:
    params = _params_from_args(args)
    params.validate()
    library = load_library_file(args.library) if args.library else None
    state = init_state(
        Path(args.state_dir), params, seed=args.seed, library=library, force=args.force
    )
    print(f"initialized {state.root} ({len(state.system.storages)} storage servers, "
          f"{len(state.system.regulators)} regulators)")
    return EXIT_OK


def _checked_load(root: Path, rng: random.Random | None = None) -> SimulationState:
    state = load_state(root, rng=rng)
    findings = state.system.ledger.verify_chain()
    if findings:
        details = "; ".join(f"#{f.position} {f.code}" for f in findings[:5])
        raise TamperDetected(f"ledger verification failed: {details}", [
            {"position": f.position, "code": f.code, "message": f.message} for f in findings
        ])
    return state


def cmd_run(args: argparse.Namespace) -> int:
    scenario = Scenario.from_file(args.scenario)
    seed = args.seed if args.seed is not None else scenario.seed
    rng = random.Random(seed) if seed is not None else None
    root = Path(args.state_dir)

    fresh = not state_initialized(root)
    if fresh:
        overrides = {}
        if scenario.steps and scenario.steps[0]["op"] == "init":
            overrides = dict(scenario.steps[0].get("params", {}))
        params = params_from_config(overrides)
        params.validate()
        # the seeded rng from init carries straight into the steps
        state = init_state(root, params, seed=seed)
    else:
        state = _checked_load(root, rng=rng)

    try:
        outcomes = run_scenario(state, scenario, fresh=fresh)
    except TamperDetected:
        raise  # drills leave the persisted state untouched
    except NssiaError:
        save_state(state)  # ledger writes that happened are real; keep them
        raise
    save_state(state)

    report = build_report(root)
    if args.json:
        payload = {
            "steps": [{"op": o.op, **o.detail} for o in outcomes],
            "report": json.loads(report.to_json()),
        }
        print(json.dumps(payload, indent=2))
    else:
        for outcome in outcomes:
            detail = " ".join(f"{k}={v}" for k, v in outcome.detail.items())
            print(f"step {outcome.op}: {detail}")
        print()
        print(report_text(report))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.state_dir)
    state = _checked_load(root)
    report = report_from_state(state)
    out_dir = Path(args.out) if args.out else root / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    write_csv(report, csv_path)
    figures = render_figures(report, out_dir)
    if args.json:
        print(report.to_json())
    else:
        print(report_text(report))
        print()
        print(f"wrote {csv_path}")
        for path in figures:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    root = Path(args.state_dir)
    rng = random.Random(args.seed) if args.seed is not None else None
    state = _checked_load(root, rng=rng)
    if args.dai:
        digest_ = bytes.fromhex(args.dai)
    else:
        person = state.people.get(args.np or "")
        if person is None or person.avatar is None:
            raise NssiaError(f"{args.np!r} has no generated avatar on record")
        digest_ = avatar_id(person.avatar)

    start = time.perf_counter()
    result = state.system.audit(args.ra, digest_)
    state.timings["accountability"]["seconds"] += time.perf_counter() - start
    state.timings["accountability"]["ops"] += 1
    save_state(state)

    metadata = result.recovered_metadata.rstrip(b"\x00")
    if args.json:
        print(
            json.dumps(
                {
                    "avatar_id": result.avatar_digest.hex(),
                    "audit_tid": result.audit_tid.hex(),
                    "regulator": args.ra,
                    "recovered_metadata": metadata.decode("utf-8", "replace"),
                },
                indent=2,
            )
        )
    else:
        print(f"avatar    {result.avatar_digest.hex()}")
        print(f"audit tx  {result.audit_tid.hex()}")
        print("recovered metadata:")
        for line in metadata.decode("utf-8", "replace").splitlines():
            print(f"  {line}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nssia",
        description="Self-sovereign identity simulator: digitize people, "
        "generate avatars, escrow identities, audit them back.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="create a consortium state dir")
    init.add_argument("--state-dir", required=True)
    init.add_argument("--config", help="JSON file with n1/t1/n2/t2/n/b overrides")
    for key, hint in (
        ("n1", "storage servers"),
        ("t1", "storage threshold"),
        ("n2", "regulators"),
        ("t2", "regulator threshold"),
        ("n", "escrow polynomials"),
        ("b", "escrow coefficient bytes"),
    ):
        init.add_argument(f"--{key}", type=int, help=hint)
    init.add_argument("--library", help="JSON file of code-module templates")
    init.add_argument("--seed", type=int, help="deterministic key generation")
    init.add_argument("--force", action="store_true", help="reset an existing state dir")
    init.set_defaults(handler=cmd_init)

    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("--state-dir", required=True)
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--json", action="store_true")
    run.set_defaults(handler=cmd_run)

    report = sub.add_parser("report", help="recount byte budgets, render figures")
    report.add_argument("--state-dir", required=True)
    report.add_argument("--out", help="directory for report.csv and figures")
    report.add_argument("--json", action="store_true")
    report.set_defaults(handler=cmd_report)

    audit = sub.add_parser("audit", help="recover the metadata behind an avatar")
    audit.add_argument("--state-dir", required=True)
    target = audit.add_mutually_exclusive_group(required=True)
    target.add_argument("--np", help="person name known to this state dir")
    target.add_argument("--dai", help="avatar id (hex)")
    audit.add_argument("--ra", type=int, default=1, help="driving regulator (1-based)")
    audit.add_argument("--seed", type=int)
    audit.add_argument("--json", action="store_true")
    audit.set_defaults(handler=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except TamperDetected as exc:
        print(f"tamper detected: {exc}", file=sys.stderr)
        return EXIT_TAMPER
    except (JournalError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NssiaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
