"""Operator command line: serve, simulate, train, score, replay-example.

Exit codes: 0 success, 1 usage error, 2 data error, 3 replay-example mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cascade import ConfigError, classify
from .config import EngineConfig, load_config
from .store import BatchError, IntegrityError, NotFoundError, ProfileStore, StoreError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_REPLAY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--t1", type=float, help="reject threshold (overrides config)")
    p.add_argument("--t2", type=float, help="accept threshold (overrides config)")
    p.add_argument("--theta", type=float, help="HMM deviation threshold (overrides config)")
    p.add_argument("--policy", choices=["hybrid", "mobile_only", "hmm_only"])


def _engine(args, base: EngineConfig | None = None) -> EngineConfig:
    cfg = base if base is not None and not args.config else load_config(args.config)
    return cfg.with_overrides(t1=args.t1, t2=args.t2, theta=args.theta, policy=args.policy)


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise BatchError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def cmd_serve(args) -> int:
    from .service import PaymentService, make_server

    cfg = _engine(args)
    store = ProfileStore.open(args.store, cfg.score.window_len, cfg.hmm) if args.store else None
    trace_path = Path(args.store) / "traces.jsonl" if args.store else None
    service = PaymentService(store, cfg, trace_path=trace_path)
    server = make_server(service, args.host, args.port)
    print(f"listening on http://{args.host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulator import compare_detectors, load_scenario_file, make_population, run_scenario

    doc = load_scenario_file(args.scenario)
    cfg = _engine(args, doc["engine"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.population:
        cmp = compare_detectors(make_population(args.population, args.seed), cfg, doc["days"])
        report = {"population": args.population, "seed": args.seed, **cmp.to_dict()}
        del report["per_user_fp"]
        (out / "comparison.json").write_text(json.dumps(report, indent=2))
        print(json.dumps(report["fpr"]))
        return EXIT_OK
    run = run_scenario(doc["generator"], doc["scenario"], doc["days"], cfg)
    report = {
        "generator": doc["generator"].to_dict(),
        "scenario": doc["scenario"].kind,
        "onset_day": doc["scenario"].onset_day,
        "engine": cfg.to_dict(),
        "metrics": run.metrics.to_dict(with_trajectory=False),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    run.metrics.write_csv(out / "trajectory.csv")
    with open(out / "traces.jsonl", "w") as fh:
        for t in run.traces:
            fh.write(json.dumps(t.to_dict()) + "\n")
    print(json.dumps(report["metrics"]))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _engine(args)
    by_user: dict[str, list[float]] = {}
    for lineno, row in enumerate(_read_jsonl(args.transactions), start=1):
        try:
            user, amount = row["user"], float(row["amount"])
        except (KeyError, TypeError, ValueError):
            raise BatchError(f"{args.transactions}:{lineno}: need 'user' and numeric 'amount'") from None
        if amount < 0:
            raise BatchError(f"{args.transactions}:{lineno}: negative amount")
        by_user.setdefault(user, []).append(amount)
    store = ProfileStore.open(args.store, cfg.score.window_len, cfg.hmm)
    summary = {}
    for user, amounts in sorted(by_user.items()):
        if len(amounts) < max(2, cfg.hmm.window_len):
            raise BatchError(f"user {user!r}: {len(amounts)} transactions, need at least {max(2, cfg.hmm.window_len)}")
        profile = store.train_user(user, amounts)
        store.save_profile(profile)
        summary[user] = {"transactions": len(amounts), "centroids": list(profile.quantizer.centroids)}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_score(args) -> int:
    from .behavior import score_day

    cfg = _engine(args)
    store = ProfileStore.rebuild(_read_jsonl(args.events), (), cfg.score.window_len, cfg.hmm)
    profile = store.get(args.user)
    day = args.day if args.day is not None else profile.open_day
    windows, today, completed = profile.view_at(day)
    if completed < cfg.score.window_len:
        raise BatchError(f"user {args.user!r} has {completed} completed days, need {cfg.score.window_len}")
    auth, _ = score_day(windows, today, cfg.score)
    out = {
        "user": args.user,
        "day": day,
        "scores": {p.kind: float(p.score) for p in auth.per_parameter},
        "aggregate": float(auth.aggregate),
        "case": classify(auth.aggregate, cfg.thresholds).value,
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_replay_example(args) -> int:
    from .simulator import replay_worked_example

    report = replay_worked_example(config=_engine(args))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for c in report.checks:
            mark = "ok " if c["ok"] else "BAD"
            print(f"[{mark}] {c['quantity']}: expected {c['expected']}, got {c['actual']}")
    return EXIT_OK if report.ok else EXIT_REPLAY


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridfraud", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("serve", help="run the HTTP decision service")
    _add_engine_flags(p)
    p.add_argument("--store", help="store directory (in-memory if omitted)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run a scenario file")
    _add_engine_flags(p)
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", default="sim-out", help="output directory")
    p.add_argument("--population", type=int, help="compare detectors on N generated users instead")
    p.add_argument("--seed", type=int, default=None, help="population seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit spending models from a transaction log")
    _add_engine_flags(p)
    p.add_argument("transactions", help='JSONL with {"user", "amount"} per line')
    p.add_argument("--store", required=True, help="store directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="authentication score from an event log")
    _add_engine_flags(p)
    p.add_argument("events", help="event log (JSONL)")
    p.add_argument("--user", required=True)
    p.add_argument("--day", type=int, help="day to score (default: last recorded day)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("replay-example", help="reproduce the one-week call/SMS example")
    _add_engine_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_replay_example)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if getattr(args, "seed", "absent") is None:
        from .simulator import DEFAULT_POPULATION_SEED

        args.seed = DEFAULT_POPULATION_SEED
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BatchError, IntegrityError, NotFoundError, StoreError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
