"""Command-line entry point.

Exit codes: 0 clean run, 1 configuration or input error, 2 a run flagged an
assumption violation (more faulty members than the protocol tolerates, or a
signature collection that could not complete).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..cosi import PrivateEnvelope, client_verify, decode_envelope, parse_credential_message
from ..crypto import decrypt, get_scheme
from ..errors import ArgumentError, ConfigurationError, DecodeError, DecryptionError
from ..pubchain import read_chain_dump
from .report import RunReport, compare_runs
from .scenario import builtin_scenarios, load_scenario, with_override
from .simulation import ConsortiumSimulation

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _emit(report: RunReport, fmt: str, out) -> None:
    if fmt in ("table", "both"):
        out.write(report.to_table())
    if fmt in ("jsonl", "both"):
        out.write(report.to_jsonl())


def _load(path: str, seed: Optional[int]):
    scenario = load_scenario(path)
    if seed is not None:
        scenario = with_override(scenario, "seed", seed)
    return scenario


def cmd_run(args) -> int:
    scenario = _load(args.scenario, args.seed)
    sim = ConsortiumSimulation(scenario)
    report = sim.run()
    if args.output:
        Path(args.output).write_text(report.to_jsonl())
    _emit(report, args.format, sys.stdout)
    if args.dump_chain:
        Path(args.dump_chain).write_text("".join(line + "\n" for line in sim.pub.dump_lines()))
    if args.dump_keys:
        keys = {"scheme": scenario.spec.scheme, "members": [k.hex() for k in sim.pubkeys],
                "consumers": [{"public": k.public.hex(), "secret": k.secret.hex()} for k in sim.consumer_keys]}
        Path(args.dump_keys).write_text(json.dumps(keys, indent=2, sort_keys=True) + "\n")
    if args.trace:
        Path(args.trace).write_text("".join(line + "\n" for line in sim.net.trace_lines()))
    return EXIT_VIOLATION if report.violated else EXIT_OK


def cmd_sweep(args) -> int:
    base = _load(args.scenario, args.seed)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ArgumentError("--values needs at least one value")
    rows = [("value", "completed", "e2e mean ms", "sign mean ms", "conflicts", "fallbacks", "violations")]
    violated = False
    for value in values:
        report = ConsortiumSimulation(with_override(base, args.param, value)).run()
        violated |= report.violated
        stats = report.phase_stats()
        if args.format == "jsonl":
            for record in report.records():
                record["sweep"] = {"param": args.param, "value": value}
                sys.stdout.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            continue
        sign = report.signing_latencies
        rows.append((str(value), str(report.status_counts().get("completed", 0)),
                     "-" if stats["end_to_end"]["mean"] is None else f"{stats['end_to_end']['mean']:.1f}",
                     "-" if not sign else f"{sum(sign) / len(sign):.1f}",
                     str(report.conflicts["conflicts"]), str(report.fallback_invocations),
                     str(len(report.assumption_violations))))
    if args.format != "jsonl":
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        print(f"sweep {args.param} over {base.name}")
        for row in rows:
            print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return EXIT_VIOLATION if violated else EXIT_OK


def _report_for(path: str, seed: Optional[int]) -> RunReport:
    p = Path(path)
    if p.is_file() and p.suffix == ".jsonl":
        return RunReport.from_jsonl(p.read_text())
    return ConsortiumSimulation(_load(path, seed)).run()


def cmd_compare(args) -> int:
    diff = compare_runs(_report_for(args.a, args.seed), _report_for(args.b, args.seed))
    if not diff:
        print("no differences in outcomes or scheduler state")
    for line in diff:
        print(line)
    return EXIT_OK


def cmd_verify_client(args) -> int:
    try:
        keys = json.loads(Path(args.keys).read_text())
        members = [bytes.fromhex(k) for k in keys["members"]]
        scheme = get_scheme(keys.get("scheme", "arithmetic"))
        consumers = [(bytes.fromhex(c["public"]), bytes.fromhex(c["secret"])) for c in keys.get("consumers", [])]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"cannot read key file {args.keys}: {exc}") from None
    try:
        entries = read_chain_dump(Path(args.chain_dump).read_text().splitlines())
    except OSError as exc:
        raise ConfigurationError(f"cannot read chain dump: {exc}") from None
    n = len(members)
    for seq, kind, payload in entries:
        if kind != "response":
            continue
        verdict = client_verify(payload, members, n, scheme)
        line = f"{seq} {'accept' if verdict else 'reject:' + verdict.reason.value}"
        if verdict:
            envelope = decode_envelope(payload)
            if isinstance(envelope, PrivateEnvelope):
                secret = next((s for p, s in consumers if p == envelope.recipient), None)
                if secret is None:
                    line += " private (no key for recipient)"
                else:
                    try:
                        request_id, _ = parse_credential_message(decrypt(secret, envelope.ciphertext))
                        line += f" private request={request_id}"
                    except (DecryptionError, DecodeError):
                        line += " private (decryption failed)"
            else:
                line += f" public {len(envelope.info)} bytes"
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consortium-bridge",
                                     description="Deterministic public/private chain interface simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log protocol events to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    shipped = ", ".join(builtin_scenarios())

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("scenario", help=f"scenario file or shipped name ({shipped})")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--format", choices=("table", "jsonl", "both"), default="table")
    run.add_argument("--output", help="also write the JSONL report to this file")
    run.add_argument("--dump-chain", help="write the finalized public chain (JSONL) here")
    run.add_argument("--dump-keys", help="write member and consumer keys (JSON) here")
    run.add_argument("--trace", help="write the network event trace here")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    sweep.add_argument("scenario")
    sweep.add_argument("--param", required=True, help="dotted key, e.g. tree_arity or delay.base_latency_ms")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--format", choices=("table", "jsonl"), default="table")
    sweep.set_defaults(func=cmd_sweep)

    compare = sub.add_parser("compare", help="diff outcomes of two runs (scenario files or JSONL reports)")
    compare.add_argument("a")
    compare.add_argument("b")
    compare.add_argument("--seed", type=int)
    compare.set_defaults(func=cmd_compare)

    verify = sub.add_parser("verify-client", help="check posted envelopes as a consumer would")
    verify.add_argument("chain_dump")
    verify.add_argument("keys")
    verify.set_defaults(func=cmd_verify_client)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ArgumentError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
