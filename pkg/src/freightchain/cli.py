"""Command-line entry point.

Exit codes: 0 ok, 2 input error, 3 invariant violation, 4 corrupt ledger
file, 5 validation divergence (audit findings, or replicas that disagree).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, bench
from .consensus import trace_lines
from .identity import (
    ED25519,
    X25519,
    CertificateAuthority,
    IdentityError,
    Role,
    RevocationList,
    TrustStore,
    generate_keypair,
    read_certificate,
    read_crl,
    read_keypair,
    write_certificate,
    write_crl,
    write_keypair,
)
from .ledger import CorruptLedger, load
from .model import AgencyId, ModelError, OperatorId, format_timestamp, parse_container_id
from .scenario import (
    ScenarioValidationError,
    bundled_scenario_text,
    bundled_scenarios,
    derive_seed,
    load_scenario,
    reconstruct_route,
    run_scenario,
)
from .validation import chain_invariant_findings, replay_ledger

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_CORRUPT = 4
EXIT_DIVERGENCE = 5

OUT_ENV = "FREIGHTCHAIN_OUT"


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "freightchain-out")


def _cert_name(cert) -> str:
    kind = "agency" if isinstance(cert.subject, AgencyId) else "operator"
    return f"{kind}-{cert.subject.value}.crt"


def _file_safe(ident: str) -> bool:
    return ident not in (".", "..") and not any(ch in ident for ch in "/\\\0")


def _fail(msg: str, code: int = EXIT_INPUT) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _emit(args, records: list[dict], table: str) -> None:
    if args.format == "json":
        for rec in records:
            print(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    else:
        sys.stdout.write(table)


# --------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    out = _out_dir(args)
    try:
        agency = AgencyId(args.agency)
        operators = [OperatorId(o) for o in args.operator]
    except ModelError as exc:
        return _fail(str(exc))
    bad = [x.value for x in [agency, *operators] if not _file_safe(x.value)]
    if bad:
        return _fail(f"ids are used as file names: {', '.join(map(repr, bad))}")
    seed = args.seed
    secret = lambda *p: derive_seed(seed, *p) if seed is not None else None  # noqa: E731
    (out / "keys").mkdir(parents=True, exist_ok=True)
    (out / "certs").mkdir(parents=True, exist_ok=True)
    (out / "crl").mkdir(parents=True, exist_ok=True)
    ca = CertificateAuthority(agency, generate_keypair(ED25519, secret("agency", agency.value)))
    write_keypair(out / "keys" / f"{agency.value}.key", ca.keys, f"agency:{agency.value}")
    write_keypair(out / "keys" / f"{agency.value}.enc.key",
                  generate_keypair(X25519, secret("enc", agency.value)), f"agency:{agency.value}")
    write_certificate(out / "certs" / _cert_name(ca.self_certificate), ca.self_certificate)
    for op in operators:
        keys = generate_keypair(ED25519, secret("operator", op.value))
        write_keypair(out / "keys" / f"{op.value}.key", keys, f"operator:{op.value}")
        cert = ca.issue(op, Role.OPERATOR, keys.public_key)
        write_certificate(out / "certs" / _cert_name(cert), cert)
    write_crl(out / "crl" / f"{agency.value}.crl", RevocationList(agency))
    print(f"wrote keys and certificates for {agency.value} and {len(operators)} operator(s) "
          f"to {out}")
    return EXIT_OK


def _scenario_source(ref: str):
    path = Path(ref)
    if path.is_file():
        return path
    if ref in bundled_scenarios():
        return bundled_scenario_text(ref)
    raise ScenarioValidationError(f"{ref}: no such file or bundled scenario "
                                  f"(bundled: {', '.join(bundled_scenarios())})")


def cmd_run(args) -> int:
    from dataclasses import replace

    try:
        scenario = load_scenario(_scenario_source(args.scenario))
    except ScenarioValidationError as exc:
        return _fail(str(exc))
    bad = [x.id for x in scenario.agencies + scenario.operators if not _file_safe(x.id)]
    if bad:
        return _fail(f"ids are used as file names: {', '.join(map(repr, bad))}")
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed,
                           network=replace(scenario.network, seed=args.seed))
    result = run_scenario(scenario)
    out = _out_dir(args)
    for sub in ("ledgers", "certs", "crl", "keys"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for node in result.world.nodes.values():
        node.ledger.persist(out / "ledgers" / f"{node.agency.value}.jsonl")
    (out / "trace.jsonl").write_text(trace_lines(result.trace), encoding="utf-8")
    report = result.report
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    world = result.world
    for cert in world.certificates:
        write_certificate(out / "certs" / _cert_name(cert), cert)
    for agency, ca in world.cas.items():
        write_crl(out / "crl" / f"{agency.value}.crl", ca.crl)
        write_keypair(out / "keys" / f"{agency.value}.enc.key", world.enc_keys[agency],
                      f"agency:{agency.value}")
    if args.format == "json":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(report.to_table())
    if report.invariant_violations:
        return EXIT_INVARIANT
    if not report.converged:
        return EXIT_DIVERGENCE
    return EXIT_OK


def _trust_from(certs: str | None, crls: list[str]) -> TrustStore:
    certificates = []
    if certs:
        root = Path(certs)
        files = sorted(root.glob("*.crt")) if root.is_dir() else [root]
        certificates = [read_certificate(p) for p in files]
    crl_files = []
    for ref in crls:
        p = Path(ref)
        crl_files += sorted(p.glob("*.crl")) if p.is_dir() else [p]
    return TrustStore(certificates, crls=[read_crl(p) for p in crl_files])


def cmd_audit(args) -> int:
    try:
        ledger = load(args.ledger)
    except CorruptLedger as exc:
        print(f"corrupt ledger: {exc}")
        return EXIT_CORRUPT
    except OSError as exc:
        return _fail(str(exc))
    certs = args.certs
    crls = list(args.crl or [])
    base = Path(args.ledger).resolve().parent.parent
    if certs is None and (base / "certs").is_dir():
        certs = str(base / "certs")
    if not crls and (base / "crl").is_dir():
        crls = [str(base / "crl")]
    try:
        trust = _trust_from(certs, crls)
    except (IdentityError, OSError, ModelError) as exc:
        return _fail(f"cannot load certificates: {exc}")
    findings = chain_invariant_findings(ledger) + replay_ledger(ledger, trust)
    findings.sort(key=lambda f: (f.height or 0, f.message))
    records = [{"height": f.height, "finding": f.message} for f in findings]
    table = "".join(f"{f}\n" for f in findings)
    table += (f"{len(findings)} finding(s) in {ledger.height} block(s)\n" if findings
              else f"ok: {ledger.height} block(s), hash chain intact, replay matches\n")
    _emit(args, records, table)
    return EXIT_DIVERGENCE if findings else EXIT_OK


def cmd_history(args) -> int:
    try:
        container = parse_container_id(args.container)
    except ModelError as exc:
        return _fail(f"bad container id: {exc}")
    try:
        ledger = load(args.ledger)
    except CorruptLedger as exc:
        print(f"corrupt ledger: {exc}")
        return EXIT_CORRUPT
    except OSError as exc:
        return _fail(str(exc))
    agency, keys = None, None
    if args.key:
        try:
            keys, owner = read_keypair(args.key)
        except (IdentityError, OSError) as exc:
            return _fail(f"cannot read key: {exc}")
        name = args.agency or owner.partition(":")[2] or owner
        agency = AgencyId(name)
    route = reconstruct_route(agency, container, ledger, keys)
    records, rows = [], []
    for tx in route.legs:
        c = tx.claims[-1]
        rec = {"height": tx.accepted_at, "kind": tx.kind.value, "from": str(tx.from_),
               "to": str(tx.to), "time": format_timestamp(tx.time),
               "location": ",".join(c.location.as_text()),
               "signers": [str(x.signer) for x in tx.claims]}
        records.append(rec)
        rows.append(f"{rec['height']:>6}  {rec['kind']:<8}  {rec['from']:>10} -> {rec['to']:<10}"
                    f"  {rec['time']}  {rec['location']}  signed by {', '.join(rec['signers'])}")
    for p in route.packages:
        rec = {"kind": "PACKAGE", "package_id": p.package_id, "action": p.action.value,
               "sender": p.sender, "receiver": p.receiver, "contents": p.contents,
               "weight_kg": str(p.weight_kg), "time": format_timestamp(p.time)}
        records.append(rec)
        rows.append(f"        PACKAGE   {p.action.value:<6} {p.package_id}  {p.sender} -> "
                    f"{p.receiver}  {p.contents} ({p.weight_kg} kg)  {rec['time']}")
    table = f"{container}: {len(route.legs)} custody record(s)\n" + "".join(r + "\n" for r in rows)
    if route.opaque:
        table += f"{len(route.opaque)} package claim(s) for other agencies not readable\n"
    _emit(args, records, table)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.count < 1:
        return _fail("--count must be at least 1")
    workload = bench.prepare(args.count, seed=args.seed or 0)
    result = bench.run(workload, args.threads)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result.ledger.persist(out / "bench-ledger.jsonl")
    if args.format == "json":
        print(json.dumps({"claims": result.claims, "transactions": result.transactions,
                          "seconds": round(result.seconds, 6), "threads": result.threads,
                          "claims_per_second": round(result.rate, 1)}, sort_keys=True))
    else:
        print(result.summary())
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freightchain",
        description="Customs-validated container custody ledger: simulate, inspect, audit.",
        epilog=f"Output directory defaults to ${OUT_ENV} or ./freightchain-out.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True):
        p.add_argument("--format", choices=("table", "json"), default="table",
                       help="human-readable table or one JSON record per line")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the random seed")
        if out:
            p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV})")

    p = sub.add_parser("keygen", help="create an agency CA key, operator keys and certificates")
    p.add_argument("--agency", required=True)
    p.add_argument("--operator", action="append", default=[], help="repeatable")
    common(p)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("run", help="run a scenario file (or bundled scenario name)")
    p.add_argument("scenario")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="replay a ledger file from genesis and check invariants")
    p.add_argument("ledger")
    p.add_argument("--certs", help="certificate file or directory (default: ../certs)")
    p.add_argument("--crl", action="append", help="CRL file or directory, repeatable")
    common(p, seed=False, out=False)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("history", help="print a container's custody chain")
    p.add_argument("ledger")
    p.add_argument("container")
    p.add_argument("--key", help="agency encryption key file; decrypts its package claims")
    p.add_argument("--agency", help="agency id, if the key file does not name it")
    common(p, seed=False, out=False)
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("bench", help="single-node validate-and-commit throughput")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
