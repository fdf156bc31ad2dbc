"""Command line: ``isacsim run | validate | framedump | list``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import conformance, metrics
from .errors import IsacError
from .scenario import bundled_scenarios, load_scenario, make_report, build, execute
from .sensing_plane import PayloadType, decode, split_stream

CHECK_GROUPS = ("callflow", "pfrs", "invariants")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isacsim", description="ISAC service-based architecture simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="simulated seconds (overrides the scenario)")
    r.add_argument("--bus-delay-ms", type=float)
    r.add_argument("--trace", type=Path, help="write the message trace as JSON lines")
    r.add_argument("--report", type=Path, help="write the run report as JSON")
    r.add_argument("--kpis", type=Path, help="write per-window KPIs as CSV")
    r.add_argument("--ledger", type=Path, help="write the charging ledger as JSON lines")
    r.add_argument("--frames", type=Path, help="write every sensing-plane frame sent")
    r.add_argument("--check", default="", help="comma list of: " + ",".join(CHECK_GROUPS))

    v = sub.add_parser("validate", help="validate a scenario document")
    v.add_argument("scenario")

    f = sub.add_parser("framedump", help="decode a frame capture")
    f.add_argument("path", type=Path)
    f.add_argument("--limit", type=int, default=0)

    sub.add_parser("list", help="list bundled scenarios")
    return p


def _checks(text: str) -> list[str]:
    groups = [c.strip() for c in text.split(",") if c.strip()]
    bad = [g for g in groups if g not in CHECK_GROUPS]
    if bad:
        raise IsacError("VALIDATION", "unknown check " + ",".join(bad))
    return groups


def cmd_run(args) -> int:
    checks = _checks(args.check)
    scenario = load_scenario(args.scenario)
    sim = build(scenario, args.seed, args.duration, args.trace, args.bus_delay_ms, capture_frames=args.frames is not None)
    execute(sim)
    report = make_report(sim)
    if checks:
        verdicts = conformance.check_simulation(sim, checks)
        report.verdicts = {g: {k: v.to_doc() for k, v in group.items()} for g, group in verdicts.items()}
    if args.report:
        metrics.write_report(report, args.report)
    if args.kpis:
        metrics.write_kpi_csv(report, args.kpis)
    if args.ledger:
        with open(args.ledger, "w", encoding="utf-8") as fh:
            for row in report.ledger:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    if args.frames:
        args.frames.write_bytes(b"".join(sim.capture or ()))

    print(f"{scenario.name} seed={sim.seed} tasks={len(report.tasks)} records={len(sim.trace)}")
    for stid, t in report.tasks.items():
        decisions = ",".join(d["decision"] for d in t["decisions"]) or "-"
        print(f"  {t['mno']} {stid} {t['consumer']} {t['state']} windows={t['windows']} "
              f"results={t['results_published']} decisions={decisions}")
    for group, items in report.verdicts.items():
        for key, v in items.items():
            cite = "" if v["record"] is None else f" @{v['record']}"
            print(f"  {group} {key}: {v['verdict']}{cite} {v['reason']}")
    return 0 if report.all_pass() else 1


def cmd_validate(args) -> int:
    doc = load_scenario(args.scenario)
    print(f"{doc.name}: OK ({len(doc.mnos)} MNOs, {len(doc.tasks)} tasks)")
    return 0


def cmd_framedump(args) -> int:
    frames = split_stream(args.path.read_bytes())
    for i, raw in enumerate(frames):
        if args.limit and i >= args.limit:
            break
        fr = decode(raw)
        n = len((fr.payload or {}).get("detections", ()))
        print(f"{i} {PayloadType(fr.payload_type).name} qos={fr.qos_class} stid={fr.stid} seq={fr.seq} "
              f"t={fr.sim_timestamp_us} bytes={len(raw)} detections={n}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "framedump":
            return cmd_framedump(args)
        for name in bundled_scenarios():
            print(name)
        return 0
    except IsacError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
