"""Trace-level checks: the establishment call flow, PFR predicates and invariants.

Every check works on trace records alone (plus the scenario document for
context such as which consumers are third parties), so it can be run on a
trace file written by an earlier run.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .domain import TaskState, transition_allowed

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"

CALLFLOW_STEPS = (
    "SensingServiceRequest",
    "SensingServiceRequestResponse",
    "ConfigureTask",
    "ActivateSensing",
    "SensingDataReport",
    "ResultExposure",
)
EXPOSURE_OPS = ("SensingResultNotify", "SensingResultAvailable")
BOTH = frozenset({"SIX_G", "WIFI"})


@dataclass(frozen=True)
class Verdict:
    verdict: str
    reason: str = ""
    record: int | None = None

    def to_doc(self) -> dict:
        return {"verdict": self.verdict, "reason": self.reason, "record": self.record}

    @property
    def ok(self) -> bool:
        return self.verdict != FAIL


def _seq(rec: Mapping | None) -> int | None:
    return None if rec is None else rec["seq"]


def _stid(rec: Mapping) -> str | None:
    return rec["summary"].get("stid")


def _first(records: Iterable[Mapping], pred) -> Mapping | None:
    for r in records:
        if pred(r):
            return r
    return None


# --------------------------------------------------------------------------- call flow


def check_callflow(records: Sequence[Mapping], stid: str) -> Verdict:
    """The first record of each establishment step must appear in order."""
    stid = str(stid)
    resp = _first(records, lambda r: r["operation"] == "SensingServiceRequestResponse" and _stid(r) == stid)
    if resp is None:
        last = records[-1] if records else None
        return Verdict(FAIL, f"no STID response for {stid}", _seq(last))
    req = _first(records, lambda r: r["seq"] == resp["correlation_id"])
    if req is None or req["operation"] != "SensingServiceRequest":
        return Verdict(FAIL, "STID response does not answer a SensingServiceRequest", resp["seq"])
    consumer = req["summary"].get("consumer")

    def of(op: str):
        return lambda r: r["operation"] == op and _stid(r) == stid

    firsts = [
        req,
        resp,
        _first(records, of("ConfigureTask")),
        _first(records, of("ActivateSensing")),
        _first(records, of("SensingDataReport")),
        _first(records, lambda r: r["operation"] in EXPOSURE_OPS and _stid(r) == stid and r["target"] == consumer),
    ]
    for i in range(1, len(firsts)):
        if firsts[i] is None:
            return Verdict(FAIL, f"missing {CALLFLOW_STEPS[i]} after {CALLFLOW_STEPS[i - 1]}", _seq(firsts[i - 1]))
        if firsts[i]["seq"] < firsts[i - 1]["seq"]:
            return Verdict(FAIL, f"{CALLFLOW_STEPS[i]} precedes {CALLFLOW_STEPS[i - 1]}", firsts[i]["seq"])
    return Verdict(PASS, "request, STID, configure, activate, data, exposure in order", firsts[-1]["seq"])


def task_stids(records: Sequence[Mapping]) -> list[str]:
    """STIDs issued in the trace, in issue order."""
    out: list[str] = []
    for r in records:
        if r["operation"] == "SensingServiceRequestResponse" and "stid" in r["summary"] and r["summary"]["stid"] not in out:
            out.append(r["summary"]["stid"])
    return out


# --------------------------------------------------------------------------- trace index


class TraceIndex:
    """Lookups shared by the PFR predicates."""

    def __init__(self, records: Sequence[Mapping]) -> None:
        self.records = list(records)
        self.by_seq = {r["seq"]: r for r in self.records}
        self.responses: dict[int, Mapping] = {}
        for r in self.records:
            if r["operation"].endswith("Response") and r["correlation_id"] is not None:
                self.responses.setdefault(r["correlation_id"], r)
        self.registrations: dict[str, Mapping] = {}
        for r in self.records:
            if r["operation"] == "RegisterSensingCapability" and "entity_id" in r["summary"]:
                self.registrations.setdefault(r["summary"]["entity_id"], r)

    def ops(self, *names: str) -> list[Mapping]:
        return [r for r in self.records if r["operation"] in names]

    def accepted(self, r: Mapping) -> bool:
        resp = self.responses.get(r["seq"])
        return resp is not None and "error" not in resp["summary"]

    def kind(self, entity_id: str) -> str | None:
        reg = self.registrations.get(entity_id)
        return None if reg is None else reg["summary"].get("kind")

    def reg_modalities(self, entity_id: str) -> set[str]:
        reg = self.registrations.get(entity_id)
        return set() if reg is None else set(reg["summary"].get("modalities", ()))

    def device_activations(self) -> list[Mapping]:
        """Accepted activations addressed to the sensing entity itself (not an AF relay)."""
        return [
            r for r in self.ops("ActivateSensing")
            if r["target"] == r["summary"].get("entity_id") and self.accepted(r)
        ]


def _verdict(found: Mapping | None, ok_reason: str, fail_reason: str, fallback: Mapping | None = None) -> Verdict:
    if found is not None:
        return Verdict(PASS, ok_reason, found["seq"])
    return Verdict(FAIL, fail_reason, _seq(fallback))


def _last(ix: TraceIndex) -> Mapping | None:
    return ix.records[-1] if ix.records else None


# --------------------------------------------------------------------------- predicates


def pfr_collect_ue(ix: TraceIndex, ctx: Mapping) -> Verdict:
    regs = [
        r for r in ix.ops("RegisterSensingCapability")
        if r["summary"].get("kind") == "UE" and BOTH <= set(r["summary"].get("modalities", ())) and ix.accepted(r)
    ]
    return _verdict(regs[0] if regs else None, "UE with 6G and Wi-Fi registered its capability",
                    "no UE registered both 6G and Wi-Fi capability", _last(ix))


def pfr_activate_ue_wifi(ix: TraceIndex, ctx: Mapping) -> Verdict:
    hit = _first(ix.device_activations(), lambda r: ix.kind(r["target"]) == "UE" and r["summary"].get("modality") == "WIFI"
                 and "SIX_G" in ix.reg_modalities(r["target"]))
    return _verdict(hit, "6G UE activated on its Wi-Fi interface", "no 6G UE was activated over Wi-Fi", _last(ix))


def pfr_decide(ix: TraceIndex, ctx: Mapping) -> Verdict:
    evaluated = {_stid(r) for r in ix.ops("KpiEvaluation") if r["summary"].get("verdict") in (PASS, FAIL)}
    for sel in ix.ops("StgSelected"):
        if sel["summary"].get("modalities") and _stid(sel) in evaluated:
            return Verdict(PASS, "modality chosen at setup and re-assessed against KPI targets", sel["seq"])
    sel = _first(ix.records, lambda r: r["operation"] == "StgSelected")
    return Verdict(FAIL, "no STG selection followed by KPI assessment", _seq(sel or _last(ix)))


def pfr_switch(ix: TraceIndex, ctx: Mapping) -> Verdict:
    data_seen: dict[str, int] = {}
    for r in ix.records:
        if r["operation"] == "SensingDataReport":
            data_seen.setdefault(_stid(r), r["seq"])
    acts = ix.device_activations()
    for d in ix.ops("SwitchDecision"):
        s = _stid(d)
        if d["summary"].get("decision") not in ("SWITCH_TO_NON6G", "AUGMENT_WITH_NON6G"):
            continue
        if s not in data_seen or data_seen[s] > d["seq"]:
            continue
        if any(a["seq"] > d["seq"] and _stid(a) == s and a["summary"].get("modality") == "WIFI" for a in acts):
            return Verdict(PASS, "running task moved to or augmented with Wi-Fi sensing", d["seq"])
    first = _first(ix.records, lambda r: r["operation"] == "SwitchDecision")
    return Verdict(FAIL, "no switch to non-6G during an active task", _seq(first or _last(ix)))


def pfr_fuse(ix: TraceIndex, ctx: Mapping) -> Verdict:
    hit = _first(ix.records, lambda r: r["operation"] == "SensingResultAvailable" and r["target"] == "*"
                 and BOTH <= set(r["summary"].get("merged_modalities", ())))
    return _verdict(hit, "published window fused 6G and Wi-Fi detections",
                    "no published window merged 6G with Wi-Fi detections", _last(ix))


def pfr_expose(ix: TraceIndex, ctx: Mapping) -> Verdict:
    third = set(ctx.get("third_party", ()))
    if not third:
        return Verdict(SKIPPED, "scenario has no third-party consumer")
    notes = [r for r in ix.ops("SensingResultNotify") if r["target"] in third]
    charges = [r for r in ix.ops("ChargingEvent") if r["target"] in third]
    hit = _first(notes, lambda r: r["summary"].get("n_results", 0) > 0)
    if hit is None:
        return Verdict(FAIL, "no results delivered to a third-party consumer", _seq(notes[-1] if notes else _last(ix)))
    if not charges:
        return Verdict(FAIL, "results delivered without charging records", hit["seq"])
    bad = reconcile(ix.records)
    for stid, row in bad.items():
        if row["charged"] != row["notified"]:
            cite = _first(reversed(charges), lambda r: _stid(r) == stid)
            return Verdict(FAIL, f"ledger {row['charged']} != delivered {row['notified']} for {stid}", _seq(cite))
    return Verdict(PASS, "results delivered to third party and charged per window", hit["seq"])


def pfr_control_kinds(ix: TraceIndex, ctx: Mapping) -> Verdict:
    acts = ix.device_activations()
    by_kind: dict[str, Mapping] = {}
    for a in acts:
        by_kind.setdefault(ix.kind(a["target"]) or "?", a)
    want = ("AN", "TNAN", "UE")
    missing = [k for k in want if k not in by_kind]
    if missing:
        return Verdict(FAIL, "no activation of " + ",".join(missing), _seq(acts[-1] if acts else _last(ix)))
    return Verdict(PASS, "base station, CPE and UE all activated", max(by_kind[k]["seq"] for k in want))


def pfr_control_modalities(ix: TraceIndex, ctx: Mapping) -> Verdict:
    acts = ix.device_activations()
    by_mod: dict[str, Mapping] = {}
    for a in acts:
        by_mod.setdefault(a["summary"].get("modality"), a)
    if BOTH <= set(by_mod):
        return Verdict(PASS, "6G and non-6G entities activated", max(by_mod[m]["seq"] for m in BOTH))
    return Verdict(FAIL, "activations do not cover both 6G and Wi-Fi", _seq(acts[-1] if acts else _last(ix)))


def pfr_authorize(ix: TraceIndex, ctx: Mapping) -> Verdict:
    regs = [r for r in ix.ops("RegisterSensingCapability") if r["summary"].get("kind") == "UE"]
    ok = [r for r in regs if ix.accepted(r) and ix.responses[r["seq"]]["summary"].get("authorized") is True]
    if not ok:
        return Verdict(FAIL, "no UE was authorized", _seq(regs[-1] if regs else _last(ix)))
    denied = {
        r["summary"]["entity_id"] for r in regs
        if ix.accepted(r) and ix.responses[r["seq"]]["summary"].get("authorized") is False
    }
    leak = _first(ix.ops("ActivateSensing"), lambda r: r["summary"].get("entity_id") in denied)
    if leak is not None:
        return Verdict(FAIL, f"unauthorized UE {leak['summary']['entity_id']} activated", leak["seq"])
    why = f"UE authorization enforced ({len(denied)} denied, never activated)" if denied else "UEs authorized"
    return Verdict(PASS, why, ix.responses[ok[0]["seq"]]["seq"])


def pfr_collect_kinds(ix: TraceIndex, ctx: Mapping) -> Verdict:
    regs = [r for r in ix.ops("RegisterSensingCapability") if ix.accepted(r)]
    kinds = {r["summary"].get("kind") for r in regs}
    mods = {m for r in regs for m in r["summary"].get("modalities", ())}
    if {"AN", "TNAN", "UE"} <= kinds and BOTH <= mods:
        return Verdict(PASS, "BS, CPE and UE capabilities collected across 6G and Wi-Fi", regs[-1]["seq"])
    return Verdict(FAIL, "capability collection misses a kind or modality", _seq(regs[-1] if regs else _last(ix)))


def pfr_decide_members(ix: TraceIndex, ctx: Mapping) -> Verdict:
    base = pfr_decide(ix, ctx)
    if not base.ok:
        return base
    latest: dict[str, set[str]] = {}
    for r in ix.records:
        if r["operation"] == "StgSelected":
            latest[_stid(r)] = set(r["summary"].get("modalities", ()))
        elif r["operation"] == "SwitchDecision":
            latest.pop(_stid(r), None)
        elif r["operation"] == "ActivateSensing" and r["target"] == r["summary"].get("entity_id"):
            mods = latest.get(_stid(r))
            if mods is not None and r["summary"].get("modality") not in mods:
                return Verdict(FAIL, "activation modality not in the selected STG", r["seq"])
    return base


def pfr_dt_collect(ix: TraceIndex, ctx: Mapping) -> Verdict:
    dts = set(ctx.get("digital_twins", ()))
    if not dts:
        return Verdict(SKIPPED, "scenario has no digital twin")
    seen: set[str] = set()
    for r in ix.records:
        if r["operation"] in EXPOSURE_OPS and r["target"] in dts:
            seen |= set(r["summary"].get("modalities", ()))
            if BOTH <= seen:
                return Verdict(PASS, "digital twin received 6G and Wi-Fi sensing results", r["seq"])
    return Verdict(FAIL, "digital twin did not receive both modalities", _seq(_last(ix)))


def pfr_ris(ix: TraceIndex, ctx: Mapping) -> Verdict:
    views = {r["seq"]: r for r in ix.ops("AggregatedView")}
    cmds = ix.ops("ReconfigureRis")
    for c in cmds:
        trig = c["summary"].get("trigger_seq")
        v = views.get(trig)
        if v is not None and v["seq"] < c["seq"]:
            return Verdict(PASS, "RIS reconfigured in response to an aggregated view", c["seq"])
    if cmds:
        return Verdict(FAIL, "RIS command not traceable to an earlier aggregated view", cmds[0]["seq"])
    last_view = max(views.values(), key=lambda r: r["seq"]) if views else _last(ix)
    return Verdict(FAIL, "no RIS reconfiguration", _seq(last_view))


PFR_PREDICATES = {
    "PFR1-1": pfr_collect_ue,
    "PFR1-2": pfr_activate_ue_wifi,
    "PFR1-3": pfr_decide,
    "PFR1-4": pfr_switch,
    "PFR1-5": pfr_fuse,
    "PFR1-6": pfr_expose,
    "PFR2-1": pfr_control_kinds,
    "PFR2-2": pfr_authorize,
    "PFR2-3": pfr_collect_kinds,
    "PFR2-4": pfr_decide_members,
    "PFR2-5": pfr_fuse,
    "PFR2-6": pfr_expose,
    "PFR3-1": pfr_control_modalities,
    "PFR3-2": pfr_dt_collect,
    "PFR3-3": pfr_fuse,
    "PFR3-4": pfr_ris,
}


def scenario_context(doc: Mapping[str, Any]) -> dict:
    consumers = doc.get("consumers", ())
    return {
        "third_party": sorted(c["consumer_id"] for c in consumers if c["trust"] == "THIRD_PARTY"),
        "digital_twins": sorted(c["consumer_id"] for c in consumers if "digital_twin" in c),
    }


def check_pfrs(records: Sequence[Mapping], doc: Mapping[str, Any], ids: Iterable[str] | None = None) -> dict[str, Verdict]:
    """Evaluate the PFRs the scenario lists (or ``ids``); unknown ids are SKIPPED."""
    wanted = list(ids) if ids is not None else list(doc.get("expectations", ()))
    ix = TraceIndex(records)
    ctx = scenario_context(doc)
    out: dict[str, Verdict] = {}
    for pid in wanted:
        pred = PFR_PREDICATES.get(pid)
        out[pid] = pred(ix, ctx) if pred else Verdict(SKIPPED, "no predicate for this id")
    return out


# --------------------------------------------------------------------------- ledger


def reconcile(records: Sequence[Mapping]) -> dict[str, dict]:
    """Per STID: results charged, results notified to consumers, results published to the SEF."""
    rows: dict[str, dict] = defaultdict(lambda: {"charged": 0, "notified": 0, "to_sef": 0})
    sefs = {r["source"] for r in records if r["operation"] == "ChargingEvent"}
    sefs |= {r["source"] for r in records if r["operation"] == "SensingResultNotify"}
    for r in records:
        op, s = r["operation"], r["summary"]
        if op == "ChargingEvent":
            rows[s["stid"]]["charged"] += int(s.get("results_delivered", 0))
        elif op == "SensingResultNotify":
            rows[s["stid"]]["notified"] += int(s.get("n_results", 0))
        elif op == "SensingResultAvailable" and r["target"] in sefs:
            rows[s["stid"]]["to_sef"] += int(s.get("n_results", 0))
    return dict(sorted(rows.items()))


# --------------------------------------------------------------------------- invariants


def check_state_machine(records: Sequence[Mapping]) -> Verdict:
    state: dict[str, TaskState | None] = {}
    for r in records:
        if r["operation"] != "TaskStateChanged":
            continue
        s = r["summary"]
        cur = state.get(s["stid"])
        dst = TaskState(s["to"])
        src = None if s.get("from") is None else TaskState(s["from"])
        if src != cur:
            return Verdict(FAIL, f"transition from {src} but task was {cur}", r["seq"])
        if cur is None:
            if dst is not TaskState.REQUESTED:
                return Verdict(FAIL, "task did not start in REQUESTED", r["seq"])
        elif not transition_allowed(cur, dst):
            return Verdict(FAIL, f"illegal transition {cur.value}->{dst.value}", r["seq"])
        state[s["stid"]] = dst
    return Verdict(PASS, f"{len(state)} task lifecycles legal")


def check_activation_before_data(records: Sequence[Mapping]) -> Verdict:
    active: set[tuple[str, str]] = set()
    for r in records:
        op = r["operation"]
        if op == "ActivateSensing" and r["target"] == r["summary"].get("entity_id"):
            active.add((r["target"], _stid(r)))
        elif op == "SensingDataReport" and (r["source"], _stid(r)) not in active:
            return Verdict(FAIL, f"data from {r['source']} before activation", r["seq"])
    return Verdict(PASS, "every data report preceded by its activation")


def check_request_response(records: Sequence[Mapping]) -> Verdict:
    by_seq = {r["seq"]: r for r in records}
    answered: set[int] = set()
    for r in records:
        op = r["operation"]
        if not op.endswith("Response") or r["correlation_id"] is None:
            continue
        req = by_seq.get(r["correlation_id"])
        if req is None or req["operation"] + "Response" != op:
            return Verdict(FAIL, "response without matching request", r["seq"])
        if req["seq"] in answered:
            return Verdict(FAIL, "request answered twice", r["seq"])
        if (req["source"], req["target"]) != (r["target"], r["source"]):
            return Verdict(FAIL, "response endpoints do not mirror request", r["seq"])
        answered.add(req["seq"])
    return Verdict(PASS, f"{len(answered)} requests each answered once")


def check_isolation(records: Sequence[Mapping], membership: Mapping[str, str], shared: Iterable[str] = ()) -> Verdict:
    """No record may connect NFs of two different MNOs.

    ``membership`` maps nf id to MNO name; ``shared`` lists ids present on
    several MNO buses (multi-MNO consumers), which may talk to any of them.
    """
    shared = set(shared)
    for r in records:
        a, b = r["source"], r["target"]
        if a in shared or b in shared:
            continue
        ma, mb = membership.get(a), membership.get(b)
        if ma is not None and mb is not None and ma != mb:
            return Verdict(FAIL, f"{a} ({ma}) talked to {b} ({mb})", r["seq"])
    return Verdict(PASS, "no cross-MNO records")


def check_stid_lifetime(records: Sequence[Mapping]) -> Verdict:
    """No data, publication or charge for a STID after it was terminated."""
    dead: set[str] = set()
    for r in records:
        s = r["summary"]
        if r["operation"] == "TaskStateChanged" and s.get("to") == TaskState.TERMINATED.value:
            dead.add(s["stid"])
        elif r["operation"] in ("SensingDataReport", "ConfigureTask", "ActivateSensing") and s.get("stid") in dead:
            return Verdict(FAIL, f"{r['operation']} after termination", r["seq"])
    return Verdict(PASS, "no activity on terminated STIDs")


def check_invariants(records: Sequence[Mapping], membership: Mapping[str, str] | None = None,
                     shared: Iterable[str] = ()) -> dict[str, Verdict]:
    out = {
        "state_machine": check_state_machine(records),
        "activation_before_data": check_activation_before_data(records),
        "request_response": check_request_response(records),
        "stid_lifetime": check_stid_lifetime(records),
    }
    if membership is not None:
        out["mno_isolation"] = check_isolation(records, membership, shared)
    return out


def membership(sim) -> tuple[dict[str, str], set[str]]:
    """NF id to MNO map of a built simulation, plus ids shared across MNOs."""
    seen: dict[str, set[str]] = defaultdict(set)
    for name, inst in sim.mnos.items():
        for nf_id in inst.nf_ids():
            seen[nf_id].add(name)
    shared = {k for k, v in seen.items() if len(v) > 1}
    return {k: next(iter(v)) for k, v in seen.items() if len(v) == 1}, shared


def check_simulation(sim, which: Iterable[str] = ("callflow", "pfrs", "invariants")) -> dict[str, dict[str, Verdict]]:
    """Run the selected check groups over a finished simulation."""
    records = sim.trace.records
    which = set(which)
    out: dict[str, dict[str, Verdict]] = {}
    if "callflow" in which:
        out["callflow"] = {stid: check_callflow(records, stid) for stid in task_stids(records)}
    if "pfrs" in which:
        out["pfrs"] = check_pfrs(records, sim.scenario.doc)
    if "invariants" in which:
        members, shared = membership(sim)
        out["invariants"] = check_invariants(records, members, shared)
    return out
