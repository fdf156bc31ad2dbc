"""Scenario documents: schema, loading, wiring MNO instances and running them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .bus import DelayModel, NfKind, NfProfile, Scheduler, ServiceBus, Trace
from .consumers import ConsumerApp, DigitalTwin, DtConfig, RisStub, TaskRequest
from .domain import (
    KPI_FIELDS,
    KpiMeasured,
    KpiTargets,
    Modality,
    ScheduleWindow,
    SensingCapability,
    StidRegistry,
    TaskState,
    Tssa,
)
from .env import (
    AssistingAf,
    GroundTruthObject,
    LabelChannel,
    SensingDevice,
    SensorModel,
    Wall,
    World,
    register_capabilities,
)
from .errors import IsacError
from .scf import Scf, ScfPolicy
from .sef import ConsumerAccount, Sef
from .sensing_plane import QosPolicy, SensingPlane
from .spf import Spf

# --------------------------------------------------------------------------- schema

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3}
_STR_LIST = {"type": "array", "items": {"type": "string"}}
_TSSA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["polygon"],
    "properties": {
        "polygon": {"type": "array", "items": _POINT},
        "z_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "frame": {"enum": ["ABSOLUTE", "RELATIVE"]},
        "anchor": _POINT,
    },
}
_TARGETS = {"type": "object", "additionalProperties": False, "properties": {k: _NUM for k in KPI_FIELDS}}
_WAYPOINTS = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 2, "maxItems": 2, "prefixItems": [_NUM, _POINT]},
}
_SCHEDULE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["start", "end"],
    "properties": {"start": {"type": "string"}, "end": {"type": "string"}},
}
_ENTITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["entity_id", "kind", "modalities", "roles", "coverage"],
    "properties": {
        "entity_id": {"type": "string", "minLength": 1},
        "kind": {"enum": ["AN", "UE", "TNAN", "N3IWF"]},
        "modalities": {"type": "array", "items": {"enum": ["SIX_G", "WIFI"]}},
        "roles": {"type": "array", "items": {"enum": ["STX", "SRX"]}},
        "coverage": {
            "type": "object",
            "additionalProperties": False,
            "required": ["position", "range_m"],
            "properties": {
                "position": _POINT,
                "range_m": _NUM,
                "sector": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"azimuth_deg": _NUM, "width_deg": _NUM},
                },
            },
        },
        "max_refresh_hz": _NUM,
        "mobility": {"enum": ["FIXED", "MOBILE"]},
        "p_detect": _NUM,
        "sigma_m": _NUM,
        "false_alarm_rate": _NUM,
        "requires_los": {"type": "boolean"},
        "load": _NUM,
        "af_id": {"type": "string"},
        "waypoints": _WAYPOINTS,
        "accept_activation": {"type": "boolean"},
    },
}
_MNO = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "entities"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
        "spfs": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id"],
                "properties": {"id": {"type": "string"}, "load": _NUM},
            },
        },
        "sef": {"type": "boolean"},
        "authorized_ues": _STR_LIST,
        "afs": _STR_LIST,
        "ris": _STR_LIST,
        "entities": {"type": "array", "items": _ENTITY},
        "scf_policy": {"type": "object"},
    },
}
_CONSUMER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["consumer_id", "trust", "mnos"],
    "properties": {
        "consumer_id": {"type": "string", "minLength": 1},
        "trust": {"enum": ["INTERNAL", "THIRD_PARTY"]},
        "token": {"type": "string"},
        "scopes": {"type": "array", "items": {"enum": ["REQUEST_SENSING", "RECEIVE_RESULTS"]}},
        "allowed_area": _TSSA,
        "charging_plan": {"type": "string"},
        "mnos": _STR_LIST,
        "digital_twin": {
            "type": "object",
            "additionalProperties": False,
            "required": ["ris_id", "trigger_zone"],
            "properties": {
                "ris_id": {"type": "string"},
                "trigger_zone": {"type": "array", "items": _POINT},
                "trigger_types": _STR_LIST,
                "cooldown_s": _NUM,
                "gate_m": _NUM,
                "freshness_s": _NUM,
            },
        },
    },
}
_TASK = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task_id", "consumer", "mno", "tssa", "targets"],
    "properties": {
        "task_id": {"type": "string"},
        "consumer": {"type": "string"},
        "mno": {"type": "string"},
        "tssa": _TSSA,
        "targets": _TARGETS,
        "schedule": _SCHEDULE,
        "refresh_rate_hz": _NUM,
        "start_at_s": _NUM,
        "candidates": _STR_LIST,
    },
}
SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "seed", "duration_s", "world", "mnos"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "start_time_of_day": {"type": "string"},
        "bus_delay_ms": {"type": "number", "minimum": 0},
        "qos": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "budget_ms": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                "drop_policy": {"type": "array", "items": {"enum": ["DROP_OLDEST", "DROP_NEWEST"]}, "minItems": 4, "maxItems": 4},
                "capacity": {"type": "integer", "minimum": 1},
            },
        },
        "world": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "objects": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["object_id", "object_type", "waypoints"],
                        "properties": {
                            "object_id": {"type": "string"},
                            "object_type": {"enum": ["HUMAN", "ROBOT", "VEHICLE", "ANIMAL", "UNKNOWN"]},
                            "waypoints": _WAYPOINTS,
                            "size_m": _NUM,
                            "material_tag": {"type": "string"},
                        },
                    },
                },
                "walls": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["segment"],
                        "properties": {
                            "segment": {"type": "array", "items": _POINT, "minItems": 2, "maxItems": 2},
                            "opaque_to": {"type": "array", "items": {"enum": ["SIX_G", "WIFI"]}},
                        },
                    },
                },
            },
        },
        "mnos": {"type": "array", "minItems": 1, "items": _MNO},
        "consumers": {"type": "array", "items": _CONSUMER},
        "tasks": {"type": "array", "items": _TASK},
        "expectations": _STR_LIST,
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


# --------------------------------------------------------------------------- loading


@dataclass(frozen=True)
class ScenarioDoc:
    """A validated scenario document plus where it came from."""

    doc: Mapping[str, Any]
    source: str = "<memory>"

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def duration_s(self) -> float:
        return float(self.doc["duration_s"])

    @property
    def mnos(self) -> list[dict]:
        return list(self.doc["mnos"])

    @property
    def consumers(self) -> list[dict]:
        return list(self.doc.get("consumers", ()))

    @property
    def tasks(self) -> list[dict]:
        return list(self.doc.get("tasks", ()))

    @property
    def expectations(self) -> list[str]:
        return list(self.doc.get("expectations", ()))

    def modalities(self) -> set[str]:
        return {m for mno in self.mnos for e in mno["entities"] for m in e["modalities"]}

    def third_party_consumers(self) -> list[str]:
        return [c["consumer_id"] for c in self.consumers if c["trust"] == "THIRD_PARTY"]


def bundled_scenarios() -> list[str]:
    root = resources.files("isacsim").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    bundled = resources.files("isacsim").joinpath("scenarios", stem + ".json")
    if bundled.is_file():
        return Path(str(bundled))
    raise IsacError("PARSE", f"{name_or_path}: no such file or bundled scenario")


def _loc(path) -> str:
    out = "$"
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def validate_doc(doc: Any, source: str = "<memory>") -> ScenarioDoc:
    """Schema check (PARSE with a location) followed by cross-reference checks (VALIDATION)."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        loc = _loc(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                loc += "." + extra[0]
        raise IsacError("PARSE", f"{loc}: {err.message}")

    mno_names = [m["name"] for m in doc["mnos"]]
    if len(set(mno_names)) != len(mno_names):
        raise IsacError("VALIDATION", "mnos")
    ids: list[str] = []
    for m in doc["mnos"]:
        ids.extend(e["entity_id"] for e in m["entities"])
    if len(set(ids)) != len(ids):
        raise IsacError("VALIDATION", "entities")
    obj_ids = [o["object_id"] for o in doc["world"].get("objects", ())]
    if len(set(obj_ids)) != len(obj_ids):
        raise IsacError("VALIDATION", "objects")

    for m in doc["mnos"]:
        afs = set(m.get("afs", ()))
        for e in m["entities"]:
            if "af_id" in e and e["af_id"] not in afs:
                raise IsacError("VALIDATION", "afs")
            SensingCapability.from_doc(e)
            SensorModel(e["entity_id"], SensingCapability.from_doc(e), e.get("p_detect", 0.9), e.get("sigma_m", 0.3),
                        e.get("false_alarm_rate", 0.0), e.get("requires_los", True))
            if not 0.0 <= e.get("load", 0.0) <= 1.0:
                raise IsacError("VALIDATION", "load")
    for o in doc["world"].get("objects", ()):
        _object(o)
    for w in doc["world"].get("walls", ()):
        _wall(w)

    consumers = {}
    for c in doc.get("consumers", ()):
        if c["consumer_id"] in consumers:
            raise IsacError("VALIDATION", "consumers")
        if not set(c["mnos"]) <= set(mno_names):
            raise IsacError("VALIDATION", "consumers")
        if c["trust"] == "THIRD_PARTY":
            if not c.get("token") or not c.get("scopes"):
                raise IsacError("VALIDATION", "consumers")
            for name in c["mnos"]:
                mno = next(m for m in doc["mnos"] if m["name"] == name)
                if not mno.get("sef", True):
                    raise IsacError("VALIDATION", "sef")
        if "allowed_area" in c:
            Tssa.from_doc(c["allowed_area"])
        consumers[c["consumer_id"]] = c
    task_ids = set()
    for t in doc.get("tasks", ()):
        c = consumers.get(t["consumer"])
        if c is None or t["mno"] not in c["mnos"] or t["task_id"] in task_ids:
            raise IsacError("VALIDATION", "tasks")
        task_ids.add(t["task_id"])
        Tssa.from_doc(t["tssa"])
        KpiTargets.from_doc(t["targets"])
        if "schedule" in t:
            ScheduleWindow.from_doc(t["schedule"])
    if "start_time_of_day" in doc:
        ScheduleWindow._parse(doc["start_time_of_day"])
    return ScenarioDoc(doc, source)


def load_scenario(path: str | Path) -> ScenarioDoc:
    p = resolve_path(path)
    text = p.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IsacError("PARSE", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return validate_doc(doc, str(p))


# --------------------------------------------------------------------------- wiring


def _waypoints(items) -> tuple:
    return tuple((int(round(t * 1e6)), (float(p[0]), float(p[1]))) for t, p in items)


def _object(o: Mapping) -> GroundTruthObject:
    return GroundTruthObject(
        o["object_id"], o["object_type"], _waypoints(o["waypoints"]), float(o.get("size_m", 0.5)), o.get("material_tag"),
    )


def _wall(w: Mapping) -> Wall:
    a, b = w["segment"]
    return Wall(((a[0], a[1]), (b[0], b[1])), frozenset(w.get("opaque_to", ("SIX_G", "WIFI"))))


@dataclass
class MnoInstance:
    name: str
    bus: ServiceBus
    plane: SensingPlane
    scf: Scf
    spfs: list[Spf]
    sef: Sef | None
    devices: dict[str, SensingDevice]
    afs: dict[str, AssistingAf]
    ris: dict[str, RisStub]
    oam_id: str

    def nf_ids(self) -> set[str]:
        return {p.nf_id for p in self.bus.profiles()}


@dataclass
class Simulation:
    scenario: ScenarioDoc
    seed: int
    duration_us: int
    scheduler: Scheduler
    trace: Trace
    world: World
    labels: LabelChannel
    registry: StidRegistry
    mnos: dict[str, MnoInstance]
    consumers: dict[str, ConsumerApp]
    capture: list[bytes] | None = None
    finished: bool = False

    def all_tasks(self) -> list[tuple[str, Any]]:
        out = []
        for name in sorted(self.mnos):
            scf = self.mnos[name].scf
            out.extend((name, scf.tasks[s]) for s in sorted(scf.tasks))
        return out

    def records(self) -> list[dict]:
        return self.trace.records


def build(
    scenario: ScenarioDoc,
    seed: int | None = None,
    duration_s: float | None = None,
    trace_path: str | Path | None = None,
    bus_delay_ms: float | None = None,
    capture_frames: bool = False,
) -> Simulation:
    doc = scenario.doc
    seed = scenario.seed if seed is None else int(seed)
    duration_us = int(round((scenario.duration_s if duration_s is None else duration_s) * 1e6))
    delay_ms = doc.get("bus_delay_ms", 2.0) if bus_delay_ms is None else bus_delay_ms
    delay = DelayModel(int(round(delay_ms * 1000)))
    qos_doc = doc.get("qos", {})
    qos = QosPolicy(
        budget_us=tuple(int(round(b * 1000)) for b in qos_doc.get("budget_ms", (20, 100, 500, 2000))),
        drop_policy=tuple(qos_doc.get("drop_policy", ("DROP_OLDEST",) * 4)),
        capacity=int(qos_doc.get("capacity", 4096)),
    )
    sod = ScheduleWindow._parse(doc["start_time_of_day"]) if "start_time_of_day" in doc else 0

    scheduler = Scheduler()
    trace = Trace(trace_path)
    world = World(
        objects=[_object(o) for o in doc["world"].get("objects", ())],
        walls=[_wall(w) for w in doc["world"].get("walls", ())],
    )
    labels = LabelChannel(world)
    registry = StidRegistry(seed=seed)
    capture: list[bytes] | None = [] if capture_frames else None

    internal_by_mno: dict[str, list[str]] = {}
    for c in scenario.consumers:
        if c["trust"] == "INTERNAL":
            for name in c["mnos"]:
                internal_by_mno.setdefault(name, []).append(c["consumer_id"])

    all_entities = sorted(e["entity_id"] for m in scenario.mnos for e in m["entities"])
    seed_seq = {eid: np.random.SeedSequence([seed & 0xFFFFFFFF, i]) for i, eid in enumerate(all_entities)}

    mnos: dict[str, MnoInstance] = {}
    for m in scenario.mnos:
        name = m["name"]
        bus = ServiceBus(scheduler, trace, delay, name)
        plane = SensingPlane(scheduler, trace, delay, qos)
        plane.capture = capture
        scf = Scf(
            f"{name}.scf", registry, plane,
            policy=ScfPolicy.from_doc(m.get("scf_policy")),
            internal_consumers=internal_by_mno.get(name, ()),
            authorized_ues=m.get("authorized_ues"),
            start_time_of_day_s=sod,
        )
        scf.attach(bus)
        spfs = []
        for s in m.get("spfs", [{"id": "spf1"}]):
            spf = Spf(f"{name}.{s['id']}", labels)
            spf.attach(bus, float(s.get("load", 0.0)))
            plane.attach_spf(spf.nf_id, spf.ingest_frame)
            spfs.append(spf)
        sef = None
        if m.get("sef", True):
            accounts = [
                ConsumerAccount(
                    c["consumer_id"], c["token"], frozenset(c["scopes"]),
                    Tssa.from_doc(c["allowed_area"]) if "allowed_area" in c else None,
                    c.get("charging_plan", "default"),
                )
                for c in scenario.consumers
                if c["trust"] == "THIRD_PARTY" and name in c["mnos"]
            ]
            sef = Sef(f"{name}.sef", accounts)
            sef.attach(bus)
        oam_id = f"{name}.oam"
        bus.register_nf(NfProfile(oam_id, NfKind.STUB))
        bus.register_nf(NfProfile(f"{name}.amf", NfKind.STUB))
        afs = {}
        for af_id in m.get("afs", ()):
            af = AssistingAf(af_id)
            af.attach(bus)
            afs[af_id] = af
        ris = {}
        for ris_id in m.get("ris", ()):
            stub = RisStub(ris_id)
            stub.attach(bus)
            ris[ris_id] = stub
        devices = {}
        for e in sorted(m["entities"], key=lambda e: e["entity_id"]):
            cap = SensingCapability.from_doc(e)
            sensor = SensorModel(
                cap.entity_id, cap, float(e.get("p_detect", 0.9)), float(e.get("sigma_m", 0.3)),
                float(e.get("false_alarm_rate", 0.0)), bool(e.get("requires_los", True)),
            )
            if "waypoints" in e:
                world.entity_paths[cap.entity_id] = _waypoints(e["waypoints"])
            dev = SensingDevice(
                sensor, e["kind"], world, plane, np.random.default_rng(seed_seq[cap.entity_id]), labels, e.get("af_id"),
            )
            dev.accept_activation = bool(e.get("accept_activation", True))
            dev.attach(bus, float(e.get("load", 0.0)))
            devices[cap.entity_id] = dev
            if dev.af_id is not None:
                afs[dev.af_id].devices.append(dev)
        mnos[name] = MnoInstance(name, bus, plane, scf, spfs, sef, devices, afs, ris, oam_id)

    consumers: dict[str, ConsumerApp] = {}
    for c in scenario.consumers:
        if "digital_twin" in c:
            dt = c["digital_twin"]
            app: ConsumerApp = DigitalTwin(c["consumer_id"], DtConfig(
                ris_id=dt["ris_id"],
                trigger_zone=tuple((float(p[0]), float(p[1])) for p in dt["trigger_zone"]),
                trigger_types=frozenset(dt.get("trigger_types", ("HUMAN",))),
                cooldown_s=float(dt.get("cooldown_s", 5.0)),
                gate_m=float(dt.get("gate_m", 1.0)),
                freshness_s=float(dt.get("freshness_s", 1.5)),
            ))
        else:
            app = ConsumerApp(c["consumer_id"], c["trust"], c.get("token"))
        for name in c["mnos"]:
            app.attach(name, mnos[name].bus)
        consumers[c["consumer_id"]] = app

    return Simulation(scenario, seed, duration_us, scheduler, trace, world, labels, registry, mnos, consumers, capture)


MOBILITY_TICK_US = 500_000


def _mobility_tick(sim: Simulation, dev: SensingDevice) -> None:
    dev.check_mobility()
    nxt = sim.scheduler.now_us + MOBILITY_TICK_US
    if nxt <= sim.duration_us:
        sim.scheduler.schedule(nxt, _mobility_tick, sim, dev)


def start(sim: Simulation) -> Simulation:
    """Queue registrations, mobility ticks and consumer requests without running anything."""
    sched = sim.scheduler
    for name in sorted(sim.mnos):
        inst = sim.mnos[name]
        plain = [inst.devices[k] for k in sorted(inst.devices)]
        afs = [inst.afs[k] for k in sorted(inst.afs)]
        sched.schedule(0, register_capabilities, plain, afs)
        for dev in plain:
            if dev.sensor.capability.mobility.value == "MOBILE" and dev.nf_id in sim.world.entity_paths:
                sched.schedule(MOBILITY_TICK_US, _mobility_tick, sim, dev)

    requests: dict[str, list[TaskRequest]] = {}
    for t in sim.scenario.tasks:
        requests.setdefault(t["consumer"], []).append(TaskRequest(
            task_id=t["task_id"], mno=t["mno"], tssa=t["tssa"], targets=t["targets"], schedule=t.get("schedule"),
            refresh_rate_hz=float(t.get("refresh_rate_hz", 1.0)), start_at_s=float(t.get("start_at_s", 0.0)),
            candidates=tuple(t["candidates"]) if "candidates" in t else None,
        ))
    for cid in sorted(requests):
        sim.consumers[cid].schedule_tasks(requests[cid])
    return sim


def execute(sim: Simulation) -> Simulation:
    """Run the simulation to its duration, terminate remaining tasks and drain."""
    sched = sim.scheduler
    start(sim)
    sched.run(until_us=sim.duration_us)
    for name, task in sim.all_tasks():
        if task.state is not TaskState.TERMINATED:
            inst = sim.mnos[name]
            try:
                inst.bus.request(inst.oam_id, inst.scf.nf_id, "TerminateSensingService", {"stid": str(task.stid)})
            except IsacError:
                pass
    sched.run()
    sim.trace.close()
    sim.finished = True
    return sim


# --------------------------------------------------------------------------- report


@dataclass
class RunReport:
    scenario: str
    seed: int
    duration_s: float
    tasks: dict[str, dict] = field(default_factory=dict)
    charging: dict[str, int] = field(default_factory=dict)
    ledger: list[dict] = field(default_factory=list)
    verdicts: dict[str, dict] = field(default_factory=dict)
    counters: dict[str, Any] = field(default_factory=dict)
    kpi_rows: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "tasks": self.tasks,
            "charging": {"per_stid": self.charging, "total": sum(self.charging.values()), "events": len(self.ledger)},
            "verdicts": self.verdicts,
            "counters": self.counters,
        }

    def all_pass(self) -> bool:
        return all(v["verdict"] != "FAIL" for group in self.verdicts.values() for v in group.values())


def make_report(sim: Simulation) -> RunReport:
    rep = RunReport(sim.scenario.name, sim.seed, sim.duration_us / 1e6)
    for name, task in sim.all_tasks():
        stid = str(task.stid)
        merged = KpiMeasured.merge([k for _, _, k in task.kpi_history])
        published = sum(
            r["summary"].get("n_results", 0) for r in sim.trace.records
            if r["operation"] == "SensingResultAvailable" and r["target"] == "*" and r["summary"].get("stid") == stid
        )
        rep.tasks[stid] = {
            "mno": name,
            "consumer": task.consumer,
            "trust": task.trust.value,
            "state": task.state.value,
            "windows": len(task.kpi_history),
            "results_published": published,
            "kpi": merged.to_doc(),
            "decisions": [d.to_doc() for d in task.decisions],
            "members": [m.entity_id for m in task.members],
        }
        for idx, w_end, k in task.kpi_history:
            row = {"stid": stid, "mno": name, "window_index": idx, "window_end_us": w_end}
            row.update({f: k.values[f] for f in KPI_FIELDS})
            rep.kpi_rows.append(row)
    for name in sorted(sim.mnos):
        inst = sim.mnos[name]
        if inst.sef is not None:
            for e in inst.sef.ledger:
                rep.ledger.append(e.to_doc())
                rep.charging[e.stid] = rep.charging.get(e.stid, 0) + e.results_delivered
        pc = inst.plane.counters
        counters = {
            "frames_sent": pc.frames_sent,
            "frames_delivered": pc.frames_delivered,
            "no_route": pc.no_route,
            "bad_frames": pc.bad_frames,
            "qos": {
                spf.nf_id: [vars(c) for c in inst.plane.queues(spf.nf_id).counters] for spf in inst.spfs
            },
            "spf": {spf.nf_id: vars(spf.counters) for spf in inst.spfs},
        }
        rep.counters[name] = counters
    rep.counters["trace_records"] = len(sim.trace)
    return rep


def run(
    scenario: ScenarioDoc | str | Path,
    seed: int | None = None,
    duration_s: float | None = None,
    trace_path: str | Path | None = None,
    bus_delay_ms: float | None = None,
    capture_frames: bool = False,
) -> tuple[Simulation, RunReport]:
    """Load (if needed), build, execute and report in one call."""
    if not isinstance(scenario, ScenarioDoc):
        scenario = load_scenario(scenario)
    sim = build(scenario, seed, duration_s, trace_path, bus_delay_ms, capture_frames)
    execute(sim)
    return sim, make_report(sim)
