"""Sensing service consumers: applications, the digital-twin aggregator, RIS stub.

A consumer may be attached to several MNO buses at once (one endpoint per
bus, all sharing the consumer id).  Third-party consumers go through each
MNO's SEF; internal consumers talk to the SCF directly and subscribe to SPF
result events themselves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import geometry
from .bus import BusMessage, NetworkFunction, NfKind, ServiceBus
from .errors import IsacError


@dataclass(frozen=True)
class TaskRequest:
    task_id: str
    mno: str
    tssa: Mapping[str, Any]
    targets: Mapping[str, Any]
    schedule: Mapping[str, str] | None = None
    refresh_rate_hz: float = 1.0
    start_at_s: float = 0.0
    candidates: tuple[str, ...] | None = None

    def payload(self) -> dict:
        doc: dict[str, Any] = {
            "tssa": dict(self.tssa),
            "targets": dict(self.targets),
            "refresh_rate_hz": self.refresh_rate_hz,
        }
        if self.schedule:
            doc["schedule"] = dict(self.schedule)
        if self.candidates is not None:
            doc["candidates"] = list(self.candidates)
        return doc


class ConsumerEndpoint(NetworkFunction):
    """The consumer's presence on one MNO bus."""

    kind = NfKind.AF
    services = frozenset({"Naf"})

    def __init__(self, app: "ConsumerApp", mno: str) -> None:
        super().__init__(app.consumer_id)
        self.app = app
        self.mno = mno

    def on_SensingResultNotify(self, msg: BusMessage) -> None:
        self.app.receive(self.mno, msg)

    def on_SensingResultAvailable(self, msg: BusMessage) -> None:
        self.app.receive(self.mno, msg)


class ConsumerApp:
    def __init__(self, consumer_id: str, trust: str = "INTERNAL", token: str | None = None) -> None:
        self.consumer_id = consumer_id
        self.trust = trust
        self.token = token
        self.endpoints: dict[str, ConsumerEndpoint] = {}
        self.sessions: dict[str, str] = {}
        self.stids: dict[str, tuple[str, str]] = {}
        self.errors: list[tuple[str, str]] = []
        self.windows: list[dict] = []

    def attach(self, mno: str, bus: ServiceBus) -> ConsumerEndpoint:
        ep = ConsumerEndpoint(self, mno)
        ep.attach(bus)
        self.endpoints[mno] = ep
        return ep

    def schedule_tasks(self, requests: Sequence[TaskRequest]) -> None:
        for req in requests:
            ep = self.endpoints[req.mno]
            ep.bus.scheduler.schedule(int(round(req.start_at_s * 1e6)), self.issue, req)

    def _session(self, ep: ConsumerEndpoint) -> str:
        if ep.mno not in self.sessions:
            reply = ep.bus.request(self.consumer_id, "Nsef", "Authenticate",
                                   {"consumer_id": self.consumer_id, "token": self.token or ""})
            self.sessions[ep.mno] = reply["session"]
        return self.sessions[ep.mno]

    def issue(self, req: TaskRequest) -> str | None:
        ep = self.endpoints[req.mno]
        bus = ep.bus
        try:
            if self.trust == "THIRD_PARTY":
                session = self._session(ep)
                reply = bus.request(self.consumer_id, "Nsef", "SubmitSensingRequest", {"session": session, **req.payload()})
                stid = reply["stid"]
                bus.request(self.consumer_id, "Nsef", "SubscribeResults", {"session": session, "stid": stid})
            else:
                payload = {**req.payload(), "consumer": self.consumer_id, "trust": "INTERNAL"}
                reply = bus.request(self.consumer_id, "Nscf", "SensingServiceRequest", payload)
                stid = reply["stid"]
                bus.subscribe(self.consumer_id, "Nspf", "SensingResultAvailable", {"stid": stid})
        except IsacError as exc:
            self.errors.append((req.task_id, exc.code))
            return None
        self.stids[req.task_id] = (req.mno, stid)
        return stid

    def receive(self, mno: str, msg: BusMessage) -> dict:
        p = msg.payload
        row = {
            "mno": mno,
            "stid": p.get("stid"),
            "seq": msg.msg_id,
            "window_index": p.get("window_index"),
            "window_end_us": p.get("window_end_us"),
            "n_results": int(p.get("n_results", 0)),
            "results": list(p.get("results", ())),
            "received_us": msg.sim_time_us,
        }
        self.windows.append(row)
        return row

    def delivered(self, stid: str) -> int:
        return sum(w["n_results"] for w in self.windows if w["stid"] == stid)


@dataclass
class DtConfig:
    ris_id: str
    trigger_zone: tuple[tuple[float, float], ...]
    trigger_types: frozenset[str] = frozenset({"HUMAN"})
    cooldown_s: float = 5.0
    gate_m: float = 1.0
    freshness_s: float = 1.5


class DigitalTwin(ConsumerApp):
    """Aggregates results of several tasks into one view and drives the RIS.

    Results from different tasks that fall within ``gate_m`` of each other
    are treated as the same object; the higher-confidence one is kept.
    """

    def __init__(self, consumer_id: str, config: DtConfig) -> None:
        super().__init__(consumer_id, "INTERNAL")
        self.config = config
        self.latest: dict[str, tuple[int, list[dict]]] = {}
        self.views: list[dict] = []
        self.commands: list[dict] = []
        self._last_command_us: int | None = None

    def aggregate(self, now_window_end: int) -> list[dict]:
        fresh_us = int(self.config.freshness_s * 1e6)
        pool = []
        for stid in sorted(self.latest):
            w_end, results = self.latest[stid]
            if now_window_end - w_end > fresh_us:
                continue
            for r in results:
                pool.append({**r, "source_stid": stid})
        pool.sort(key=lambda r: (-r["confidence"], r["source_stid"], r["track_id"]))
        kept: list[dict] = []
        for r in pool:
            if any(
                o["source_stid"] != r["source_stid"] and geometry.distance(o["position_m"], r["position_m"]) <= self.config.gate_m
                for o in kept
            ):
                continue
            kept.append(r)
        return kept

    def receive(self, mno: str, msg: BusMessage) -> dict:
        row = super().receive(mno, msg)
        w_end = int(row["window_end_us"] or 0)
        self.latest[row["stid"]] = (w_end, row["results"])
        objects = self.aggregate(w_end)
        ep = self.endpoints[mno]
        view = {
            "stid": row["stid"],
            "window_end_us": w_end,
            "objects": [
                {"object_type": o["object_type"], "position_m": o["position_m"], "source_stid": o["source_stid"],
                 "confidence": o["confidence"]}
                for o in objects
            ],
        }
        view["seq"] = ep.bus.record(self.consumer_id, "AggregatedView", {
            "stid": row["stid"],
            "window_end_us": w_end,
            "n_objects": len(objects),
            "object_types": sorted({o["object_type"] for o in objects}),
            "source_stids": len({o["source_stid"] for o in objects}),
        })
        self.views.append(view)
        self._maybe_trigger(ep, view)
        return row

    def _maybe_trigger(self, ep: ConsumerEndpoint, view: dict) -> None:
        cfg = self.config
        now = ep.now_us
        if self._last_command_us is not None and now - self._last_command_us < cfg.cooldown_s * 1e6:
            return
        hits = [
            o for o in view["objects"]
            if o["object_type"] in cfg.trigger_types and geometry.point_in_polygon(o["position_m"], cfg.trigger_zone)
        ]
        if not hits:
            return
        self._last_command_us = now
        obj = hits[0]
        cmd = {
            "trigger_seq": view["seq"],
            "object_type": obj["object_type"],
            "x": obj["position_m"][0],
            "y": obj["position_m"][1],
            "steer_deg": round(math.degrees(math.atan2(obj["position_m"][1], obj["position_m"][0])), 3),
        }
        self.commands.append(cmd)
        ep.bus.post(self.consumer_id, cfg.ris_id, "ReconfigureRis", cmd)


class RisStub(NetworkFunction):
    """Records reconfiguration commands; RIS physics are not modelled."""

    kind = NfKind.STUB
    services = frozenset()

    def __init__(self, nf_id: str) -> None:
        super().__init__(nf_id)
        self.received: list[dict] = []

    def on_ReconfigureRis(self, msg: BusMessage) -> None:
        self.received.append(dict(msg.payload))
