"""Sensing Exposure Function: AAA, request proxying, delivery and charging."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import geometry
from .bus import BusMessage, NetworkFunction, NfKind
from .domain import Stid, Tssa
from .errors import IsacError


class Scope(str, enum.Enum):
    REQUEST_SENSING = "REQUEST_SENSING"
    RECEIVE_RESULTS = "RECEIVE_RESULTS"


@dataclass(frozen=True)
class ConsumerAccount:
    consumer_id: str
    token: str
    authorized_scopes: frozenset[Scope]
    allowed_area: Tssa | None = None
    charging_plan: str = "default"

    def __post_init__(self) -> None:
        object.__setattr__(self, "authorized_scopes", frozenset(Scope(s) for s in self.authorized_scopes))
        if not self.authorized_scopes:
            raise IsacError("VALIDATION", "scopes")
        if not self.token:
            raise IsacError("VALIDATION", "token")


@dataclass(frozen=True)
class ChargingEvent:
    consumer_id: str
    stid: str
    window: tuple[int, int]
    results_delivered: int
    emitted_us: int

    def __post_init__(self) -> None:
        if self.results_delivered < 0:
            raise IsacError("VALIDATION", "results_delivered")

    def to_doc(self) -> dict:
        return {
            "consumer_id": self.consumer_id,
            "stid": self.stid,
            "window": list(self.window),
            "results_delivered": self.results_delivered,
            "emitted_us": self.emitted_us,
        }


@dataclass
class _Session:
    session_id: str
    consumer_id: str
    expires_us: int


@dataclass
class _Mapping:
    consumer_id: str
    notify_target: str
    sub_id: str | None = None
    held: list[dict] = field(default_factory=list)
    last_window_end: int | None = None


class Sef(NetworkFunction):
    kind = NfKind.SEF
    services = frozenset({"Nsef"})

    def __init__(self, nf_id: str, accounts: Iterable[ConsumerAccount] = (), session_ttl_us: int = 3_600_000_000) -> None:
        super().__init__(nf_id)
        self.accounts: dict[str, ConsumerAccount] = {}
        tokens = set()
        for acc in accounts:
            if acc.token in tokens:
                raise IsacError("VALIDATION", "token")
            tokens.add(acc.token)
            self.accounts[acc.consumer_id] = acc
        self.session_ttl_us = session_ttl_us
        self.sessions: dict[str, _Session] = {}
        self.mappings: dict[str, _Mapping] = {}
        self.ledger: list[ChargingEvent] = []
        self.summaries: list[dict] = []
        self._session_counter = 0

    # ---------------------------------------------------------------- AAA

    def authenticate(self, consumer_id: str, token: str) -> dict:
        acc = self.accounts.get(consumer_id)
        if acc is None:
            raise IsacError("UNKNOWN_CONSUMER", consumer_id)
        if token != acc.token:
            raise IsacError("AUTH_FAILED", consumer_id)
        self._session_counter += 1
        sid = f"{self.nf_id}-session-{self._session_counter}"
        expires = self.now_us + self.session_ttl_us
        self.sessions[sid] = _Session(sid, consumer_id, expires)
        return {"session": sid, "expires_us": expires}

    def op_Authenticate(self, msg: BusMessage) -> dict:
        return self.authenticate(str(msg.payload.get("consumer_id", "")), str(msg.payload.get("token", "")))

    def _session(self, sid: str | None) -> ConsumerAccount:
        sess = self.sessions.get(sid or "")
        if sess is None or sess.expires_us < self.now_us:
            raise IsacError("AUTH_FAILED", "invalid or expired session")
        return self.accounts[sess.consumer_id]

    # ---------------------------------------------------------------- requests

    def submit_request(self, session: str | None, request: Mapping, source: str) -> dict:
        """Check session, scope and area in that order, then proxy to the SCF."""
        acc = self._session(session)
        if Scope.REQUEST_SENSING not in acc.authorized_scopes:
            raise IsacError("FORBIDDEN_SCOPE", Scope.REQUEST_SENSING.value)
        if "tssa" not in request:
            raise IsacError("VALIDATION", "tssa")
        tssa = Tssa.from_doc(request["tssa"]).resolve()
        if acc.allowed_area is not None and not geometry.polygon_within(tssa.polygon, acc.allowed_area.resolve().polygon):
            raise IsacError("AREA_VIOLATION", acc.consumer_id)
        payload = {k: v for k, v in request.items() if k not in ("session", "consumer", "trust", "result_sink")}
        payload.update({"consumer": acc.consumer_id, "trust": "THIRD_PARTY", "result_sink": self.nf_id})
        reply = self.bus.request(self.nf_id, "Nscf", "SensingServiceRequest", payload)
        stid = reply["stid"]
        mapping = _Mapping(acc.consumer_id, source or acc.consumer_id)
        mapping.sub_id = self.bus.subscribe(self.nf_id, "Nspf", "SensingResultAvailable", {"stid": stid})
        self.mappings[stid] = mapping
        return {"stid": stid, "state": reply.get("state")}

    def op_SubmitSensingRequest(self, msg: BusMessage) -> dict:
        return self.submit_request(msg.payload.get("session"), msg.payload, msg.source)

    def op_SubscribeResults(self, msg: BusMessage) -> dict:
        acc = self._session(msg.payload.get("session"))
        if Scope.RECEIVE_RESULTS not in acc.authorized_scopes:
            raise IsacError("FORBIDDEN_SCOPE", Scope.RECEIVE_RESULTS.value)
        stid = msg.payload.get("stid", "")
        mapping = self.mappings.get(stid)
        if mapping is None or mapping.consumer_id != acc.consumer_id:
            raise IsacError("NO_MAPPING", stid)
        mapping.notify_target = msg.source
        return {"stid": stid, "subscribed": True}

    def op_QueryChargingLedger(self, msg: BusMessage) -> dict:
        consumer = msg.payload.get("consumer_id")
        stid = msg.payload.get("stid")
        rows = [
            e.to_doc() for e in self.ledger
            if (consumer is None or e.consumer_id == consumer) and (stid is None or e.stid == stid)
        ]
        return {"entries": rows, "results_delivered": sum(r["results_delivered"] for r in rows)}

    # ---------------------------------------------------------------- delivery

    def deliver_results(self, event: Mapping) -> ChargingEvent | None:
        stid = event.get("stid", "")
        mapping = self.mappings.get(stid)
        if mapping is None:
            self.bus.record(self.nf_id, "DeliveryAlarm", {"stid": stid, "error": "NO_MAPPING"})
            return None
        acc = self.accounts[mapping.consumer_id]
        if Scope.RECEIVE_RESULTS not in acc.authorized_scopes:
            mapping.held.append(dict(event))
            self.bus.record(self.nf_id, "DeliveryAlarm", {
                "stid": stid, "consumer_id": acc.consumer_id, "error": "NO_MAPPING", "held": len(mapping.held),
            })
            return None
        n = int(event.get("n_results", len(event.get("results", ()))))
        window_end = int(event.get("window_end_us", 0))
        start = mapping.last_window_end if mapping.last_window_end is not None else window_end
        mapping.last_window_end = window_end
        self.bus.post(self.nf_id, mapping.notify_target, "SensingResultNotify", {
            "stid": stid,
            "window_index": event.get("window_index"),
            "window_end_us": window_end,
            "latency_us": event.get("latency_us"),
            "n_results": n,
            "results": list(event.get("results", ())),
            "modalities": list(event.get("modalities", ())),
        })
        charge = ChargingEvent(acc.consumer_id, stid, (start, window_end), n, self.now_us)
        self.ledger.append(charge)
        self.bus.record(self.nf_id, "ChargingEvent", {
            "consumer_id": acc.consumer_id, "stid": stid, "results_delivered": n,
            "window_start_us": start, "window_end_us": window_end,
        }, target=acc.consumer_id)
        return charge

    def on_SensingResultAvailable(self, msg: BusMessage) -> None:
        self.deliver_results(msg.payload)

    def on_TaskSummary(self, msg: BusMessage) -> None:
        stid = msg.payload.get("stid")
        mapping = self.mappings.get(stid)
        if mapping is not None and mapping.sub_id is not None:
            self.bus.unsubscribe(mapping.sub_id)
            mapping.sub_id = None
        self.summaries.append({**msg.payload, "results_delivered": self.delivered(stid)})

    def delivered(self, stid: str | Stid) -> int:
        key = str(stid)
        return sum(e.results_delivered for e in self.ledger if e.stid == key)

    def export_ledger(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.ledger:
                fh.write(json.dumps(e.to_doc(), sort_keys=True, separators=(",", ":")) + "\n")
