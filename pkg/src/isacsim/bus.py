"""In-process service bus: NF registry, discovery, request/response, pub/sub.

Everything runs on one :class:`Scheduler`.  Requests are delivered
synchronously (the handler runs nested inside the caller) while the clock is
advanced by the link delay in each direction; one-way messages and event
notifications are scheduled for ``now + delay``.  Every message is written to
the shared :class:`Trace` at send time and its trace sequence number doubles
as the message id.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .errors import IsacError


# --------------------------------------------------------------------------- scheduler


class Scheduler:
    """Deterministic discrete-event loop keyed on integer microseconds."""

    def __init__(self) -> None:
        self.now_us = 0
        self._queue: list[tuple[int, int, list]] = []
        self._counter = itertools.count()

    def schedule(self, at_us: int, callback: Callable, *args: Any) -> list:
        entry = [callback, args, True]
        heapq.heappush(self._queue, (int(at_us), next(self._counter), entry))
        return entry

    def call_later(self, delay_us: int, callback: Callable, *args: Any) -> list:
        return self.schedule(self.now_us + int(delay_us), callback, *args)

    def call_soon(self, callback: Callable, *args: Any) -> list:
        return self.schedule(self.now_us, callback, *args)

    @staticmethod
    def cancel(handle: list) -> None:
        handle[2] = False

    def advance_to(self, t_us: int) -> None:
        if t_us > self.now_us:
            self.now_us = int(t_us)

    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if e[2])

    def run(self, until_us: int | None = None) -> None:
        """Process events in (time, insertion) order up to ``until_us`` inclusive.

        Work done inside a handler may push the clock past queued events; those
        then run at the current time so the clock never goes backwards.
        """
        while self._queue:
            at, _, entry = self._queue[0]
            if until_us is not None and at > until_us:
                break
            heapq.heappop(self._queue)
            callback, args, live = entry
            if not live:
                continue
            self.advance_to(at)
            callback(*args)
        if until_us is not None:
            self.advance_to(until_us)


class DelayModel:
    """Per-link one-way delay in microseconds with a default."""

    def __init__(self, default_us: int = 2000, overrides: dict[tuple[str, str], int] | None = None) -> None:
        self.default_us = int(default_us)
        self.overrides = dict(overrides or {})

    def delay(self, source: str, target: str) -> int:
        return self.overrides.get((source, target), self.default_us)


# --------------------------------------------------------------------------- trace

TRACE_FIELDS = ("seq", "sim_time_us", "source", "target", "operation", "correlation_id", "summary")


def summarize(doc: dict | None) -> dict:
    """Flatten a payload into the scalar summary kept in trace records."""
    if not doc:
        return {}
    out: dict[str, Any] = {}
    for key in sorted(doc):
        value = doc[key]
        if value is None or isinstance(value, (str, int, float, bool)):
            out[key] = value
        elif isinstance(value, (list, tuple)):
            if all(v is None or isinstance(v, (str, int, float, bool)) for v in value) and len(value) <= 8:
                out[key] = list(value)
            else:
                out["n_" + key] = len(value)
    return out


class Trace:
    """Append-only list of message records, serialisable as JSON lines."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.records: list[dict] = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def append(
        self,
        sim_time_us: int,
        source: str,
        target: str,
        operation: str,
        summary: dict,
        correlation_id: int | None = None,
    ) -> int:
        seq = len(self.records) + 1
        record = {
            "seq": seq,
            "sim_time_us": int(sim_time_us),
            "source": source,
            "target": target,
            "operation": operation,
            "correlation_id": correlation_id,
            "summary": summary,
        }
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(self.dumps(record) + "\n")
        return seq

    @staticmethod
    def dumps(record: dict) -> str:
        ordered = {k: record[k] for k in TRACE_FIELDS}
        return json.dumps(ordered, separators=(",", ":"), sort_keys=False, allow_nan=False, default=str)

    def to_jsonl(self) -> str:
        return "".join(self.dumps(r) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def load_trace(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------- registry types


class NfKind(str, enum.Enum):
    SCF = "SCF"
    SPF = "SPF"
    SEF = "SEF"
    AN = "AN"
    UE = "UE"
    AF = "AF"
    TNAN = "TNAN"
    N3IWF = "N3IWF"
    STUB = "STUB"


class NfStatus(str, enum.Enum):
    AVAILABLE = "AVAILABLE"
    DRAINING = "DRAINING"
    DOWN = "DOWN"


@dataclass
class NfProfile:
    nf_id: str
    nf_kind: NfKind
    services: frozenset[str] = frozenset()
    load: float = 0.0
    status: NfStatus = NfStatus.AVAILABLE

    def __post_init__(self) -> None:
        self.nf_kind = NfKind(self.nf_kind)
        self.status = NfStatus(self.status)
        self.services = frozenset(self.services)
        if not 0.0 <= self.load <= 1.0:
            raise IsacError("VALIDATION", "load")
        if not self.services and self.nf_kind is not NfKind.STUB:
            raise IsacError("VALIDATION", "services")


@dataclass
class BusMessage:
    msg_id: int
    source: str
    target: str
    operation: str
    payload: dict
    sim_time_us: int
    correlation_id: int | None = None


class HandlerError(IsacError):
    """An error raised by the target handler, re-raised at the caller."""


class NetworkFunction:
    """Base for bus participants.

    Requests dispatch to ``op_<Operation>(msg)`` and events to
    ``on_<EventKind>(msg)``.
    """

    kind: NfKind = NfKind.STUB
    services: frozenset[str] = frozenset()

    def __init__(self, nf_id: str) -> None:
        self.nf_id = nf_id
        self.bus: ServiceBus | None = None

    def profile(self, load: float = 0.0) -> NfProfile:
        return NfProfile(self.nf_id, self.kind, self.services, load)

    def attach(self, bus: "ServiceBus", load: float = 0.0) -> NfProfile:
        return bus.register_nf(self.profile(load), self)

    @property
    def now_us(self) -> int:
        assert self.bus is not None
        return self.bus.scheduler.now_us

    def handle_request(self, msg: BusMessage) -> dict:
        method = getattr(self, "op_" + msg.operation, None)
        if method is None:
            raise IsacError("UNKNOWN_OPERATION", msg.operation)
        return method(msg)

    def handle_event(self, msg: BusMessage) -> None:
        method = getattr(self, "on_" + msg.operation, None)
        if method is not None:
            method(msg)


@dataclass
class _Subscription:
    sub_id: str
    subscriber: str
    service: str
    event_kind: str
    filter: dict = field(default_factory=dict)

    def matches(self, publisher_services: frozenset[str], event_kind: str, event: dict) -> bool:
        if event_kind != self.event_kind or self.service not in publisher_services:
            return False
        return all(event.get(k) == v for k, v in self.filter.items())


class ServiceBus:
    def __init__(
        self,
        scheduler: Scheduler | None = None,
        trace: Trace | None = None,
        delay: DelayModel | None = None,
        name: str = "",
    ) -> None:
        self.scheduler = scheduler or Scheduler()
        self.trace = trace if trace is not None else Trace()
        self.delay = delay or DelayModel()
        self.name = name
        self._profiles: dict[str, NfProfile] = {}
        self._handlers: dict[str, Any] = {}
        self._subs: dict[str, _Subscription] = {}
        self._sub_counter = itertools.count(1)

    # ----------------------------------------------------------------- registry

    def register_nf(self, profile: NfProfile, handler: Any = None) -> NfProfile:
        old = self._profiles.get(profile.nf_id)
        if old is not None and old.status is not NfStatus.DOWN:
            raise IsacError("DUPLICATE_ID", profile.nf_id)
        self._profiles[profile.nf_id] = profile
        self._handlers[profile.nf_id] = handler
        if handler is not None and hasattr(handler, "bus"):
            handler.bus = self
        return profile

    def profile(self, nf_id: str) -> NfProfile | None:
        return self._profiles.get(nf_id)

    def profiles(self) -> list[NfProfile]:
        return [self._profiles[k] for k in sorted(self._profiles)]

    def handler(self, nf_id: str) -> Any:
        return self._handlers.get(nf_id)

    def set_status(self, nf_id: str, status: NfStatus) -> None:
        self._profiles[nf_id].status = NfStatus(status)

    def set_load(self, nf_id: str, load: float) -> None:
        if not 0.0 <= load <= 1.0:
            raise IsacError("VALIDATION", "load")
        self._profiles[nf_id].load = float(load)

    def discover(self, service: str, filter: Callable[[NfProfile], bool] | None = None) -> list[NfProfile]:
        found = [
            p
            for p in self._profiles.values()
            if p.status is NfStatus.AVAILABLE and service in p.services and (filter is None or filter(p))
        ]
        found.sort(key=lambda p: (p.load, p.nf_id))
        return found

    def _resolve(self, target: str) -> str:
        prof = self._profiles.get(target)
        if prof is not None:
            if prof.status is NfStatus.DOWN:
                raise IsacError("UNRESOLVED_TARGET", target)
            return target
        found = self.discover(target)
        if not found:
            raise IsacError("UNRESOLVED_TARGET", target)
        return found[0].nf_id

    # ----------------------------------------------------------------- messaging

    def request(self, source: str, target: str, operation: str, payload: dict | None = None) -> dict:
        """Deliver ``operation`` to ``target`` and return the handler's response."""
        payload = payload or {}
        nf_id = self._resolve(target)
        sched = self.scheduler
        msg_id = self.trace.append(sched.now_us, source, nf_id, operation, summarize(payload))
        msg = BusMessage(msg_id, source, nf_id, operation, payload, sched.now_us)
        sched.advance_to(sched.now_us + self.delay.delay(source, nf_id))
        handler = self._handlers.get(nf_id)
        try:
            if handler is None:
                raise IsacError("NO_HANDLER", nf_id)
            response = handler.handle_request(msg) or {}
        except IsacError as exc:
            self.trace.append(sched.now_us, nf_id, source, operation + "Response", {"error": exc.code}, msg_id)
            sched.advance_to(sched.now_us + self.delay.delay(nf_id, source))
            raise HandlerError(exc.code, exc.detail) from exc
        self.trace.append(sched.now_us, nf_id, source, operation + "Response", summarize(response), msg_id)
        sched.advance_to(sched.now_us + self.delay.delay(nf_id, source))
        return response

    def post(self, source: str, target: str, operation: str, payload: dict | None = None) -> int:
        """One-way message delivered to the target's event handler after the link delay."""
        payload = payload or {}
        nf_id = self._resolve(target)
        sched = self.scheduler
        msg_id = self.trace.append(sched.now_us, source, nf_id, operation, summarize(payload))
        msg = BusMessage(msg_id, source, nf_id, operation, payload, sched.now_us)
        sched.call_later(self.delay.delay(source, nf_id), self._deliver, msg)
        return msg_id

    def _deliver(self, msg: BusMessage) -> None:
        prof = self._profiles.get(msg.target)
        handler = self._handlers.get(msg.target)
        if prof is None or prof.status is NfStatus.DOWN or handler is None:
            return
        handler.handle_event(msg)

    # ----------------------------------------------------------------- pub/sub

    def subscribe(self, subscriber: str, target: str, event_kind: str, filter: dict | None = None) -> str:
        if subscriber not in self._profiles:
            raise IsacError("UNKNOWN_SUBSCRIBER", subscriber)
        sub_id = f"sub-{next(self._sub_counter)}"
        flt = dict(filter or {})
        self._subs[sub_id] = _Subscription(sub_id, subscriber, target, event_kind, flt)
        self.trace.append(
            self.scheduler.now_us, subscriber, target, "Subscribe",
            {"event_kind": event_kind, "sub_id": sub_id, **summarize(flt)},
        )
        return sub_id

    def unsubscribe(self, sub_id: str) -> None:
        if self._subs.pop(sub_id, None) is None:
            raise IsacError("UNKNOWN_SUBSCRIPTION", sub_id)

    def subscriptions(self) -> list[str]:
        return list(self._subs)

    def publish(self, source: str, event_kind: str, event: dict) -> int:
        """Record an event and notify every matching subscription in subscription order."""
        prof = self._profiles.get(source)
        services = prof.services if prof is not None else frozenset()
        pub_id = self.trace.append(self.scheduler.now_us, source, "*", event_kind, summarize(event))
        for sub in list(self._subs.values()):
            if sub.matches(services, event_kind, event):
                self._notify(sub, source, event_kind, event, pub_id)
        return pub_id

    def notify(self, sub_id: str, event: dict, source: str = "") -> int:
        sub = self._subs.get(sub_id)
        if sub is None:
            raise IsacError("UNKNOWN_SUBSCRIPTION", sub_id)
        return self._notify(sub, source, sub.event_kind, event, None)

    def _notify(self, sub: _Subscription, source: str, kind: str, event: dict, pub_id: int | None) -> int:
        sched = self.scheduler
        msg_id = self.trace.append(sched.now_us, source, sub.subscriber, kind, summarize(event), pub_id)
        msg = BusMessage(msg_id, source, sub.subscriber, kind, event, sched.now_us, pub_id)
        sched.call_later(self.delay.delay(source, sub.subscriber), self._deliver, msg)
        return msg_id

    def record(self, source: str, operation: str, summary: dict, target: str = "*") -> int:
        """Trace-only record for internal milestones (state changes, decisions)."""
        return self.trace.append(self.scheduler.now_us, source, target, operation, summarize(summary))


def nf_ids(profiles: Iterable[NfProfile]) -> list[str]:
    return [p.nf_id for p in profiles]
