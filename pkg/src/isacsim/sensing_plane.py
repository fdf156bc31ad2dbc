"""Sensing-plane framing, STID routing and strict-priority QoS scheduling.

Frame layout (big-endian)::

    0   4  magic "SPF1"
    4   1  version (0x01)
    5   1  payload type (0 SensingData, 1 SensingResult, 2 Control)
    6   1  QoS class (0 highest .. 3)
    7   1  reserved (0x00)
    8  16  STID
   24   4  sequence number
   28   8  simulated timestamp, microseconds
   36   4  payload length N
   40   N  payload (canonical JSON)
 40+N   4  CRC-32 over bytes [0, 40+N)
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .bus import DelayModel, Scheduler, Trace
from .domain import Stid, canonical_json
from .errors import IsacError

MAGIC = b"SPF1"
VERSION = 0x01
HEADER = struct.Struct(">4sBBBB16sIQI")
HEADER_LEN = HEADER.size  # 40
CRC_LEN = 4
MAX_PAYLOAD = 1 << 20
N_CLASSES = 4


class PayloadType(enum.IntEnum):
    SENSING_DATA = 0
    SENSING_RESULT = 1
    CONTROL = 2


@dataclass(frozen=True)
class SpFrame:
    payload_type: int
    qos_class: int
    stid: Stid
    seq: int
    sim_timestamp_us: int
    payload: dict | None = None


def encode(frame: SpFrame, max_payload: int = MAX_PAYLOAD) -> bytes:
    if frame.payload_type not in PayloadType.__members__.values():
        raise IsacError("VALIDATION", "payload_type")
    if not 0 <= frame.qos_class < N_CLASSES:
        raise IsacError("VALIDATION", "qos_class")
    if not 0 <= frame.seq < 1 << 32:
        raise IsacError("VALIDATION", "seq")
    if not 0 <= frame.sim_timestamp_us < 1 << 64:
        raise IsacError("VALIDATION", "sim_timestamp_us")
    body = b"" if frame.payload is None else canonical_json(frame.payload)
    if len(body) > max_payload:
        raise IsacError("PAYLOAD_TOO_LARGE", f"{len(body)} > {max_payload}")
    head = HEADER.pack(
        MAGIC, VERSION, int(frame.payload_type), frame.qos_class, 0,
        frame.stid.to_bytes(), frame.seq, frame.sim_timestamp_us, len(body),
    )
    data = head + body
    return data + struct.pack(">I", zlib.crc32(data) & 0xFFFFFFFF)


def peek_header(buf: bytes) -> tuple[int, int, Stid, int, int, int]:
    """Unpack the fixed header without validating CRC or payload."""
    if len(buf) < HEADER_LEN + CRC_LEN:
        raise IsacError("TRUNCATED", f"{len(buf)} bytes")
    magic, version, ptype, qos, _reserved, stid, seq, ts, plen = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise IsacError("BAD_MAGIC", magic.hex())
    if version != VERSION:
        raise IsacError("BAD_VERSION", str(version))
    return ptype, qos, Stid.from_bytes(stid), seq, ts, plen


def decode(buf: bytes) -> SpFrame:
    ptype, qos, stid, seq, ts, plen = peek_header(buf)
    (crc,) = struct.unpack_from(">I", buf, len(buf) - CRC_LEN)
    if zlib.crc32(buf[:-CRC_LEN]) & 0xFFFFFFFF != crc:
        raise IsacError("BAD_CRC")
    expected = HEADER_LEN + plen + CRC_LEN
    if len(buf) < expected:
        raise IsacError("TRUNCATED", f"{len(buf)} < {expected}")
    if len(buf) > expected:
        raise IsacError("BAD_PAYLOAD", "trailing bytes")
    if buf[7] != 0:
        raise IsacError("BAD_PAYLOAD", "reserved byte")
    if ptype not in PayloadType.__members__.values() or not 0 <= qos < N_CLASSES:
        raise IsacError("BAD_PAYLOAD", "header enum")
    payload = None
    if plen:
        try:
            payload = json.loads(buf[HEADER_LEN : HEADER_LEN + plen].decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise IsacError("BAD_PAYLOAD", str(exc)) from exc
        if not isinstance(payload, dict):
            raise IsacError("BAD_PAYLOAD", "payload is not an object")
    return SpFrame(ptype, qos, stid, seq, ts, payload)


def split_stream(blob: bytes) -> list[bytes]:
    """Cut a byte stream of back-to-back frames into individual frames."""
    frames = []
    pos = 0
    while pos < len(blob):
        if len(blob) - pos < HEADER_LEN:
            raise IsacError("TRUNCATED", f"at offset {pos}")
        (plen,) = struct.unpack_from(">I", blob, pos + 36)
        end = pos + HEADER_LEN + plen + CRC_LEN
        if end > len(blob):
            raise IsacError("TRUNCATED", f"at offset {pos}")
        frames.append(blob[pos:end])
        pos = end
    return frames


# --------------------------------------------------------------------------- QoS


class DropPolicy(str, enum.Enum):
    DROP_OLDEST = "DROP_OLDEST"
    DROP_NEWEST = "DROP_NEWEST"


@dataclass(frozen=True)
class QosPolicy:
    """Per-class queueing budgets.

    ``DROP_OLDEST`` discards head-of-line frames that waited longer than the
    class budget.  ``DROP_NEWEST`` keeps the backlog (frames are delivered
    late) and instead discards arrivals while the class head is expired.
    Both apply to capacity overflow the same way.
    """

    budget_us: tuple[int, ...] = (20_000, 100_000, 500_000, 2_000_000)
    drop_policy: tuple[DropPolicy, ...] = (DropPolicy.DROP_OLDEST,) * N_CLASSES
    capacity: int = 4096

    def __post_init__(self) -> None:
        if len(self.budget_us) != N_CLASSES or len(self.drop_policy) != N_CLASSES:
            raise IsacError("VALIDATION", "qos classes")
        if any(b <= 0 for b in self.budget_us):
            raise IsacError("VALIDATION", "budget_us")
        if self.budget_us[0] > self.budget_us[-1]:
            raise IsacError("VALIDATION", "budget_us ordering")
        object.__setattr__(self, "drop_policy", tuple(DropPolicy(p) for p in self.drop_policy))


@dataclass
class ClassCounters:
    frames_in: int = 0
    frames_delivered: int = 0
    frames_dropped: int = 0


class QosQueues:
    """Per-class FIFOs served by strict priority (class 0 first)."""

    def __init__(self, policy: QosPolicy | None = None) -> None:
        self.policy = policy or QosPolicy()
        self.queues: list[deque] = [deque() for _ in range(N_CLASSES)]
        self.counters = [ClassCounters() for _ in range(N_CLASSES)]

    def _expired(self, cls: int, enqueued_us: int, now_us: int) -> bool:
        return now_us - enqueued_us > self.policy.budget_us[cls]

    def enqueue(self, qos_class: int, item: object, now_us: int) -> bool:
        q = self.queues[qos_class]
        c = self.counters[qos_class]
        c.frames_in += 1
        newest = self.policy.drop_policy[qos_class] is DropPolicy.DROP_NEWEST
        if newest and q and self._expired(qos_class, q[0][0], now_us):
            c.frames_dropped += 1
            return False
        if len(q) >= self.policy.capacity:
            if newest:
                c.frames_dropped += 1
                return False
            q.popleft()
            c.frames_dropped += 1
        q.append((now_us, item))
        return True

    def schedule(self, now_us: int) -> tuple[int, object] | None:
        """Dequeue the next ``(class, item)`` or None when idle."""
        for cls in range(N_CLASSES):
            q = self.queues[cls]
            if self.policy.drop_policy[cls] is DropPolicy.DROP_OLDEST:
                while q and self._expired(cls, q[0][0], now_us):
                    q.popleft()
                    self.counters[cls].frames_dropped += 1
            if q:
                _, item = q.popleft()
                self.counters[cls].frames_delivered += 1
                return cls, item
        return None

    def queued(self, cls: int) -> int:
        return len(self.queues[cls])


# --------------------------------------------------------------------------- router


@dataclass
class PlaneCounters:
    frames_sent: int = 0
    frames_delivered: int = 0
    no_route: int = 0
    bad_frames: int = 0


class SensingPlane:
    """Routes frames from SRX entities to SPF ingress queues by STID."""

    def __init__(
        self,
        scheduler: Scheduler,
        trace: Trace,
        delay: DelayModel | None = None,
        policy: QosPolicy | None = None,
    ) -> None:
        self.scheduler = scheduler
        self.trace = trace
        self.delay = delay or DelayModel()
        self.policy = policy or QosPolicy()
        self.routes: dict[Stid, str] = {}
        self._ingress: dict[str, tuple[QosQueues, Callable[[bytes, str], None]]] = {}
        self.counters = PlaneCounters()
        self.capture: list[bytes] | None = None

    def attach_spf(self, spf_id: str, deliver: Callable[[bytes, str], None]) -> None:
        self._ingress[spf_id] = (QosQueues(self.policy), deliver)

    def queues(self, spf_id: str) -> QosQueues:
        return self._ingress[spf_id][0]

    def install_route(self, stid: Stid, spf_id: str) -> None:
        if spf_id not in self._ingress:
            raise IsacError("UNKNOWN_SPF", spf_id)
        self.routes[stid] = spf_id

    def remove_route(self, stid: Stid) -> None:
        self.routes.pop(stid, None)

    def route(self, stid: Stid) -> str:
        spf_id = self.routes.get(stid)
        if spf_id is None:
            self.counters.no_route += 1
            raise IsacError("NO_ROUTE", str(stid))
        return spf_id

    def send(self, source: str, raw: bytes) -> bool:
        """Accept a frame from ``source``; False when it was dropped at the router."""
        self.counters.frames_sent += 1
        try:
            _, qos, stid, _, _, _ = peek_header(raw)
        except IsacError:
            self.counters.bad_frames += 1
            return False
        try:
            spf_id = self.route(stid)
        except IsacError:
            return False
        self.scheduler.call_later(self.delay.delay(source, spf_id), self._arrive, spf_id, source, stid, qos, raw)
        return True

    def _arrive(self, spf_id: str, source: str, stid: Stid, qos: int, raw: bytes) -> None:
        queues, _ = self._ingress[spf_id]
        queues.enqueue(qos, (source, stid, raw), self.scheduler.now_us)
        self._service(spf_id)

    def _service(self, spf_id: str) -> None:
        queues, deliver = self._ingress[spf_id]
        nxt = queues.schedule(self.scheduler.now_us)
        if nxt is None:
            return
        qos, (source, stid, raw) = nxt
        if self.routes.get(stid) != spf_id:
            # route withdrawn while the frame was in flight
            self.counters.no_route += 1
            return
        _, _, _, seq, _, _ = peek_header(raw)
        self.trace.append(
            self.scheduler.now_us, source, spf_id, "SensingDataReport",
            {"stid": str(stid), "seq": seq, "qos_class": qos, "bytes": len(raw)},
        )
        self.counters.frames_delivered += 1
        if self.capture is not None:
            self.capture.append(raw)
        deliver(raw, source)
