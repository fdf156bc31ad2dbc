"""Core ISAC vocabulary: identifiers, areas, KPIs, sensing data and results.

All value types are frozen dataclasses with a ``to_doc``/``from_doc`` pair
that maps onto the canonical JSON documents used in scenarios, bus payloads
and sensing-plane frames.
"""
from __future__ import annotations

import enum
import json
import math
import random
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import geometry
from .errors import IsacError


def canonical_json(doc: Any) -> bytes:
    """Deterministic JSON encoding (sorted keys, no whitespace, no NaN)."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode(
        "utf-8"
    )


class Modality(str, enum.Enum):
    SIX_G = "SIX_G"
    WIFI = "WIFI"


class Role(str, enum.Enum):
    STX = "STX"
    SRX = "SRX"


class Mobility(str, enum.Enum):
    FIXED = "FIXED"
    MOBILE = "MOBILE"


class ObjectType(str, enum.Enum):
    HUMAN = "HUMAN"
    ROBOT = "ROBOT"
    VEHICLE = "VEHICLE"
    ANIMAL = "ANIMAL"
    UNKNOWN = "UNKNOWN"


class TaskState(str, enum.Enum):
    REQUESTED = "REQUESTED"
    ESTABLISHED = "ESTABLISHED"
    ACTIVE = "ACTIVE"
    MODIFYING = "MODIFYING"
    SUSPENDED = "SUSPENDED"
    TERMINATED = "TERMINATED"


_TRANSITIONS = {
    (TaskState.REQUESTED, TaskState.ESTABLISHED),
    (TaskState.ESTABLISHED, TaskState.ACTIVE),
    (TaskState.ACTIVE, TaskState.MODIFYING),
    (TaskState.MODIFYING, TaskState.ACTIVE),
    (TaskState.ACTIVE, TaskState.SUSPENDED),
    (TaskState.SUSPENDED, TaskState.ACTIVE),
}


def transition_allowed(src: TaskState, dst: TaskState) -> bool:
    if dst is TaskState.TERMINATED:
        return src is not TaskState.TERMINATED
    return (src, dst) in _TRANSITIONS


# --------------------------------------------------------------------------- STID

_HEX32 = re.compile(r"^[0-9a-f]{32}$")


@dataclass(frozen=True, order=True)
class Stid:
    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value < 1 << 128:
            raise IsacError("VALIDATION", "stid out of 128-bit range")

    def __str__(self) -> str:
        return f"{self.value:032x}"

    @classmethod
    def parse(cls, text: str) -> "Stid":
        if not isinstance(text, str) or not _HEX32.match(text):
            raise IsacError("VALIDATION", f"stid {text!r} is not 32 lowercase hex characters")
        return cls(int(text, 16))

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(16, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Stid":
        return cls(int.from_bytes(raw, "big"))


class StidRegistry:
    """Issues random STIDs and guarantees uniqueness within one run."""

    def __init__(self, seed: int | None = None, rng: random.Random | None = None) -> None:
        self._rng = rng if rng is not None else random.Random(seed)
        self._issued: set[int] = set()

    def __contains__(self, stid: Stid) -> bool:
        return stid.value in self._issued

    def __len__(self) -> int:
        return len(self._issued)

    def new(self) -> Stid:
        while True:
            value = self._rng.getrandbits(128)
            if value not in self._issued:
                self._issued.add(value)
                return Stid(value)


def new_stid(registry: StidRegistry) -> Stid:
    return registry.new()


# --------------------------------------------------------------------------- TSSA


def _pt(seq: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in seq)


@dataclass(frozen=True)
class Tssa:
    """Target sensing service area: a simple CCW polygon plus optional height band."""

    polygon: tuple[tuple[float, float], ...]
    z_range: tuple[float, float] | None = None
    frame: str = "ABSOLUTE"
    anchor: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        poly = tuple((float(p[0]), float(p[1])) for p in self.polygon)
        object.__setattr__(self, "polygon", poly)
        if len(poly) < 3:
            raise IsacError("VALIDATION", "polygon")
        if not geometry.is_simple(poly):
            raise IsacError("VALIDATION", "polygon")
        if geometry.signed_area(poly) <= 0:
            raise IsacError("VALIDATION", "polygon")
        if self.z_range is not None:
            z = (float(self.z_range[0]), float(self.z_range[1]))
            if not z[0] < z[1]:
                raise IsacError("VALIDATION", "z_range")
            object.__setattr__(self, "z_range", z)
        if self.frame not in ("ABSOLUTE", "RELATIVE"):
            raise IsacError("VALIDATION", "frame")
        if self.frame == "RELATIVE":
            if self.anchor is None:
                raise IsacError("VALIDATION", "anchor")
            object.__setattr__(self, "anchor", (float(self.anchor[0]), float(self.anchor[1])))

    @property
    def area(self) -> float:
        return geometry.signed_area(self.polygon)

    def resolve(self) -> "Tssa":
        """Absolute copy of a RELATIVE area, shifted by its anchor."""
        if self.frame == "ABSOLUTE":
            return self
        ax, ay = self.anchor  # type: ignore[misc]
        return Tssa(tuple((x + ax, y + ay) for x, y in self.polygon), self.z_range)

    def contains(self, point: Sequence[float], strict: bool = False) -> bool:
        return tssa_contains(self, point, strict=strict)

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {"frame": self.frame, "polygon": [list(p) for p in self.polygon]}
        if self.z_range is not None:
            doc["z_range"] = list(self.z_range)
        if self.anchor is not None:
            doc["anchor"] = list(self.anchor)
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Tssa":
        try:
            polygon = tuple(_pt(p)[:2] for p in doc["polygon"])
        except (KeyError, TypeError, IndexError) as exc:
            raise IsacError("VALIDATION", "polygon") from exc
        z = doc.get("z_range")
        anchor = doc.get("anchor")
        return cls(
            polygon=polygon,
            z_range=tuple(z) if z is not None else None,
            frame=doc.get("frame", "ABSOLUTE"),
            anchor=tuple(anchor) if anchor is not None else None,
        )


def tssa_contains(tssa: Tssa, point: Sequence[float], strict: bool = False) -> bool:
    """Closed-region membership of ``point`` (2D or 3D) in ``tssa``."""
    area = tssa.resolve()
    if len(point) >= 3:
        if area.z_range is None:
            if strict:
                raise IsacError("DIMENSION_MISMATCH", "3D point against a 2D-only TSSA")
        elif not area.z_range[0] <= point[2] <= area.z_range[1]:
            return False
    return geometry.point_in_polygon(point, area.polygon)


# --------------------------------------------------------------------------- KPIs

# field name -> True when larger measured values are better
KPI_DIRECTIONS: dict[str, bool] = {
    "confidence_level": True,
    "positioning_accuracy_m": False,
    "velocity_accuracy_mps": False,
    "sensing_resolution_m": False,
    "max_service_latency_ms": False,
    "refresh_rate_hz": True,
    "missed_detection_rate_max": False,
    "false_alarm_rate_max": False,
}
KPI_FIELDS = tuple(KPI_DIRECTIONS)
RATE_FIELDS = ("missed_detection_rate_max", "false_alarm_rate_max")
_UNIT_FIELDS = ("confidence_level", "missed_detection_rate_max", "false_alarm_rate_max")


@dataclass(frozen=True)
class KpiTargets:
    confidence_level: float
    positioning_accuracy_m: float | None = None
    velocity_accuracy_mps: float | None = None
    sensing_resolution_m: float | None = None
    max_service_latency_ms: float | None = None
    refresh_rate_hz: float | None = None
    missed_detection_rate_max: float | None = None
    false_alarm_rate_max: float | None = None

    def __post_init__(self) -> None:
        for name in KPI_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise IsacError("VALIDATION", name)
            if name in _UNIT_FIELDS:
                if not 0.0 <= value <= 1.0:
                    raise IsacError("VALIDATION", name)
            elif value <= 0:
                raise IsacError("VALIDATION", name)

    def targeted(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in KPI_FIELDS if getattr(self, n) is not None}

    def to_doc(self) -> dict:
        return self.targeted()

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "KpiTargets":
        unknown = set(doc) - set(KPI_FIELDS)
        if unknown:
            raise IsacError("VALIDATION", sorted(unknown)[0])
        if "confidence_level" not in doc:
            raise IsacError("VALIDATION", "confidence_level")
        return cls(**{k: doc[k] for k in KPI_FIELDS if k in doc})


@dataclass(frozen=True)
class KpiMeasured:
    """Observed KPI values with per-field sample counts over a time window."""

    values: Mapping[str, float | None]
    samples: Mapping[str, int]
    window: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        values = {n: self.values.get(n) for n in KPI_FIELDS}
        samples = {n: int(self.samples.get(n, 0)) for n in KPI_FIELDS}
        for n in KPI_FIELDS:
            if samples[n] < 0:
                raise IsacError("VALIDATION", f"{n} sample count")
            v = values[n]
            if v is None:
                continue
            # false alarms are a mean count per scan and may exceed one
            if n == "missed_detection_rate_max" and not 0.0 <= v <= 1.0:
                raise IsacError("VALIDATION", n)
            if n == "false_alarm_rate_max" and v < 0.0:
                raise IsacError("VALIDATION", n)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "samples", samples)

    def value(self, name: str) -> float | None:
        return self.values[name]

    def to_doc(self) -> dict:
        return {
            "values": {k: v for k, v in self.values.items() if v is not None},
            "samples": {k: v for k, v in self.samples.items() if v},
            "window": list(self.window),
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "KpiMeasured":
        return cls(dict(doc.get("values", {})), dict(doc.get("samples", {})), tuple(doc.get("window", (0, 0))))

    @classmethod
    def merge(cls, parts: Sequence["KpiMeasured"]) -> "KpiMeasured":
        """Aggregate consecutive windows into one measurement.

        Error fields combine as RMS, latency as the worst case, everything
        else as a sample-weighted mean.
        """
        if not parts:
            return cls({}, {})
        values: dict[str, float | None] = {}
        samples: dict[str, int] = {}
        for name in KPI_FIELDS:
            pairs = [(p.values[name], p.samples[name]) for p in parts if p.values[name] is not None and p.samples[name]]
            n = sum(s for _, s in pairs)
            samples[name] = n
            if not pairs:
                values[name] = None
            elif name == "max_service_latency_ms":
                values[name] = max(v for v, _ in pairs)
            elif name in ("positioning_accuracy_m", "velocity_accuracy_mps"):
                values[name] = math.sqrt(sum(v * v * s for v, s in pairs) / n)
            else:
                values[name] = sum(v * s for v, s in pairs) / n
        window = (min(p.window[0] for p in parts), max(p.window[1] for p in parts))
        return cls(values, samples, window)


def kpi_satisfied(
    targets: KpiTargets, measured: KpiMeasured, min_samples: int = 1
) -> tuple[dict[str, bool], bool]:
    """Per-field verdicts for every targeted field, plus the conjunction."""
    verdicts: dict[str, bool] = {}
    for name, target in targets.targeted().items():
        value = measured.values[name]
        count = measured.samples[name]
        needed = min_samples if name in RATE_FIELDS else 1
        if value is None or count < needed:
            raise IsacError("INSUFFICIENT_SAMPLES", name)
        verdicts[name] = value >= target if KPI_DIRECTIONS[name] else value <= target
    return verdicts, all(verdicts.values())


# --------------------------------------------------------------------------- capabilities & data


@dataclass(frozen=True)
class SensingCapability:
    entity_id: str
    modalities: frozenset[Modality]
    roles: frozenset[Role]
    position: tuple[float, float]
    range_m: float
    azimuth_deg: float = 0.0
    width_deg: float = 360.0
    max_refresh_hz: float = 10.0
    mobility: Mobility = Mobility.FIXED
    af_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "modalities", frozenset(Modality(m) for m in self.modalities))
        object.__setattr__(self, "roles", frozenset(Role(r) for r in self.roles))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "mobility", Mobility(self.mobility))
        if not self.roles:
            raise IsacError("VALIDATION", "roles")
        if not self.modalities:
            raise IsacError("VALIDATION", "modalities")
        if not self.range_m > 0:
            raise IsacError("VALIDATION", "coverage")

    def moved_to(self, position: Sequence[float]) -> "SensingCapability":
        return SensingCapability(
            self.entity_id, self.modalities, self.roles, (position[0], position[1]), self.range_m,
            self.azimuth_deg, self.width_deg, self.max_refresh_hz, self.mobility, self.af_id,
        )

    def to_doc(self) -> dict:
        doc = {
            "entity_id": self.entity_id,
            "modalities": sorted(m.value for m in self.modalities),
            "roles": sorted(r.value for r in self.roles),
            "coverage": {
                "position": list(self.position),
                "range_m": self.range_m,
                "sector": {"azimuth_deg": self.azimuth_deg, "width_deg": self.width_deg},
            },
            "max_refresh_hz": self.max_refresh_hz,
            "mobility": self.mobility.value,
        }
        if self.af_id is not None:
            doc["af_id"] = self.af_id
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any], entity_id: str | None = None) -> "SensingCapability":
        cov = doc["coverage"]
        sector = cov.get("sector", {})
        return cls(
            entity_id=doc.get("entity_id", entity_id),
            modalities=frozenset(doc["modalities"]),
            roles=frozenset(doc["roles"]),
            position=tuple(cov["position"]),
            range_m=float(cov["range_m"]),
            azimuth_deg=float(sector.get("azimuth_deg", 0.0)),
            width_deg=float(sector.get("width_deg", 360.0)),
            max_refresh_hz=float(doc.get("max_refresh_hz", 10.0)),
            mobility=Mobility(doc.get("mobility", "FIXED")),
            af_id=doc.get("af_id"),
        )


@dataclass(frozen=True)
class Detection:
    position_m: tuple[float, ...]
    velocity_mps: tuple[float, ...]
    snr_db: float
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise IsacError("VALIDATION", "confidence")

    def to_doc(self) -> dict:
        return {
            "position_m": list(self.position_m),
            "velocity_mps": list(self.velocity_mps),
            "snr_db": self.snr_db,
            "confidence": self.confidence,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Detection":
        return cls(
            tuple(float(v) for v in doc["position_m"]),
            tuple(float(v) for v in doc["velocity_mps"]),
            float(doc["snr_db"]),
            float(doc["confidence"]),
        )


@dataclass(frozen=True)
class SensingData:
    stid: Stid
    srx_id: str
    modality: Modality
    window_end_us: int
    detections: tuple[Detection, ...]
    noise_sigma_m: float
    seq: int
    stx_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "modality", Modality(self.modality))
        if not self.noise_sigma_m > 0:
            raise IsacError("VALIDATION", "noise_sigma_m")

    def to_doc(self) -> dict:
        doc = {
            "stid": str(self.stid),
            "srx_id": self.srx_id,
            "modality": self.modality.value,
            "window_end_us": self.window_end_us,
            "detections": [d.to_doc() for d in self.detections],
            "noise_sigma_m": self.noise_sigma_m,
            "seq": self.seq,
        }
        if self.stx_id is not None:
            doc["stx_id"] = self.stx_id
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "SensingData":
        return cls(
            stid=Stid.parse(doc["stid"]),
            srx_id=doc["srx_id"],
            modality=Modality(doc["modality"]),
            window_end_us=int(doc["window_end_us"]),
            detections=tuple(Detection.from_doc(d) for d in doc["detections"]),
            noise_sigma_m=float(doc["noise_sigma_m"]),
            seq=int(doc["seq"]),
            stx_id=doc.get("stx_id"),
        )


@dataclass(frozen=True)
class SensingResult:
    stid: Stid
    track_id: int
    object_type: ObjectType
    position_m: tuple[float, ...]
    velocity_mps: tuple[float, ...]
    trajectory: tuple[tuple[float, ...], ...]
    size_m: float
    shape_tag: str
    confidence: float
    time_of_generation_us: int
    material_tag: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "object_type", ObjectType(self.object_type))
        if not 0.0 <= self.confidence <= 1.0:
            raise IsacError("VALIDATION", "confidence")

    def to_doc(self) -> dict:
        doc = {
            "stid": str(self.stid),
            "track_id": self.track_id,
            "object_type": self.object_type.value,
            "position_m": list(self.position_m),
            "velocity_mps": list(self.velocity_mps),
            "trajectory": [list(p) for p in self.trajectory],
            "size_m": self.size_m,
            "shape_tag": self.shape_tag,
            "confidence": self.confidence,
            "time_of_generation_us": self.time_of_generation_us,
        }
        if self.material_tag is not None:
            doc["material_tag"] = self.material_tag
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "SensingResult":
        return cls(
            stid=Stid.parse(doc["stid"]),
            track_id=int(doc["track_id"]),
            object_type=ObjectType(doc["object_type"]),
            position_m=tuple(doc["position_m"]),
            velocity_mps=tuple(doc["velocity_mps"]),
            trajectory=tuple(tuple(p) for p in doc["trajectory"]),
            size_m=float(doc["size_m"]),
            shape_tag=doc["shape_tag"],
            confidence=float(doc["confidence"]),
            time_of_generation_us=int(doc["time_of_generation_us"]),
            material_tag=doc.get("material_tag"),
        )


@dataclass(frozen=True)
class StgMember:
    entity_id: str
    roles: frozenset[Role]
    modality: Modality
    af_id: str | None = None

    def to_doc(self) -> dict:
        doc = {"entity_id": self.entity_id, "roles": sorted(r.value for r in self.roles), "modality": self.modality.value}
        if self.af_id is not None:
            doc["af_id"] = self.af_id
        return doc


class StgMode(str, enum.Enum):
    MONOSTATIC = "MONOSTATIC"
    BISTATIC = "BISTATIC"
    MULTISTATIC = "MULTISTATIC"


def stg_mode(members: Sequence[StgMember]) -> StgMode | None:
    """Mode implied by member roles, or None if no valid mode exists."""
    if not members:
        return None
    srx = [m for m in members if Role.SRX in m.roles]
    stx = [m for m in members if Role.STX in m.roles]
    if not srx:
        return None
    if len(members) == 1:
        return StgMode.MONOSTATIC if len(members[0].roles) == 2 else None
    if not any(t.entity_id != r.entity_id for t in stx for r in srx):
        return None
    if len(srx) >= 2 or len(stx) >= 2:
        return StgMode.MULTISTATIC
    return StgMode.BISTATIC


@dataclass(frozen=True)
class Stg:
    members: tuple[StgMember, ...]
    spf_ids: tuple[str, ...]
    mode: StgMode

    def __post_init__(self) -> None:
        if not self.spf_ids:
            raise IsacError("VALIDATION", "spf_ids")
        if stg_mode(self.members) is not self.mode:
            raise IsacError("VALIDATION", "mode")

    @property
    def entity_ids(self) -> tuple[str, ...]:
        return tuple(m.entity_id for m in self.members)

    def srx_ids(self) -> tuple[str, ...]:
        return tuple(m.entity_id for m in self.members if Role.SRX in m.roles)

    def stx_ids(self) -> tuple[str, ...]:
        return tuple(m.entity_id for m in self.members if Role.STX in m.roles)

    def member(self, entity_id: str) -> StgMember | None:
        for m in self.members:
            if m.entity_id == entity_id:
                return m
        return None

    def to_doc(self) -> dict:
        return {"members": [m.to_doc() for m in self.members], "spf_ids": list(self.spf_ids), "mode": self.mode.value}


@dataclass
class ScheduleWindow:
    """Daily active window in seconds of day; ``end`` may wrap past midnight."""

    start_s: int
    end_s: int

    @staticmethod
    def _parse(text: str) -> int:
        parts = [int(p) for p in text.split(":")]
        while len(parts) < 3:
            parts.append(0)
        h, m, s = parts
        if not (0 <= h <= 24 and 0 <= m < 60 and 0 <= s < 60):
            raise IsacError("VALIDATION", "schedule")
        return h * 3600 + m * 60 + s

    @classmethod
    def from_doc(cls, doc: Mapping[str, str]) -> "ScheduleWindow":
        try:
            start, end = cls._parse(doc["start"]), cls._parse(doc["end"])
        except (KeyError, ValueError, AttributeError) as exc:
            raise IsacError("VALIDATION", "schedule") from exc
        if start == end:
            raise IsacError("VALIDATION", "schedule")
        return cls(start, end)

    def to_doc(self) -> dict:
        fmt = lambda s: f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"  # noqa: E731
        return {"start": fmt(self.start_s), "end": fmt(self.end_s)}

    def is_open(self, second_of_day: float) -> bool:
        t = second_of_day % 86400
        if self.start_s < self.end_s:
            return self.start_s <= t < self.end_s
        return t >= self.start_s or t < self.end_s

    def next_change(self, second_of_day: float) -> float:
        """Seconds until the window next opens or closes."""
        t = second_of_day % 86400
        boundary = self.end_s if self.is_open(t) else self.start_s
        delta = (boundary - t) % 86400
        return delta if delta > 0 else 86400.0
