"""Synthetic world, sensor models and the sensing-capable devices.

Devices register their capabilities with the SCF over the bus, accept
activation commands and, while active as SRX, scan the world once per
refresh period and push the resulting SensingData onto the sensing plane.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import geometry
from .bus import BusMessage, NetworkFunction, NfKind
from .domain import (
    Detection,
    Modality,
    ObjectType,
    Role,
    SensingCapability,
    SensingData,
    Stid,
)
from .errors import IsacError
from .sensing_plane import PayloadType, SensingPlane, SpFrame, encode

Waypoints = tuple[tuple[int, tuple[float, float]], ...]


def _check_waypoints(waypoints: Waypoints) -> Waypoints:
    wps = tuple((int(t), (float(p[0]), float(p[1]))) for t, p in waypoints)
    if not wps:
        raise IsacError("VALIDATION", "waypoints")
    if any(b[0] <= a[0] for a, b in zip(wps, wps[1:])):
        raise IsacError("VALIDATION", "waypoint times must be strictly increasing")
    return wps


def interpolate(waypoints: Waypoints, t_us: int) -> tuple[float, float]:
    """Piecewise-linear position; holds the end points outside the time span."""
    times = [w[0] for w in waypoints]
    if t_us <= times[0]:
        return waypoints[0][1]
    if t_us >= times[-1]:
        return waypoints[-1][1]
    i = bisect.bisect_right(times, t_us) - 1
    (t0, p0), (t1, p1) = waypoints[i], waypoints[i + 1]
    f = (t_us - t0) / (t1 - t0)
    return (p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1]))


def path_velocity(waypoints: Waypoints, t_us: int) -> tuple[float, float]:
    times = [w[0] for w in waypoints]
    if t_us < times[0] or t_us >= times[-1] or len(waypoints) < 2:
        return (0.0, 0.0)
    i = bisect.bisect_right(times, t_us) - 1
    (t0, p0), (t1, p1) = waypoints[i], waypoints[i + 1]
    dt = (t1 - t0) / 1e6
    return ((p1[0] - p0[0]) / dt, (p1[1] - p0[1]) / dt)


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: str
    object_type: ObjectType
    waypoints: Waypoints
    size_m: float = 0.5
    material_tag: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "object_type", ObjectType(self.object_type))
        object.__setattr__(self, "waypoints", _check_waypoints(self.waypoints))

    def position(self, t_us: int) -> tuple[float, float]:
        return interpolate(self.waypoints, t_us)

    def velocity(self, t_us: int) -> tuple[float, float]:
        return path_velocity(self.waypoints, t_us)


@dataclass(frozen=True)
class Wall:
    segment: tuple[tuple[float, float], tuple[float, float]]
    opaque_to: frozenset[Modality] = frozenset({Modality.SIX_G, Modality.WIFI})

    def __post_init__(self) -> None:
        a, b = self.segment
        seg = ((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
        if seg[0] == seg[1]:
            raise IsacError("VALIDATION", "degenerate wall")
        object.__setattr__(self, "segment", seg)
        object.__setattr__(self, "opaque_to", frozenset(Modality(m) for m in self.opaque_to))


@dataclass(frozen=True)
class SensorModel:
    entity_id: str
    capability: SensingCapability
    p_detect: float = 0.9
    sigma_m: float = 0.3
    false_alarm_rate: float = 0.0
    requires_los: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_detect <= 1.0:
            raise IsacError("VALIDATION", "p_detect")
        if not self.sigma_m > 0:
            raise IsacError("VALIDATION", "sigma_m")
        if not self.false_alarm_rate >= 0:
            raise IsacError("VALIDATION", "false_alarm_rate")


@dataclass
class World:
    objects: list[GroundTruthObject] = field(default_factory=list)
    walls: list[Wall] = field(default_factory=list)
    entity_paths: dict[str, Waypoints] = field(default_factory=dict)
    time_us: int = 0
    # stid -> entities currently emitting a sensing signal for it
    transmitters: dict[Stid, set[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.objects = sorted(self.objects, key=lambda o: o.object_id)

    def object(self, object_id: str) -> GroundTruthObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def entity_position(self, entity_id: str, default: Sequence[float], t_us: int | None = None) -> tuple[float, float]:
        path = self.entity_paths.get(entity_id)
        if path is None:
            return (float(default[0]), float(default[1]))
        return interpolate(path, self.time_us if t_us is None else t_us)


def step(world: World, dt_us: int) -> World:
    """Advance world time; object positions follow from their waypoints."""
    if dt_us <= 0:
        raise IsacError("VALIDATION", "dt must be positive")
    world.time_us += int(dt_us)
    return world


def line_of_sight(a: Sequence[float], b: Sequence[float], walls: Iterable[Wall], modality: Modality) -> bool:
    modality = Modality(modality)
    return not geometry.segment_blocked(a, b, (w.segment for w in walls if modality in w.opaque_to))


# --------------------------------------------------------------------------- scanning


class LabelChannel:
    """Ground-truth side channel: which object (if any) produced each detection."""

    def __init__(self, world: World) -> None:
        self.world = world
        self._labels: dict[tuple[str, Stid, int], tuple[str | None, ...]] = {}

    def record(self, srx_id: str, stid: Stid, seq: int, labels: Sequence[str | None]) -> None:
        self._labels[(srx_id, stid, seq)] = tuple(labels)

    def labels(self, srx_id: str, stid: Stid, seq: int) -> tuple[str | None, ...] | None:
        return self._labels.get((srx_id, stid, seq))

    def items(self):
        return self._labels.items()

    def objects_at(self, t_us: int) -> list[tuple[GroundTruthObject, tuple[float, float]]]:
        return [(o, o.position(t_us)) for o in self.world.objects]


def scan(
    srx: SensorModel,
    world: World,
    stid: Stid,
    seq: int,
    rng: np.random.Generator,
    *,
    modality: Modality | None = None,
    window_end_us: int | None = None,
    stx_id: str | None = None,
    labels: LabelChannel | None = None,
) -> SensingData:
    """One measurement window of ``srx`` against the world at ``world.time_us``."""
    cap = srx.capability
    modality = Modality(modality) if modality is not None else sorted(cap.modalities)[0]
    t = world.time_us
    origin = world.entity_position(srx.entity_id, cap.position, t)
    sigma = srx.sigma_m
    detections: list[Detection] = []
    truth_labels: list[str | None] = []
    blocking = [w.segment for w in world.walls if modality in w.opaque_to]

    for obj in world.objects:
        pos = obj.position(t)
        if not geometry.in_sector(np.array([pos]), origin, cap.range_m, cap.azimuth_deg, cap.width_deg)[0]:
            continue
        if srx.requires_los and geometry.segment_blocked(origin, pos, blocking):
            continue
        if rng.random() >= srx.p_detect:
            continue
        noise = rng.normal(0.0, sigma, size=4)
        vel = obj.velocity(t)
        dist = math.hypot(pos[0] - origin[0], pos[1] - origin[1])
        detections.append(
            Detection(
                position_m=(pos[0] + float(noise[0]), pos[1] + float(noise[1])),
                velocity_mps=(vel[0] + float(noise[2]), vel[1] + float(noise[3])),
                snr_db=round(30.0 - 20.0 * math.log10(max(dist, 1.0)), 3),
                confidence=float(rng.uniform(0.6, 1.0)),
            )
        )
        truth_labels.append(obj.object_id)

    n_false = int(rng.poisson(srx.false_alarm_rate)) if srx.false_alarm_rate > 0 else 0
    for _ in range(n_false):
        u, v = rng.random(2)
        r = cap.range_m * math.sqrt(u)
        if cap.width_deg >= 360.0:
            theta = 2.0 * math.pi * v
        else:
            theta = math.radians(cap.azimuth_deg + (v - 0.5) * cap.width_deg)
        noise = rng.normal(0.0, sigma, size=2)
        detections.append(
            Detection(
                position_m=(origin[0] + r * math.cos(theta), origin[1] + r * math.sin(theta)),
                velocity_mps=(float(noise[0]), float(noise[1])),
                snr_db=round(float(rng.uniform(0.0, 6.0)), 3),
                confidence=float(rng.uniform(0.1, 0.5)),
            )
        )
        truth_labels.append(None)

    data = SensingData(
        stid=stid,
        srx_id=srx.entity_id,
        modality=modality,
        window_end_us=t if window_end_us is None else window_end_us,
        detections=tuple(detections),
        noise_sigma_m=sigma,
        seq=seq,
        stx_id=stx_id,
    )
    if labels is not None:
        labels.record(srx.entity_id, stid, seq, truth_labels)
    return data


# --------------------------------------------------------------------------- devices

SERVICE_BY_KIND = {
    NfKind.AN: "N_AN",
    NfKind.UE: "Nue",
    NfKind.TNAN: "Ntnan",
    NfKind.N3IWF: "Nn3iwf",
}


@dataclass
class _Activation:
    stid: Stid
    roles: frozenset[Role]
    modality: Modality
    period_us: int
    qos_class: int
    mode: str
    stx_ids: tuple[str, ...]
    handle: list | None = None


class SensingDevice(NetworkFunction):
    """A UE, 6G AN, or non-6G access point acting as STX and/or SRX."""

    def __init__(
        self,
        sensor: SensorModel,
        kind: NfKind | str,
        world: World,
        plane: SensingPlane,
        rng: np.random.Generator,
        labels: LabelChannel | None = None,
        af_id: str | None = None,
    ) -> None:
        super().__init__(sensor.entity_id)
        self.kind = NfKind(kind)
        self.services = frozenset({SERVICE_BY_KIND.get(self.kind, "Nue")})
        self.sensor = sensor
        self.world = world
        self.plane = plane
        self.rng = rng
        self.labels = labels
        self.af_id = af_id
        self.accept_activation = True
        self.active: dict[Stid, _Activation] = {}
        self._seq: dict[Stid, int] = {}
        self._last_reported = sensor.capability.position
        self.scans = 0

    # capability -------------------------------------------------------------

    def position(self, t_us: int | None = None) -> tuple[float, float]:
        return self.world.entity_position(self.nf_id, self.sensor.capability.position, t_us)

    def capability(self) -> SensingCapability:
        cap = self.sensor.capability
        cap = cap.moved_to(self.position(self.now_us if self.bus else 0))
        if self.af_id is not None and cap.af_id != self.af_id:
            cap = SensingCapability(
                cap.entity_id, cap.modalities, cap.roles, cap.position, cap.range_m, cap.azimuth_deg,
                cap.width_deg, cap.max_refresh_hz, cap.mobility, self.af_id,
            )
        return cap

    def registration_payload(self) -> dict:
        cap = self.capability()
        doc = cap.to_doc()
        return {
            "entity_id": self.nf_id,
            "kind": self.kind.value,
            "modalities": doc["modalities"],
            "roles": doc["roles"],
            "af_id": self.af_id,
            "capability": doc,
        }

    def register(self) -> dict:
        assert self.bus is not None
        return self.bus.request(self.nf_id, "Nscf", "RegisterSensingCapability", self.registration_payload())

    def check_mobility(self, threshold_m: float = 0.5) -> dict | None:
        """Report a position change to the SCF once it exceeds ``threshold_m``."""
        assert self.bus is not None
        pos = self.position(self.now_us)
        if geometry.distance(pos, self._last_reported) < threshold_m:
            return None
        self._last_reported = pos
        return self.bus.request(
            self.nf_id, "Nscf", "MobilityUpdate", {"entity_id": self.nf_id, "position": list(pos)}
        )

    # control ----------------------------------------------------------------

    def op_ActivateSensing(self, msg: BusMessage) -> dict:
        p = msg.payload
        if not self.accept_activation:
            raise IsacError("MEMBER_REJECTED", self.nf_id)
        stid = Stid.parse(p["stid"])
        self._stop(stid)
        roles = frozenset(Role(r) for r in p["roles"])
        refresh = min(float(p["refresh_rate_hz"]), self.sensor.capability.max_refresh_hz)
        act = _Activation(
            stid=stid,
            roles=roles,
            modality=Modality(p["modality"]),
            period_us=max(1, int(round(1e6 / refresh))),
            qos_class=int(p.get("qos_class", 0)),
            mode=p.get("mode", "MONOSTATIC"),
            stx_ids=tuple(p.get("stx_ids", ())),
        )
        self.active[stid] = act
        if Role.STX in roles:
            self.world.transmitters.setdefault(stid, set()).add(self.nf_id)
        if Role.SRX in roles:
            nxt = (self.now_us // act.period_us + 1) * act.period_us
            act.handle = self.bus.scheduler.schedule(nxt, self._scan_tick, stid, nxt)
        return {"entity_id": self.nf_id, "stid": p["stid"], "accepted": True}

    def op_DeactivateSensing(self, msg: BusMessage) -> dict:
        stid = Stid.parse(msg.payload["stid"])
        was_active = stid in self.active
        self._stop(stid)
        return {"entity_id": self.nf_id, "stid": msg.payload["stid"], "was_active": was_active}

    def _stop(self, stid: Stid) -> None:
        act = self.active.pop(stid, None)
        if act is None:
            return
        if act.handle is not None:
            self.bus.scheduler.cancel(act.handle)
        tx = self.world.transmitters.get(stid)
        if tx is not None:
            tx.discard(self.nf_id)

    # sensing ----------------------------------------------------------------

    def _illuminated(self, act: _Activation) -> bool:
        if act.mode == "MONOSTATIC":
            return Role.STX in act.roles
        return bool(self.world.transmitters.get(act.stid))

    def scan(self, stid: Stid, window_end_us: int) -> SensingData:
        act = self.active.get(stid)
        if act is None or Role.SRX not in act.roles:
            raise IsacError("NOT_ACTIVATED", f"{self.nf_id} for {stid}")
        seq = self._seq.get(stid, 0) + 1
        self._seq[stid] = seq
        self.world.time_us = window_end_us
        stx = None
        if act.mode != "MONOSTATIC":
            tx = sorted(self.world.transmitters.get(stid, ()))
            stx = next((t for t in tx if t != self.nf_id), tx[0] if tx else None)
        self.scans += 1
        return scan(
            self.sensor, self.world, stid, seq, self.rng,
            modality=act.modality, window_end_us=window_end_us, stx_id=stx, labels=self.labels,
        )

    def _scan_tick(self, stid: Stid, window_end_us: int) -> None:
        act = self.active.get(stid)
        if act is None:
            return
        nxt = window_end_us + act.period_us
        act.handle = self.bus.scheduler.schedule(nxt, self._scan_tick, stid, nxt)
        if not self._illuminated(act):
            return
        data = self.scan(stid, window_end_us)
        frame = SpFrame(
            PayloadType.SENSING_DATA, act.qos_class, stid, data.seq, self.now_us, data.to_doc()
        )
        self.plane.send(self.nf_id, encode(frame))


class AssistingAf(NetworkFunction):
    """Trusted AF fronting Wi-Fi capable devices the MNO cannot reach directly."""

    kind = NfKind.AF
    services = frozenset({"Naf"})

    def __init__(self, af_id: str) -> None:
        super().__init__(af_id)
        self.devices: list[SensingDevice] = []

    def register_devices(self) -> list[dict]:
        out = []
        for dev in self.devices:
            out.append(self.bus.request(self.nf_id, "Nscf", "RegisterSensingCapability", dev.registration_payload()))
        return out

    def _device(self, entity_id: str) -> SensingDevice:
        for dev in self.devices:
            if dev.nf_id == entity_id:
                return dev
        raise IsacError("UNKNOWN_ENTITY", entity_id)

    def op_ActivateSensing(self, msg: BusMessage) -> dict:
        dev = self._device(msg.payload["entity_id"])
        return self.bus.request(self.nf_id, dev.nf_id, "ActivateSensing", msg.payload)

    def op_DeactivateSensing(self, msg: BusMessage) -> dict:
        dev = self._device(msg.payload["entity_id"])
        return self.bus.request(self.nf_id, dev.nf_id, "DeactivateSensing", msg.payload)

    def op_AssistanceRequest(self, msg: BusMessage) -> dict:
        wanted = set(msg.payload.get("entity_ids", ()))
        offered = [d.nf_id for d in self.devices if not wanted or d.nf_id in wanted]
        return {"af_id": self.nf_id, "entity_ids": sorted(offered), "stid": msg.payload.get("stid")}


def register_capabilities(entities: Iterable[SensingDevice], afs: Iterable[AssistingAf] = ()) -> list[dict]:
    """Register every entity's sensing capability with the SCF, AF-fronted ones via their AF."""
    out = []
    for dev in entities:
        if dev.af_id is None:
            out.append(dev.register())
    for af in afs:
        out.extend(af.register_devices())
    return out
