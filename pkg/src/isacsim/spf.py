"""Sensing Processing Function: ingest, fuse, track, publish.

Frames arrive from the sensing plane tagged with an STID.  Accepted
SensingData is buffered per refresh window; once every expected SRX has
reported (or a short grace timer fires) the window is fused, fed through an
alpha-beta tracker and the confirmed tracks inside the TSSA are published as
SensingResults.  Per-window KPIs are reported to the SCF.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .bus import BusMessage, NetworkFunction, NfKind, NfStatus
from .domain import (
    KPI_FIELDS,
    Detection,
    KpiMeasured,
    KpiTargets,
    Modality,
    ObjectType,
    SensingData,
    SensingResult,
    Stid,
    Tssa,
)
from .env import LabelChannel
from .errors import IsacError
from .sensing_plane import decode


class FusionPolicy(str, enum.Enum):
    NONE = "NONE"
    INVERSE_VARIANCE = "INVERSE_VARIANCE"


DEFAULT_GATE_M = 2.0


def gate_for(targets: KpiTargets) -> float:
    if targets.positioning_accuracy_m is not None:
        return 2.0 * targets.positioning_accuracy_m
    return DEFAULT_GATE_M


# --------------------------------------------------------------------------- fusion


@dataclass(frozen=True)
class DetectionStream:
    srx_id: str
    sigma_m: float
    detections: tuple[Detection, ...]
    modality: Modality = Modality.SIX_G
    labels: tuple[str | None, ...] | None = None


@dataclass(frozen=True)
class FusedDetection:
    position_m: tuple[float, ...]
    velocity_mps: tuple[float, ...]
    sigma_m: float
    confidence: float
    snr_db: float
    sources: tuple[tuple[str, int], ...]
    modalities: frozenset[Modality]
    label: str | None = None

    @property
    def merged(self) -> bool:
        return len(self.sources) > 1


def _dist(a: Sequence[float], b: Sequence[float]) -> float:
    n = min(len(a), len(b))
    return math.sqrt(sum((a[i] - b[i]) ** 2 for i in range(n)))


def _single(stream: DetectionStream, idx: int) -> FusedDetection:
    det = stream.detections[idx]
    label = stream.labels[idx] if stream.labels is not None else None
    return FusedDetection(
        det.position_m, det.velocity_mps, stream.sigma_m, det.confidence, det.snr_db,
        ((stream.srx_id, idx),), frozenset({stream.modality}), label,
    )


def fuse(
    streams: Sequence[DetectionStream],
    gate_m: float,
    policy: FusionPolicy = FusionPolicy.INVERSE_VARIANCE,
) -> list[FusedDetection]:
    """Merge detections of the same object seen by different SRX.

    Cross-stream pairs within ``gate_m`` are joined in order of increasing
    distance (ties by SRX id and index), never placing two detections of one
    SRX in the same cluster.  Each cluster becomes one inverse-variance
    weighted detection; everything else passes through.
    """
    by_srx = {s.srx_id: s for s in streams}
    if len(by_srx) != len(streams):
        raise IsacError("VALIDATION", "duplicate srx stream")
    keys = [(srx, i) for srx in sorted(by_srx) for i in range(len(by_srx[srx].detections))]
    if policy is FusionPolicy.NONE or len(by_srx) < 2:
        return [_single(by_srx[srx], i) for srx, i in keys]

    pos = {k: by_srx[k[0]].detections[k[1]].position_m for k in keys}
    pairs = []
    for a in range(len(keys)):
        ka = keys[a]
        for b in range(a + 1, len(keys)):
            kb = keys[b]
            if kb[0] == ka[0]:
                continue
            d = _dist(pos[ka], pos[kb])
            if d <= gate_m:
                pairs.append((d, ka, kb))
    pairs.sort()

    parent = {k: k for k in keys}
    members: dict[tuple[str, int], list[tuple[str, int]]] = {k: [k] for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for _, ka, kb in pairs:
        ra, rb = find(ka), find(kb)
        if ra == rb:
            continue
        srx_a = {m[0] for m in members[ra]}
        if any(m[0] in srx_a for m in members[rb]):
            continue
        root, other = (ra, rb) if ra < rb else (rb, ra)
        parent[other] = root
        members[root].extend(members.pop(other))

    out = []
    for root in sorted(members):
        group = sorted(members[root])
        if len(group) == 1:
            out.append(_single(by_srx[group[0][0]], group[0][1]))
            continue
        out.append(_combine([(by_srx[s], i) for s, i in group]))
    return out


def _combine(parts: list[tuple[DetectionStream, int]]) -> FusedDetection:
    weights = [1.0 / (s.sigma_m * s.sigma_m) for s, _ in parts]
    wsum = sum(weights)
    dets = [s.detections[i] for s, i in parts]
    dim = min(len(d.position_m) for d in dets)
    vdim = min(len(d.velocity_mps) for d in dets)
    position = tuple(sum(w * d.position_m[k] for w, d in zip(weights, dets)) / wsum for k in range(dim))
    velocity = tuple(sum(w * d.velocity_mps[k] for w, d in zip(weights, dets)) / wsum for k in range(vdim))
    miss = 1.0
    for d in dets:
        miss *= 1.0 - d.confidence
    label = None
    for s, i in parts:
        if s.labels is not None and s.labels[i] is not None:
            label = s.labels[i]
            break
    return FusedDetection(
        position_m=position,
        velocity_mps=velocity,
        sigma_m=math.sqrt(1.0 / wsum),
        confidence=1.0 - miss,
        snr_db=max(d.snr_db for d in dets),
        sources=tuple((s.srx_id, i) for s, i in parts),
        modalities=frozenset(s.modality for s, _ in parts),
        label=label,
    )


# --------------------------------------------------------------------------- tracking


@dataclass
class Track:
    track_id: int
    position: list[float]
    velocity: list[float]
    t_us: int
    hits: int = 1
    misses: int = 0
    consecutive_misses: int = 0
    outcomes: deque = field(default_factory=lambda: deque(maxlen=10))
    det_confidences: deque = field(default_factory=lambda: deque(maxlen=10))
    history: deque = field(default_factory=lambda: deque(maxlen=10))
    label: str | None = None
    updated: bool = True

    @property
    def confidence(self) -> float:
        recent_hits = sum(self.outcomes)
        ratio = recent_hits / len(self.outcomes) if self.outcomes else 0.0
        mean_conf = sum(self.det_confidences) / len(self.det_confidences) if self.det_confidences else 0.0
        return max(0.0, min(1.0, ratio, mean_conf))


class AlphaBetaTracker:
    """Nearest-neighbour association plus an alpha-beta filter per track.

    Confidence is the hit ratio over the last ``hit_window`` windows, capped
    by the mean confidence of the detections associated in that span.
    """

    def __init__(
        self,
        gate_m: float = DEFAULT_GATE_M,
        alpha: float = 0.5,
        beta: float = 0.2,
        confirm_hits: int = 3,
        drop_misses: int = 5,
        history: int = 10,
        hit_window: int = 10,
    ) -> None:
        self.gate_m = gate_m
        self.alpha = alpha
        self.beta = beta
        self.confirm_hits = confirm_hits
        self.drop_misses = drop_misses
        self.history_len = history
        self.hit_window = hit_window
        self.tracks: dict[int, Track] = {}
        self._next_id = 1

    def reset(self) -> None:
        self.tracks.clear()

    def _new_track(self, det: FusedDetection, t_us: int) -> Track:
        tr = Track(
            track_id=self._next_id,
            position=list(det.position_m),
            velocity=[0.0] * len(det.position_m),
            t_us=t_us,
            outcomes=deque([True], maxlen=self.hit_window),
            det_confidences=deque([det.confidence], maxlen=self.hit_window),
            history=deque([tuple(det.position_m)], maxlen=self.history_len),
            label=det.label,
        )
        self._next_id += 1
        self.tracks[tr.track_id] = tr
        return tr

    def predict(self, tr: Track, t_us: int) -> list[float]:
        dt = (t_us - tr.t_us) / 1e6
        return [p + v * dt for p, v in zip(tr.position, tr.velocity)]

    def update(self, detections: Sequence[FusedDetection], t_us: int) -> list[Track]:
        """Advance all tracks to ``t_us``; return the confirmed tracks hit this window."""
        preds = {tid: self.predict(tr, t_us) for tid, tr in self.tracks.items()}
        pairs = []
        for tid in sorted(self.tracks):
            for j, det in enumerate(detections):
                d = _dist(preds[tid], det.position_m)
                if d <= self.gate_m:
                    pairs.append((d, tid, j))
        pairs.sort()
        used_t: set[int] = set()
        used_d: set[int] = set()
        for _, tid, j in pairs:
            if tid in used_t or j in used_d:
                continue
            used_t.add(tid)
            used_d.add(j)
            self._correct(self.tracks[tid], preds[tid], detections[j], t_us)

        for tid in sorted(self.tracks):
            if tid in used_t:
                continue
            tr = self.tracks[tid]
            tr.updated = False
            tr.misses += 1
            tr.consecutive_misses += 1
            tr.outcomes.append(False)
            if tr.consecutive_misses >= self.drop_misses:
                del self.tracks[tid]

        for j, det in enumerate(detections):
            if j not in used_d:
                self._new_track(det, t_us)

        return [
            self.tracks[tid]
            for tid in sorted(self.tracks)
            if self.tracks[tid].updated and self.tracks[tid].hits >= self.confirm_hits
        ]

    def _correct(self, tr: Track, pred: list[float], det: FusedDetection, t_us: int) -> None:
        dt = (t_us - tr.t_us) / 1e6
        z = det.position_m
        n = min(len(pred), len(z))
        resid = [z[k] - pred[k] for k in range(n)]
        tr.position = [pred[k] + self.alpha * resid[k] for k in range(n)]
        if dt > 0:
            tr.velocity = [tr.velocity[k] + self.beta * resid[k] / dt for k in range(n)]
        tr.t_us = t_us
        tr.hits += 1
        tr.consecutive_misses = 0
        tr.updated = True
        tr.outcomes.append(True)
        tr.det_confidences.append(det.confidence)
        tr.history.append(tuple(tr.position))
        if det.label is not None:
            tr.label = det.label


# --------------------------------------------------------------------------- KPI measurement


def measure_window(
    *,
    tssa: Tssa,
    window_end_us: int,
    window_start_us: int,
    streams: Sequence[DetectionStream],
    fused: Sequence[FusedDetection],
    results: Sequence[SensingResult],
    latency_us: int,
    labels: LabelChannel | None,
    gate_m: float,
) -> KpiMeasured:
    values: dict[str, float | None] = {n: None for n in KPI_FIELDS}
    samples: dict[str, int] = {n: 0 for n in KPI_FIELDS}

    values["max_service_latency_ms"] = latency_us / 1000.0
    samples["max_service_latency_ms"] = 1
    period = window_end_us - window_start_us
    if period > 0:
        values["refresh_rate_hz"] = 1e6 / period
        samples["refresh_rate_hz"] = 1
    if fused:
        values["sensing_resolution_m"] = sum(f.sigma_m for f in fused) / len(fused)
        samples["sensing_resolution_m"] = len(fused)

    if labels is None:
        if results:
            values["confidence_level"] = sum(r.confidence for r in results) / len(results)
            samples["confidence_level"] = len(results)
        return KpiMeasured(values, samples, (window_start_us, window_end_us))

    truth = labels.objects_at(window_end_us)
    present = [(o, p) for o, p in truth if tssa.contains(p)]
    seen = {lab for s in streams if s.labels for lab in s.labels if lab is not None}
    scans = len(streams)
    false_dets = sum(1 for s in streams if s.labels for lab in s.labels if lab is None)

    if present:
        missed = sum(1 for o, _ in present if o.object_id not in seen)
        values["missed_detection_rate_max"] = missed / len(present)
        samples["missed_detection_rate_max"] = len(present)
    if scans:
        values["false_alarm_rate_max"] = false_dets / scans
        samples["false_alarm_rate_max"] = scans

    pos_err: list[float] = []
    vel_err: list[float] = []
    best_conf: dict[str, float] = {}
    for r in results:
        best = None
        for o, p in truth:
            d = _dist(r.position_m, p)
            if d <= gate_m and (best is None or d < best[0]):
                best = (d, o, p)
        if best is None:
            continue
        _, obj, _ = best
        pos_err.append(best[0])
        tv = obj.velocity(window_end_us)
        vel_err.append(_dist(r.velocity_mps, tv))
        best_conf[obj.object_id] = max(best_conf.get(obj.object_id, 0.0), r.confidence)
    if pos_err:
        values["positioning_accuracy_m"] = math.sqrt(sum(e * e for e in pos_err) / len(pos_err))
        samples["positioning_accuracy_m"] = len(pos_err)
        values["velocity_accuracy_mps"] = math.sqrt(sum(e * e for e in vel_err) / len(vel_err))
        samples["velocity_accuracy_mps"] = len(vel_err)
    if present:
        confs = [best_conf.get(o.object_id, 0.0) for o, _ in present]
        values["confidence_level"] = sum(confs) / len(confs)
        samples["confidence_level"] = len(confs)
    elif results:
        values["confidence_level"] = sum(r.confidence for r in results) / len(results)
        samples["confidence_level"] = len(results)
    return KpiMeasured(values, samples, (window_start_us, window_end_us))


# --------------------------------------------------------------------------- SPF network function


@dataclass
class SpfTaskConfig:
    stid: Stid
    tssa: Tssa
    targets: KpiTargets
    expected_srx: frozenset[str]
    fusion_policy: FusionPolicy = FusionPolicy.INVERSE_VARIANCE
    result_sink: str = ""
    refresh_rate_hz: float = 1.0
    scf_id: str = "Nscf"
    modalities: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.expected_srx = frozenset(self.expected_srx)
        self.fusion_policy = FusionPolicy(self.fusion_policy)
        if not self.expected_srx:
            raise IsacError("VALIDATION", "expected_srx")

    def to_doc(self) -> dict:
        return {
            "stid": str(self.stid),
            "tssa": self.tssa.to_doc(),
            "targets": self.targets.to_doc(),
            "expected_srx": sorted(self.expected_srx),
            "fusion_policy": self.fusion_policy.value,
            "result_sink": self.result_sink,
            "refresh_rate_hz": self.refresh_rate_hz,
            "scf_id": self.scf_id,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "SpfTaskConfig":
        return cls(
            stid=Stid.parse(doc["stid"]),
            tssa=Tssa.from_doc(doc["tssa"]),
            targets=KpiTargets.from_doc(doc["targets"]),
            expected_srx=frozenset(doc["expected_srx"]),
            fusion_policy=FusionPolicy(doc.get("fusion_policy", "INVERSE_VARIANCE")),
            result_sink=doc.get("result_sink", ""),
            refresh_rate_hz=float(doc.get("refresh_rate_hz", 1.0)),
            scf_id=doc.get("scf_id", "Nscf"),
        )


@dataclass
class SpfCounters:
    accepted: int = 0
    unknown_stid: int = 0
    unexpected_srx: int = 0
    stale_seq: int = 0
    late: int = 0
    bad_frames: int = 0
    windows: int = 0
    results: int = 0


@dataclass
class _TaskCtx:
    config: SpfTaskConfig
    tracker: AlphaBetaTracker
    buffer: dict[int, dict[str, tuple[SensingData, tuple | None]]] = field(default_factory=dict)
    timers: dict[int, list] = field(default_factory=dict)
    last_seq: dict[str, int] = field(default_factory=dict)
    last_window_end: int | None = None
    window_index: int = 0
    stored: deque = field(default_factory=lambda: deque(maxlen=10_000))
    stored_total: int = 0
    pending: list[dict] = field(default_factory=list)


class Spf(NetworkFunction):
    kind = NfKind.SPF
    services = frozenset({"Nspf"})

    def __init__(
        self,
        nf_id: str,
        labels: LabelChannel | None = None,
        tracker_params: Mapping | None = None,
        flush_grace_us: int = 50_000,
    ) -> None:
        super().__init__(nf_id)
        self.labels = labels
        self.tracker_params = dict(tracker_params or {})
        self.flush_grace_us = flush_grace_us
        self.tasks: dict[Stid, _TaskCtx] = {}
        self.counters = SpfCounters()
        self.window_log: list[dict] = []

    # ---------------------------------------------------------------- control

    def configure(self, config: SpfTaskConfig, update: bool = False) -> dict:
        ctx = self.tasks.get(config.stid)
        if ctx is not None and not update:
            raise IsacError("CONFLICT", str(config.stid))
        if ctx is None:
            if update:
                raise IsacError("UNKNOWN_STID", str(config.stid))
            tracker = AlphaBetaTracker(gate_m=gate_for(config.targets), **self.tracker_params)
            self.tasks[config.stid] = _TaskCtx(config, tracker)
        else:
            if config.expected_srx != ctx.config.expected_srx:
                # STG changed: start association afresh on the new sensor set
                ctx.tracker.reset()
            ctx.tracker.gate_m = gate_for(config.targets)
            ctx.config = config
        return {"stid": str(config.stid), "ack": True}

    def op_ConfigureTask(self, msg: BusMessage) -> dict:
        try:
            config = SpfTaskConfig.from_doc(msg.payload)
        except (KeyError, TypeError, ValueError) as exc:
            raise IsacError("VALIDATION", str(exc)) from exc
        return self.configure(config, update=bool(msg.payload.get("update", False)))

    def op_PurgeTask(self, msg: BusMessage) -> dict:
        stid = Stid.parse(msg.payload["stid"])
        ctx = self.tasks.pop(stid, None)
        if ctx is None:
            raise IsacError("UNKNOWN_STID", str(stid))
        for h in ctx.timers.values():
            self.bus.scheduler.cancel(h)
        return {"stid": str(stid), "purged": True, "stored": ctx.stored_total}

    def op_QueryConfig(self, msg: BusMessage) -> dict:
        ctx = self.tasks.get(Stid.parse(msg.payload["stid"]))
        if ctx is None:
            raise IsacError("UNKNOWN_STID", msg.payload["stid"])
        return ctx.config.to_doc()

    def op_QueryResults(self, msg: BusMessage) -> dict:
        ctx = self.tasks.get(Stid.parse(msg.payload["stid"]))
        if ctx is None:
            raise IsacError("UNKNOWN_STID", msg.payload["stid"])
        limit = int(msg.payload.get("limit", 100))
        items = list(ctx.stored)[-limit:]
        return {"stid": msg.payload["stid"], "results": items, "stored": ctx.stored_total,
                "pending": len(ctx.pending)}

    # ---------------------------------------------------------------- ingress

    def ingest_frame(self, raw: bytes, source: str = "") -> str:
        try:
            frame = decode(raw)
            data = SensingData.from_doc(frame.payload or {})
        except (IsacError, KeyError, TypeError, ValueError):
            self.counters.bad_frames += 1
            return "BAD_FRAME"
        return self.ingest(data)

    def ingest(self, data: SensingData) -> str:
        """Accept or reject one SensingData; returns "ACCEPTED" or the reject code."""
        ctx = self.tasks.get(data.stid)
        if ctx is None:
            self.counters.unknown_stid += 1
            return "UNKNOWN_STID"
        if data.srx_id not in ctx.config.expected_srx:
            self.counters.unexpected_srx += 1
            return "UNEXPECTED_SRX"
        if data.seq <= ctx.last_seq.get(data.srx_id, 0):
            self.counters.stale_seq += 1
            return "STALE_SEQ"
        ctx.last_seq[data.srx_id] = data.seq
        if ctx.last_window_end is not None and data.window_end_us <= ctx.last_window_end:
            self.counters.late += 1
            return "LATE"
        self.counters.accepted += 1
        labels = self.labels.labels(data.srx_id, data.stid, data.seq) if self.labels else None
        w = data.window_end_us
        slot = ctx.buffer.setdefault(w, {})
        slot[data.srx_id] = (data, labels)
        if self.bus is not None and w not in ctx.timers:
            ctx.timers[w] = self.bus.scheduler.call_later(self.flush_grace_us, self._flush, data.stid, w)
        if set(slot) >= ctx.config.expected_srx:
            self._process_through(data.stid, w)
        return "ACCEPTED"

    def _flush(self, stid: Stid, window_end_us: int) -> None:
        ctx = self.tasks.get(stid)
        if ctx is not None and window_end_us in ctx.buffer:
            ctx.timers.pop(window_end_us, None)
            self._process_through(stid, window_end_us)

    def _process_through(self, stid: Stid, window_end_us: int) -> None:
        ctx = self.tasks[stid]
        for w in sorted(k for k in ctx.buffer if k <= window_end_us):
            slot = ctx.buffer.pop(w)
            h = ctx.timers.pop(w, None)
            if h is not None and self.bus is not None:
                self.bus.scheduler.cancel(h)
            self.process_window(stid, w, slot)

    # ---------------------------------------------------------------- processing

    def process_window(self, stid: Stid, window_end_us: int, slot: Mapping[str, tuple]) -> list[SensingResult]:
        ctx = self.tasks[stid]
        cfg = ctx.config
        streams = [
            DetectionStream(srx, data.noise_sigma_m, data.detections, data.modality, labels)
            for srx, (data, labels) in sorted(slot.items())
        ]
        gate = gate_for(cfg.targets)
        fused = fuse(streams, gate, cfg.fusion_policy)
        tracks = ctx.tracker.update(fused, window_end_us)
        results = [self._to_result(stid, tr, window_end_us) for tr in tracks]
        results = [r for r in results if cfg.tssa.contains(r.position_m)]

        start = ctx.last_window_end
        if start is None:
            start = window_end_us - int(round(1e6 / cfg.refresh_rate_hz))
        ctx.last_window_end = window_end_us
        ctx.window_index += 1
        self.counters.windows += 1
        publication_us = self.now_us if self.bus is not None else window_end_us
        latency_us = publication_us - window_end_us
        kpi = measure_window(
            tssa=cfg.tssa, window_end_us=window_end_us, window_start_us=start, streams=streams,
            fused=fused, results=results, latency_us=latency_us, labels=self.labels, gate_m=gate,
        )
        modalities = sorted({m.value for f in fused for m in f.modalities})
        merged_modalities = sorted({m.value for f in fused if f.merged for m in f.modalities})
        event = {
            "stid": str(stid),
            "window_index": ctx.window_index,
            "window_end_us": window_end_us,
            "published_us": publication_us,
            "latency_us": latency_us,
            "n_results": len(results),
            "results": [r.to_doc() for r in results],
            "srx_ids": sorted(slot),
            "modalities": modalities,
            "merged": sum(1 for f in fused if f.merged),
            "merged_modalities": merged_modalities,
            "result_sink": cfg.result_sink,
        }
        self.window_log.append({"stid": str(stid), "window_index": ctx.window_index, "fused": len(fused),
                                "merged": event["merged"], "accepted": sum(len(s.detections) for s in streams)})
        self.publish_results(stid, event)
        if self.bus is not None:
            self.bus.post(self.nf_id, cfg.scf_id, "ReportKpis", {
                "stid": str(stid),
                "window_index": ctx.window_index,
                "window_end_us": window_end_us,
                "kpi": kpi.to_doc(),
            })
        return results

    def _to_result(self, stid: Stid, tr: Track, t_us: int) -> SensingResult:
        obj_type, size, material, shape = ObjectType.UNKNOWN, 0.0, None, "point"
        if tr.label is not None and self.labels is not None:
            try:
                obj = self.labels.world.object(tr.label)
            except KeyError:
                obj = None
            if obj is not None:
                obj_type, size, material, shape = obj.object_type, obj.size_m, obj.material_tag, "box"
        return SensingResult(
            stid=stid,
            track_id=tr.track_id,
            object_type=obj_type,
            position_m=tuple(round(v, 6) for v in tr.position),
            velocity_mps=tuple(round(v, 6) for v in tr.velocity),
            trajectory=tuple(tuple(round(v, 6) for v in p) for p in tr.history),
            size_m=size,
            shape_tag=shape,
            confidence=round(tr.confidence, 6),
            time_of_generation_us=t_us,
            material_tag=material,
        )

    def publish_results(self, stid: Stid, event: dict) -> bool:
        """Store the window's results and publish them unless the sink is down."""
        ctx = self.tasks[stid]
        for r in event["results"]:
            ctx.stored.append(r)
        ctx.stored_total += event["n_results"]
        self.counters.results += event["n_results"]
        if self.bus is None:
            return False
        sink = ctx.config.result_sink
        prof = self.bus.profile(sink) if sink else None
        if sink and (prof is None or prof.status is not NfStatus.AVAILABLE):
            ctx.pending.append(event)
            return False
        while ctx.pending:
            self.bus.publish(self.nf_id, "SensingResultAvailable", ctx.pending.pop(0))
        self.bus.publish(self.nf_id, "SensingResultAvailable", event)
        return True
