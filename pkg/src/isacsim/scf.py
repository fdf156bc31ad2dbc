"""Sensing Coordination Function: task lifecycle, STG selection and switching.

The SCF keeps an inventory of registered sensing capabilities, answers
sensing service requests with a fresh STID, prepares the SPF instances,
activates the STG members and then watches the per-window KPI reports from
the SPF.  After ``k_windows`` consecutive failing windows it augments or
replaces the 6G members with non-6G (Wi-Fi) capacity, consulting the
fronting AF when those devices are AF-provided.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import geometry
from .bus import BusMessage, HandlerError, NetworkFunction, NfKind
from .domain import (
    KpiMeasured,
    KpiTargets,
    Modality,
    Role,
    ScheduleWindow,
    SensingCapability,
    Stg,
    StgMember,
    Stid,
    StidRegistry,
    TaskState,
    Tssa,
    kpi_satisfied,
    stg_mode,
    transition_allowed,
)
from .errors import IsacError
from .sensing_plane import SensingPlane


class TrustClass(str, enum.Enum):
    INTERNAL = "INTERNAL"
    THIRD_PARTY = "THIRD_PARTY"


class SwitchKind(str, enum.Enum):
    STAY = "STAY"
    SWITCH_TO_NON6G = "SWITCH_TO_NON6G"
    SWITCH_TO_6G = "SWITCH_TO_6G"
    AUGMENT_WITH_NON6G = "AUGMENT_WITH_NON6G"


class Pool(str, enum.Enum):
    """Which members a (re)selection may use."""

    ALL = "ALL"
    NON6G = "NON6G"
    AUGMENTED = "AUGMENTED"


@dataclass(frozen=True)
class SwitchDecision:
    kind: SwitchKind
    reason: tuple[str, ...] = ()
    consulted_af: str | None = None
    window_index: int = 0
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "decision": self.kind.value,
            "reason": list(self.reason),
            "consulted_af": self.consulted_af,
            "window_index": self.window_index,
            "added": list(self.added),
            "removed": list(self.removed),
        }


@dataclass(frozen=True)
class ScfPolicy:
    w_coverage: float = 0.6
    w_load: float = 0.3
    w_modality: float = 0.1
    k_windows: int = 3
    coverage_threshold: float = 0.2
    augment_ratio: float = 0.5
    warmup_windows: int = 3
    exhaustive_limit: int = 12
    coverage_resolution: int = 24
    spfs_per_task: int = 1
    qos_class: int = 0
    retry_us: int = 1_000_000
    max_retries: int = 3
    min_rate_samples: int = 1

    @classmethod
    def from_doc(cls, doc: Mapping | None) -> "ScfPolicy":
        return cls(**dict(doc or {}))


@dataclass
class Candidate:
    capability: SensingCapability
    kind: NfKind = NfKind.AN
    load: float = 0.0
    authorized: bool = True

    @property
    def entity_id(self) -> str:
        return self.capability.entity_id

    @property
    def af_id(self) -> str | None:
        return self.capability.af_id


# --------------------------------------------------------------------------- scoring


def coverage_masks(tssa: Tssa, caps: Sequence[SensingCapability], resolution: int = 24) -> tuple[list[int], int]:
    """Bitset per capability over a grid sampling of the TSSA, plus the sample count."""
    samples = geometry.sample_polygon(tssa.polygon, resolution)
    n = len(samples)
    masks = []
    for cap in caps:
        inside = geometry.in_sector(samples, cap.position, cap.range_m, cap.azimuth_deg, cap.width_deg)
        masks.append(int.from_bytes(np.packbits(inside.astype(np.uint8)).tobytes(), "big") if n else 0)
    return masks, n


def member_modality(cap: SensingCapability, pool: Pool) -> Modality:
    if pool is Pool.NON6G or Modality.SIX_G not in cap.modalities:
        return Modality.WIFI
    return Modality.SIX_G


def score_members(
    members: Sequence[StgMember],
    masks: Mapping[str, int],
    loads: Mapping[str, float],
    n_samples: int,
    policy: ScfPolicy,
) -> float:
    """Coverage fraction, mean utilisation and 6G share combined with the policy weights."""
    union = 0
    for m in members:
        if Role.SRX in m.roles:
            union |= masks[m.entity_id]
    coverage = union.bit_count() / n_samples if n_samples else 0.0
    mean_load = sum(loads[m.entity_id] for m in members) / len(members)
    six_g = sum(1 for m in members if m.modality is Modality.SIX_G) / len(members)
    return policy.w_coverage * coverage - policy.w_load * mean_load + policy.w_modality * six_g


def _better(score: float, ids: tuple[str, ...], best: tuple[float, tuple[str, ...]] | None) -> bool:
    if best is None:
        return True
    if score > best[0] + 1e-12:
        return True
    if abs(score - best[0]) <= 1e-12:
        return (len(ids), ids) < (len(best[1]), best[1])
    return False


def select_members(
    tssa: Tssa,
    candidates: Sequence[Candidate],
    policy: ScfPolicy | None = None,
    pool: Pool = Pool.ALL,
    exclude: Iterable[str] = (),
) -> tuple[StgMember, ...]:
    """Best-scoring feasible member set.

    Only candidates that cover part of the TSSA are eligible.  Up to
    ``exhaustive_limit`` candidates every subset is scored; above that a
    greedy forward selection is used.  Ties go to the smaller set, then to
    the lexicographically smaller sorted entity tuple.
    """
    policy = policy or ScfPolicy()
    excluded = set(exclude)
    usable = sorted(
        (c for c in candidates if c.authorized and c.entity_id not in excluded),
        key=lambda c: c.entity_id,
    )
    if pool is Pool.NON6G:
        usable = [c for c in usable if Modality.WIFI in c.capability.modalities]
    masks_list, n = coverage_masks(tssa, [c.capability for c in usable], policy.coverage_resolution)
    masks = {}
    eligible = []
    for c, mask in zip(usable, masks_list):
        if mask:
            masks[c.entity_id] = mask
            eligible.append(c)
    if not any(Role.SRX in c.capability.roles for c in eligible):
        raise IsacError("NO_CAPACITY", "no SRX-capable member covers the TSSA")

    base_pool = Pool.ALL if pool is Pool.AUGMENTED else pool
    as_member = {
        c.entity_id: StgMember(c.entity_id, c.capability.roles, member_modality(c.capability, base_pool), c.af_id)
        for c in eligible
    }
    loads = {c.entity_id: c.load for c in eligible}
    ids = [c.entity_id for c in eligible]

    best: tuple[float, tuple[str, ...]] | None = None
    if len(ids) <= policy.exhaustive_limit:
        for r in range(1, len(ids) + 1):
            for subset in itertools.combinations(ids, r):
                members = [as_member[i] for i in subset]
                if stg_mode(members) is None:
                    continue
                s = score_members(members, masks, loads, n, policy)
                if _better(s, subset, best):
                    best = (s, subset)
    else:
        chosen: list[str] = []
        current = None
        while True:
            step = None
            for i in ids:
                if i in chosen:
                    continue
                subset = tuple(sorted(chosen + [i]))
                members = [as_member[j] for j in subset]
                if stg_mode(members) is None:
                    # keep growing towards feasibility on coverage alone
                    s = -1.0 + score_members(members, masks, loads, n, policy)
                else:
                    s = score_members(members, masks, loads, n, policy)
                if _better(s, subset, step):
                    step = (s, subset)
            if step is None:
                break
            feasible = stg_mode([as_member[j] for j in step[1]]) is not None
            if current is not None and not step[0] > current[0] + 1e-12:
                break
            chosen = list(step[1])
            current = step
            if feasible and (best is None or _better(step[0], step[1], best)):
                best = step
    if best is None:
        raise IsacError("NO_CAPACITY", "no feasible sensing task group")

    chosen_ids = set(best[1])
    if pool is Pool.AUGMENTED:
        for c in eligible:
            if c.entity_id not in chosen_ids and Modality.WIFI in c.capability.modalities:
                as_member[c.entity_id] = StgMember(c.entity_id, c.capability.roles, Modality.WIFI, c.af_id)
                chosen_ids.add(c.entity_id)
    return tuple(as_member[i] for i in sorted(chosen_ids))


def member_coverage(tssa: Tssa, cap: SensingCapability, resolution: int = 24) -> float:
    masks, n = coverage_masks(tssa, [cap], resolution)
    return masks[0].bit_count() / n if n else 0.0


# --------------------------------------------------------------------------- task


@dataclass
class SensingTask:
    stid: Stid
    consumer: str
    trust: TrustClass
    tssa: Tssa
    targets: KpiTargets
    schedule: ScheduleWindow | None
    refresh_rate_hz: float
    result_sink: str
    source: str
    created_us: int
    state: TaskState = TaskState.REQUESTED
    stg: Stg | None = None
    members: tuple[StgMember, ...] = ()
    pool: Pool = Pool.ALL
    candidates: frozenset[str] | None = None
    excluded: set[str] = field(default_factory=set)
    last_kpi: KpiMeasured | None = None
    kpi_history: list[tuple[int, int, KpiMeasured]] = field(default_factory=list)
    decisions: list[SwitchDecision] = field(default_factory=list)
    fail_streak: int = 0
    fail_conf: list[float] = field(default_factory=list)
    warmup_left: int = 0
    suspend_reason: str | None = None
    spf_configured: bool = False
    retries: int = 0
    timer: list | None = None

    def to_doc(self) -> dict:
        return {
            "stid": str(self.stid),
            "consumer": self.consumer,
            "trust": self.trust.value,
            "state": self.state.value,
            "tssa": self.tssa.to_doc(),
            "targets": self.targets.to_doc(),
            "schedule": self.schedule.to_doc() if self.schedule else None,
            "refresh_rate_hz": self.refresh_rate_hz,
            "stg": self.stg.to_doc() if self.stg else None,
            "pool": self.pool.value,
            "created_us": self.created_us,
            "decisions": [d.to_doc() for d in self.decisions],
            "last_kpi": self.last_kpi.to_doc() if self.last_kpi else None,
            "suspend_reason": self.suspend_reason,
        }


class Scf(NetworkFunction):
    kind = NfKind.SCF
    services = frozenset({"Nscf"})

    def __init__(
        self,
        nf_id: str,
        registry: StidRegistry,
        plane: SensingPlane | None = None,
        *,
        policy: ScfPolicy | None = None,
        internal_consumers: Iterable[str] = (),
        authorized_ues: Iterable[str] | None = None,
        start_time_of_day_s: float = 0.0,
    ) -> None:
        super().__init__(nf_id)
        self.registry = registry
        self.plane = plane
        self.policy = policy or ScfPolicy()
        self.internal_consumers = set(internal_consumers)
        self.authorized_ues = set(authorized_ues) if authorized_ues is not None else None
        self.start_time_of_day_s = start_time_of_day_s
        self.inventory: dict[str, Candidate] = {}
        self.tasks: dict[Stid, SensingTask] = {}

    # ---------------------------------------------------------------- helpers

    def _task(self, stid_text: str) -> SensingTask:
        try:
            stid = Stid.parse(stid_text)
        except IsacError:
            raise IsacError("UNKNOWN_STID", str(stid_text))
        task = self.tasks.get(stid)
        if task is None or task.state is TaskState.TERMINATED:
            raise IsacError("UNKNOWN_STID", stid_text)
        return task

    def _transition(self, task: SensingTask, dst: TaskState, reason: str = "") -> None:
        if not transition_allowed(task.state, dst):
            raise IsacError("INVALID_STATE", f"{task.state.value}->{dst.value}")
        self.bus.record(self.nf_id, "TaskStateChanged", {
            "stid": str(task.stid), "from": task.state.value, "to": dst.value, "reason": reason,
        })
        task.state = dst

    def _second_of_day(self) -> float:
        return self.start_time_of_day_s + self.now_us / 1e6

    def candidates_for(self, task: SensingTask) -> list[Candidate]:
        out = []
        for eid in sorted(self.inventory):
            c = self.inventory[eid]
            if task.candidates is not None and eid not in task.candidates:
                continue
            prof = self.bus.profile(eid) if self.bus else None
            if prof is not None:
                c.load = prof.load
            out.append(c)
        return out

    # ---------------------------------------------------------------- registration

    def op_RegisterSensingCapability(self, msg: BusMessage) -> dict:
        p = msg.payload
        try:
            cap = SensingCapability.from_doc(p["capability"], p["entity_id"])
            kind = NfKind(p.get("kind", "AN"))
        except (KeyError, TypeError, ValueError) as exc:
            raise IsacError("VALIDATION", "capability") from exc
        authorized = True
        if kind is NfKind.UE and self.authorized_ues is not None:
            authorized = cap.entity_id in self.authorized_ues
        prof = self.bus.profile(cap.entity_id)
        self.inventory[cap.entity_id] = Candidate(cap, kind, prof.load if prof else 0.0, authorized)
        return {"entity_id": cap.entity_id, "registered": True, "authorized": authorized}

    def op_QueryInventory(self, msg: BusMessage) -> dict:
        return {
            "capabilities": [self.inventory[k].capability.to_doc() for k in sorted(self.inventory)],
            "authorized": [k for k in sorted(self.inventory) if self.inventory[k].authorized],
        }

    # ---------------------------------------------------------------- service requests

    def handle_service_request(self, source: str, payload: Mapping) -> dict:
        trust = TrustClass(payload.get("trust", TrustClass.INTERNAL.value))
        consumer = payload.get("consumer", source)
        prof = self.bus.profile(source)
        via_sef = prof is not None and prof.nf_kind is NfKind.SEF
        if trust is TrustClass.THIRD_PARTY and not via_sef:
            raise IsacError("FORBIDDEN_PATH", consumer)
        if trust is TrustClass.INTERNAL and not via_sef and consumer not in self.internal_consumers:
            raise IsacError("FORBIDDEN_PATH", consumer)
        if trust is TrustClass.INTERNAL and via_sef:
            raise IsacError("FORBIDDEN_PATH", consumer)

        if "tssa" not in payload:
            raise IsacError("VALIDATION", "tssa")
        tssa = Tssa.from_doc(payload["tssa"]).resolve()
        if not isinstance(payload.get("targets"), Mapping):
            raise IsacError("VALIDATION", "targets")
        targets = KpiTargets.from_doc(payload["targets"])
        schedule = ScheduleWindow.from_doc(payload["schedule"]) if payload.get("schedule") else None
        rate = payload.get("refresh_rate_hz", targets.refresh_rate_hz or 1.0)
        if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not rate > 0:
            raise IsacError("VALIDATION", "refresh_rate_hz")
        cands = payload.get("candidates")

        stid = self.registry.new()
        task = SensingTask(
            stid=stid, consumer=consumer, trust=trust, tssa=tssa, targets=targets, schedule=schedule,
            refresh_rate_hz=float(rate), result_sink=payload.get("result_sink") or (source if via_sef else consumer),
            source=source, created_us=self.now_us,
            candidates=frozenset(cands) if cands is not None else None,
        )
        self.tasks[stid] = task
        self.bus.record(self.nf_id, "TaskStateChanged", {"stid": str(stid), "from": None, "to": "REQUESTED", "reason": ""})
        self._transition(task, TaskState.ESTABLISHED)
        self.bus.scheduler.call_soon(self._setup, stid)
        return {"stid": str(stid), "state": task.state.value}

    def op_SensingServiceRequest(self, msg: BusMessage) -> dict:
        return self.handle_service_request(msg.source, msg.payload)

    def op_QueryTask(self, msg: BusMessage) -> dict:
        stid = Stid.parse(msg.payload["stid"]) if isinstance(msg.payload.get("stid"), str) else None
        task = self.tasks.get(stid) if stid else None
        if task is None:
            raise IsacError("UNKNOWN_STID", str(msg.payload.get("stid")))
        return task.to_doc()

    # ---------------------------------------------------------------- setup path

    def _setup(self, stid: Stid) -> None:
        task = self.tasks.get(stid)
        if task is None or task.state is not TaskState.ESTABLISHED:
            return
        try:
            if not task.members:
                task.members = self.select_stg(task)
            self.configure_spf(task)
        except IsacError as exc:
            self.bus.record(self.nf_id, "TaskSetupFailed", {"stid": str(stid), "error": exc.code})
            if exc.code == "SPF_UNAVAILABLE" and task.retries < self.policy.max_retries:
                task.retries += 1
                task.timer = self.bus.scheduler.call_later(self.policy.retry_us, self._setup, stid)
            return
        self._schedule_or_activate(task)

    def select_stg(self, task: SensingTask) -> tuple[StgMember, ...]:
        members = select_members(task.tssa, self.candidates_for(task), self.policy, task.pool, task.excluded)
        self.bus.record(self.nf_id, "StgSelected", {
            "stid": str(task.stid),
            "members": [m.entity_id for m in members],
            "modalities": sorted({m.modality.value for m in members}),
            "mode": stg_mode(members).value,
            "pool": task.pool.value,
        })
        return members

    def _spf_ids(self) -> tuple[str, ...]:
        found = self.bus.discover("Nspf")
        if not found:
            raise IsacError("SPF_UNAVAILABLE", "no SPF available")
        return tuple(p.nf_id for p in found[: self.policy.spfs_per_task])

    def configure_spf(self, task: SensingTask, update: bool = False) -> list[dict]:
        """Send the task config to every selected SPF and install the sensing-plane route."""
        if task.stg is not None and update:
            spf_ids = task.stg.spf_ids
        else:
            spf_ids = self._spf_ids()
        stg = Stg(task.members, spf_ids, stg_mode(task.members))
        srx = sorted(m.entity_id for m in stg.members if Role.SRX in m.roles)
        acks = []
        for spf_id in spf_ids:
            payload = {
                "stid": str(task.stid),
                "tssa": task.tssa.to_doc(),
                "targets": task.targets.to_doc(),
                "expected_srx": srx,
                "fusion_policy": "INVERSE_VARIANCE",
                "result_sink": task.result_sink,
                "refresh_rate_hz": task.refresh_rate_hz,
                "scf_id": self.nf_id,
                "update": update,
            }
            try:
                acks.append(self.bus.request(self.nf_id, spf_id, "ConfigureTask", payload))
            except IsacError as exc:
                if exc.code in ("UNRESOLVED_TARGET", "NO_HANDLER"):
                    raise IsacError("SPF_UNAVAILABLE", spf_id) from exc
                raise
        if self.plane is not None and not update:
            self.plane.install_route(task.stid, spf_ids[0])
            self.bus.record(self.nf_id, "InstallRoute", {"stid": str(task.stid), "spf_id": spf_ids[0]})
        task.stg = stg
        task.spf_configured = True
        return acks

    def _schedule_or_activate(self, task: SensingTask) -> None:
        if task.schedule is not None:
            sod = self._second_of_day()
            delay_us = int(round(task.schedule.next_change(sod) * 1e6))
            task.timer = self.bus.scheduler.call_later(delay_us, self._on_schedule, task.stid)
            if not task.schedule.is_open(sod):
                self.bus.record(self.nf_id, "ActivationDeferred", {"stid": str(task.stid), "delay_us": delay_us})
                return
        try:
            self.activate_sensing(task)
        except IsacError as exc:
            self.bus.record(self.nf_id, "ActivationFailed", {"stid": str(task.stid), "error": exc.code})

    def _on_schedule(self, stid: Stid) -> None:
        task = self.tasks.get(stid)
        if task is None or task.state is TaskState.TERMINATED:
            return
        sod = self._second_of_day()
        is_open = task.schedule.is_open(sod)
        task.timer = self.bus.scheduler.call_later(
            int(round(task.schedule.next_change(sod) * 1e6)), self._on_schedule, stid
        )
        try:
            if is_open and (task.state is TaskState.ESTABLISHED or (
                    task.state is TaskState.SUSPENDED and task.suspend_reason == "SCHEDULE")):
                self.activate_sensing(task)
            elif not is_open and task.state is TaskState.ACTIVE:
                self._deactivate(task, task.members)
                task.suspend_reason = "SCHEDULE"
                self._transition(task, TaskState.SUSPENDED, "SCHEDULE")
        except IsacError as exc:
            self.bus.record(self.nf_id, "ActivationFailed", {"stid": str(stid), "error": exc.code})

    # ---------------------------------------------------------------- member control

    def _member_target(self, m: StgMember) -> str:
        return m.af_id if m.af_id else m.entity_id

    def _activation_payload(self, task: SensingTask, m: StgMember) -> dict:
        stg = task.stg
        return {
            "stid": str(task.stid),
            "entity_id": m.entity_id,
            "roles": sorted(r.value for r in m.roles),
            "modality": m.modality.value,
            "refresh_rate_hz": task.refresh_rate_hz,
            "spf_id": stg.spf_ids[0],
            "mode": stg.mode.value,
            "qos_class": self.policy.qos_class,
            "stx_ids": list(stg.stx_ids()),
        }

    def _activate(self, task: SensingTask, members: Sequence[StgMember]) -> tuple[list[StgMember], str | None]:
        """Activate ``members`` in order; on rejection return the ones done and the rejecting id."""
        done = []
        for m in members:
            try:
                self.bus.request(self.nf_id, self._member_target(m), "ActivateSensing", self._activation_payload(task, m))
            except IsacError as exc:
                if exc.code == "MEMBER_REJECTED" or exc.code in ("UNRESOLVED_TARGET", "NO_HANDLER"):
                    return done, m.entity_id
                raise
            done.append(m)
        return done, None

    def _deactivate(self, task: SensingTask, members: Sequence[StgMember]) -> None:
        for m in members:
            try:
                self.bus.request(self.nf_id, self._member_target(m), "DeactivateSensing",
                                 {"stid": str(task.stid), "entity_id": m.entity_id})
            except IsacError:
                pass

    def activate_sensing(self, task: SensingTask) -> None:
        """Activate every STG member; a rejecting member is excluded and the STG reselected."""
        if task.state not in (TaskState.ESTABLISHED, TaskState.SUSPENDED):
            raise IsacError("INVALID_STATE", task.state.value)
        while True:
            done, rejected = self._activate(task, task.members)
            if rejected is None:
                break
            self._deactivate(task, done)
            task.excluded.add(rejected)
            self.bus.record(self.nf_id, "MemberRejected", {"stid": str(task.stid), "entity_id": rejected})
            try:
                task.members = self.select_stg(task)
            except IsacError:
                self.bus.record(self.nf_id, "ActivationFailed", {"stid": str(task.stid), "error": "NO_CAPACITY"})
                raise IsacError("NO_CAPACITY", str(task.stid))
            self.configure_spf(task, update=True)
        task.suspend_reason = None
        task.warmup_left = self.policy.warmup_windows
        task.fail_streak = 0
        task.fail_conf.clear()
        self._transition(task, TaskState.ACTIVE)

    def apply_members(self, task: SensingTask, new_members: tuple[StgMember, ...], reason: str) -> tuple[list[str], list[str]]:
        """Move an ACTIVE task onto ``new_members`` via MODIFYING; returns (added, removed) ids."""
        old = {m.entity_id: m for m in task.members}
        new = {m.entity_id: m for m in new_members}
        removed = [old[k] for k in sorted(old) if k not in new or new[k] != old[k]]
        added = [new[k] for k in sorted(new) if k not in old or old[k] != new[k]]
        self._transition(task, TaskState.MODIFYING, reason)
        self._deactivate(task, removed)
        task.members = tuple(new_members)
        self.configure_spf(task, update=True)
        done, rejected = self._activate(task, added)
        while rejected is not None:
            task.excluded.add(rejected)
            self.bus.record(self.nf_id, "MemberRejected", {"stid": str(task.stid), "entity_id": rejected})
            remaining = tuple(m for m in task.members if m.entity_id != rejected)
            if stg_mode(remaining) is None:
                self._deactivate(task, [m for m in task.members if m.entity_id != rejected])
                task.members = remaining
                task.suspend_reason = "NO_CAPACITY"
                self._transition(task, TaskState.ACTIVE, reason)
                self._transition(task, TaskState.SUSPENDED, "NO_CAPACITY")
                return [m.entity_id for m in added], [m.entity_id for m in removed]
            task.members = remaining
            self.configure_spf(task, update=True)
            left = [m for m in added if m.entity_id not in task.excluded and m not in done]
            more, rejected = self._activate(task, left)
            done.extend(more)
        task.warmup_left = self.policy.warmup_windows
        task.fail_streak = 0
        task.fail_conf.clear()
        self._transition(task, TaskState.ACTIVE, reason)
        return [m.entity_id for m in added], [m.entity_id for m in removed]

    # ---------------------------------------------------------------- KPI evaluation

    def on_ReportKpis(self, msg: BusMessage) -> None:
        task = self.tasks.get(Stid.parse(msg.payload["stid"]))
        if task is None or task.state is not TaskState.ACTIVE:
            return
        measured = KpiMeasured.from_doc(msg.payload["kpi"])
        window_index = int(msg.payload.get("window_index", 0))
        task.kpi_history.append((window_index, int(msg.payload.get("window_end_us", 0)), measured))
        task.last_kpi = measured
        self.evaluate_kpis_and_switch(task, measured, window_index)

    def op_ReportKpis(self, msg: BusMessage) -> dict:
        self.on_ReportKpis(msg)
        return {"stid": msg.payload["stid"]}

    def _evaluation(self, task: SensingTask, window_index: int, verdict: str, failing=(), **extra) -> None:
        self.bus.record(self.nf_id, "KpiEvaluation", {
            "stid": str(task.stid), "window_index": window_index, "verdict": verdict,
            "failing": sorted(failing), "streak": task.fail_streak, **extra,
        })

    def evaluate_kpis_and_switch(self, task: SensingTask, measured: KpiMeasured, window_index: int = 0) -> SwitchDecision | None:
        if task.warmup_left > 0:
            task.warmup_left -= 1
            self._evaluation(task, window_index, "WARMUP")
            return None
        try:
            verdicts, ok = kpi_satisfied(task.targets, measured, self.policy.min_rate_samples)
        except IsacError as exc:
            self._evaluation(task, window_index, "SKIPPED", error=exc.code)
            return None
        if ok:
            task.fail_streak = 0
            task.fail_conf.clear()
            self._evaluation(task, window_index, "PASS")
            return SwitchDecision(SwitchKind.STAY, window_index=window_index)
        failing = [k for k, v in verdicts.items() if not v]
        task.fail_streak += 1
        task.fail_conf.append(measured.values.get("confidence_level") or 0.0)
        self._evaluation(task, window_index, "FAIL", failing)
        if task.fail_streak < self.policy.k_windows:
            return None
        return self._switch(task, tuple(failing), window_index)

    def _switch(self, task: SensingTask, failing: tuple[str, ...], window_index: int) -> SwitchDecision | None:
        current = {m.entity_id: m for m in task.members}
        in_stg = set(current)
        has_6g = any(m.modality is Modality.SIX_G for m in task.members)
        cands = [c for c in self.candidates_for(task) if c.authorized and c.entity_id not in task.excluded]
        masks, _ = coverage_masks(task.tssa, [c.capability for c in cands], self.policy.coverage_resolution)
        covering = [c for c, mask in zip(cands, masks) if mask]
        wifi_unused = [
            c for c in covering
            if Modality.WIFI in c.capability.modalities
            and (c.entity_id not in current or current[c.entity_id].modality is not Modality.WIFI)
        ]
        six_g_unused = [c for c in covering if Modality.SIX_G in c.capability.modalities and c.entity_id not in in_stg]

        consulted = None
        for af_id in sorted({c.af_id for c in wifi_unused if c.af_id}):
            wanted = sorted(c.entity_id for c in wifi_unused if c.af_id == af_id)
            try:
                reply = self.bus.request(self.nf_id, af_id, "AssistanceRequest", {"stid": str(task.stid), "entity_ids": wanted})
                offered = set(reply.get("entity_ids", ()))
            except IsacError:
                offered = set()
            consulted = consulted or af_id
            for eid in wanted:
                if eid not in offered:
                    task.excluded.add(eid)
            wifi_unused = [c for c in wifi_unused if c.af_id != af_id or c.entity_id in offered]

        if wifi_unused:
            target = task.targets.confidence_level
            conf = sum(task.fail_conf[-self.policy.k_windows:]) / max(1, len(task.fail_conf[-self.policy.k_windows:]))
            if has_6g and target > 0 and conf >= self.policy.augment_ratio * target:
                kind, pool = SwitchKind.AUGMENT_WITH_NON6G, Pool.AUGMENTED
            elif has_6g:
                kind, pool = SwitchKind.SWITCH_TO_NON6G, Pool.NON6G
            else:
                kind, pool = SwitchKind.AUGMENT_WITH_NON6G, Pool.NON6G
        elif not has_6g and six_g_unused:
            kind, pool = SwitchKind.SWITCH_TO_6G, Pool.ALL
        else:
            return self._no_alternative(task, failing, window_index)

        prev_pool = task.pool
        task.pool = pool
        try:
            if kind is SwitchKind.AUGMENT_WITH_NON6G and pool is Pool.NON6G:
                new = tuple(sorted(
                    set(task.members) | {StgMember(c.entity_id, c.capability.roles, Modality.WIFI, c.af_id) for c in wifi_unused},
                    key=lambda m: m.entity_id,
                ))
                # an entity may now appear twice with different modality; keep the WIFI one
                by_id: dict[str, StgMember] = {}
                for m in new:
                    if m.entity_id not in by_id or m.modality is Modality.WIFI:
                        by_id[m.entity_id] = m
                new = tuple(by_id[k] for k in sorted(by_id))
            else:
                new = self.select_stg(task)
        except IsacError:
            task.pool = prev_pool
            return self._no_alternative(task, failing, window_index)
        if {(m.entity_id, m.modality) for m in new} == {(m.entity_id, m.modality) for m in task.members}:
            task.pool = prev_pool
            return self._no_alternative(task, failing, window_index)

        added = sorted(m.entity_id for m in new if current.get(m.entity_id) != m)
        removed = sorted(in_stg - {m.entity_id for m in new})
        decision = SwitchDecision(kind, failing, consulted, window_index, tuple(added), tuple(removed))
        task.decisions.append(decision)
        self.bus.record(self.nf_id, "SwitchDecision", {"stid": str(task.stid), **decision.to_doc()})
        self.apply_members(task, new, kind.value)
        return decision

    def _no_alternative(self, task: SensingTask, failing: tuple[str, ...], window_index: int) -> None:
        self.bus.record(self.nf_id, "SwitchDecisionFailed", {
            "stid": str(task.stid), "error": "NO_ALTERNATIVE", "reason": list(failing), "window_index": window_index,
        })
        self._deactivate(task, task.members)
        task.suspend_reason = "NO_ALTERNATIVE"
        self._transition(task, TaskState.SUSPENDED, "NO_ALTERNATIVE")
        return None

    # ---------------------------------------------------------------- modify / terminate

    def modify_task(self, stid_text: str, targets: Mapping | None = None, tssa: Mapping | None = None) -> dict:
        task = self._task(stid_text)
        new_targets = KpiTargets.from_doc(targets) if targets is not None else task.targets
        new_tssa = Tssa.from_doc(tssa).resolve() if tssa is not None else task.tssa
        if task.state is TaskState.ESTABLISHED:
            task.targets, task.tssa = new_targets, new_tssa
            if task.spf_configured:
                task.members = self.select_stg(task)
                self.configure_spf(task, update=True)
            return {"stid": stid_text, "state": task.state.value}
        if task.state is not TaskState.ACTIVE:
            raise IsacError("INVALID_STATE", task.state.value)
        task.targets, task.tssa = new_targets, new_tssa
        members = self.select_stg(task) if tssa is not None else task.members
        self.apply_members(task, members, "MODIFY")
        return {"stid": stid_text, "state": task.state.value}

    def op_ModifySensingService(self, msg: BusMessage) -> dict:
        p = msg.payload
        return self.modify_task(p.get("stid", ""), p.get("targets"), p.get("tssa"))

    def terminate_task(self, stid_text: str) -> dict:
        task = self._task(stid_text)
        if task.timer is not None:
            self.bus.scheduler.cancel(task.timer)
        if task.state in (TaskState.ACTIVE, TaskState.MODIFYING):
            self._deactivate(task, task.members)
        if task.spf_configured and task.stg is not None:
            for spf_id in task.stg.spf_ids:
                try:
                    self.bus.request(self.nf_id, spf_id, "PurgeTask", {"stid": stid_text})
                except IsacError:
                    pass
            if self.plane is not None:
                self.plane.remove_route(task.stid)
                self.bus.record(self.nf_id, "RemoveRoute", {"stid": stid_text})
        self._transition(task, TaskState.TERMINATED)
        if task.trust is TrustClass.THIRD_PARTY:
            self.bus.post(self.nf_id, task.source, "TaskSummary", {
                "stid": stid_text, "consumer": task.consumer, "windows": len(task.kpi_history),
                "decisions": len(task.decisions),
            })
        return {"stid": stid_text, "state": TaskState.TERMINATED.value}

    def op_TerminateSensingService(self, msg: BusMessage) -> dict:
        return self.terminate_task(msg.payload.get("stid", ""))

    # ---------------------------------------------------------------- mobility

    def handle_member_mobility(self, entity_id: str, position: Sequence[float]) -> list[str]:
        cand = self.inventory.get(entity_id)
        if cand is None:
            return []
        cand.capability = cand.capability.moved_to(position)
        reselected = []
        for stid in sorted(self.tasks):
            task = self.tasks[stid]
            if task.state is not TaskState.ACTIVE or task.stg is None:
                continue
            member = next((m for m in task.members if m.entity_id == entity_id), None)
            if member is None:
                continue
            frac = member_coverage(task.tssa, cand.capability, self.policy.coverage_resolution)
            if frac >= self.policy.coverage_threshold:
                continue
            self.bus.record(self.nf_id, "MobilityReselect", {"stid": str(stid), "entity_id": entity_id, "coverage": round(frac, 6)})
            try:
                members = self.select_stg(task)
            except IsacError:
                self._deactivate(task, task.members)
                task.suspend_reason = "NO_CAPACITY"
                self._transition(task, TaskState.SUSPENDED, "NO_CAPACITY")
                continue
            if members != task.members:
                self.apply_members(task, members, "MOBILITY")
            reselected.append(str(stid))
        return reselected

    def op_MobilityUpdate(self, msg: BusMessage) -> dict:
        p = msg.payload
        return {"entity_id": p["entity_id"], "reselected": self.handle_member_mobility(p["entity_id"], p["position"])}
