from __future__ import annotations

import math

import pytest

from isacsim.domain import (
    KpiMeasured,
    KpiTargets,
    Modality,
    Role,
    ScheduleWindow,
    SensingCapability,
    SensingData,
    SensingResult,
    Detection,
    Stg,
    StgMember,
    StgMode,
    Stid,
    StidRegistry,
    TaskState,
    Tssa,
    canonical_json,
    kpi_satisfied,
    stg_mode,
    transition_allowed,
)
from isacsim.errors import IsacError

BOTH = frozenset({Role.STX, Role.SRX})


def test_stid_text_and_bytes_round_trip():
    reg = StidRegistry(seed=1)
    s = reg.new()
    assert Stid.parse(str(s)) == s
    assert Stid.from_bytes(s.to_bytes()) == s
    assert len(s.to_bytes()) == 16
    assert s in reg and len(reg) == 1
    for bad in ("ABC", "g" * 32, "0" * 31, 5):
        with pytest.raises(IsacError) as exc:
            Stid.parse(bad)
        assert exc.value.code == "VALIDATION"
    with pytest.raises(IsacError):
        Stid(1 << 128)


def test_stid_registry_is_seeded():
    a = [str(StidRegistry(seed=9).new()) for _ in range(1)]
    b = [str(StidRegistry(seed=9).new()) for _ in range(1)]
    assert a == b


def test_tssa_validation_and_relative_frame():
    t = Tssa.from_doc({"polygon": [[0, 0], [2, 0], [2, 2], [0, 2]]})
    assert t.area == 4.0
    with pytest.raises(IsacError):
        Tssa.from_doc({"polygon": [[0, 0], [0, 2], [2, 2], [2, 0]]})  # clockwise
    with pytest.raises(IsacError):
        Tssa.from_doc({"polygon": [[0, 0], [2, 2], [2, 0], [0, 2]]})
    with pytest.raises(IsacError):
        Tssa.from_doc({"polygon": [[0, 0], [1, 0], [1, 1]], "frame": "RELATIVE"})
    rel = Tssa.from_doc({"polygon": [[0, 0], [1, 0], [1, 1], [0, 1]], "frame": "RELATIVE", "anchor": [10, 5]})
    assert rel.contains((10.5, 5.5)) and not rel.contains((0.5, 0.5))
    assert Tssa.from_doc(rel.to_doc()) == rel


def test_tssa_height_band():
    t = Tssa.from_doc({"polygon": [[0, 0], [2, 0], [2, 2], [0, 2]], "z_range": [0, 3]})
    assert t.contains((1, 1, 2)) and not t.contains((1, 1, 4))
    flat = Tssa.from_doc({"polygon": [[0, 0], [2, 0], [2, 2], [0, 2]]})
    assert flat.contains((1, 1, 9))
    with pytest.raises(IsacError) as exc:
        flat.contains((1, 1, 9), strict=True)
    assert exc.value.code == "DIMENSION_MISMATCH"


def test_kpi_targets_ranges():
    KpiTargets(0.5, max_service_latency_ms=100)
    for bad in ({"confidence_level": 1.5}, {"confidence_level": 0.5, "refresh_rate_hz": 0},
                {"confidence_level": 0.5, "bogus": 1}, {"refresh_rate_hz": 1.0}):
        with pytest.raises(IsacError):
            KpiTargets.from_doc(bad)


def test_kpi_satisfied_directions():
    targets = KpiTargets(0.6, max_service_latency_ms=100, missed_detection_rate_max=0.2)
    good = KpiMeasured({"confidence_level": 0.7, "max_service_latency_ms": 50, "missed_detection_rate_max": 0.1},
                       {"confidence_level": 3, "max_service_latency_ms": 3, "missed_detection_rate_max": 3})
    verdicts, ok = kpi_satisfied(targets, good)
    assert ok and set(verdicts) == {"confidence_level", "max_service_latency_ms", "missed_detection_rate_max"}
    slow = KpiMeasured({**good.values, "max_service_latency_ms": 150}, good.samples)
    verdicts, ok = kpi_satisfied(targets, slow)
    assert not ok and verdicts["max_service_latency_ms"] is False and verdicts["confidence_level"]
    with pytest.raises(IsacError) as exc:
        kpi_satisfied(targets, good, min_samples=5)
    assert exc.value.code == "INSUFFICIENT_SAMPLES"


def test_kpi_merge_rules():
    a = KpiMeasured({"confidence_level": 0.5, "positioning_accuracy_m": 3.0, "max_service_latency_ms": 10},
                    {"confidence_level": 1, "positioning_accuracy_m": 1, "max_service_latency_ms": 1}, (0, 10))
    b = KpiMeasured({"confidence_level": 0.8, "positioning_accuracy_m": 4.0, "max_service_latency_ms": 30},
                    {"confidence_level": 2, "positioning_accuracy_m": 1, "max_service_latency_ms": 1}, (10, 20))
    m = KpiMeasured.merge([a, b])
    assert math.isclose(m.values["confidence_level"], (0.5 + 1.6) / 3)
    assert math.isclose(m.values["positioning_accuracy_m"], math.sqrt((9 + 16) / 2))
    assert m.values["max_service_latency_ms"] == 30
    assert m.window == (0, 20)
    with pytest.raises(IsacError):
        KpiMeasured({"missed_detection_rate_max": 1.2}, {})
    KpiMeasured({"false_alarm_rate_max": 1.2}, {})


def test_state_machine_table():
    S = TaskState
    assert transition_allowed(S.REQUESTED, S.ESTABLISHED)
    assert transition_allowed(S.SUSPENDED, S.TERMINATED)
    assert not transition_allowed(S.TERMINATED, S.TERMINATED)
    assert not transition_allowed(S.REQUESTED, S.ACTIVE)
    assert not transition_allowed(S.ACTIVE, S.ESTABLISHED)


def test_stg_modes():
    mono = StgMember("a", BOTH, Modality.SIX_G)
    tx = StgMember("t", frozenset({Role.STX}), Modality.SIX_G)
    rx = StgMember("r", frozenset({Role.SRX}), Modality.SIX_G)
    rx2 = StgMember("r2", frozenset({Role.SRX}), Modality.WIFI)
    assert stg_mode([mono]) is StgMode.MONOSTATIC
    assert stg_mode([tx, rx]) is StgMode.BISTATIC
    assert stg_mode([tx, rx, rx2]) is StgMode.MULTISTATIC
    assert stg_mode([tx]) is None
    assert stg_mode([rx]) is None
    assert stg_mode([]) is None
    with pytest.raises(IsacError):
        Stg((tx, rx), ("spf",), StgMode.MONOSTATIC)
    with pytest.raises(IsacError):
        Stg((mono,), (), StgMode.MONOSTATIC)


def test_capability_and_data_round_trip():
    cap = SensingCapability("ue", {"SIX_G", "WIFI"}, {"STX", "SRX"}, (1, 2), 8.0, 90, 120, af_id="af")
    assert SensingCapability.from_doc(cap.to_doc()) == cap
    with pytest.raises(IsacError):
        SensingCapability("x", {"WIFI"}, {"SRX"}, (0, 0), 0.0)
    stid = Stid(42)
    data = SensingData(stid, "ue", Modality.WIFI, 1000, (Detection((1.0, 2.0), (0.0, 0.0), 12.0, 0.8),), 0.5, 3)
    assert SensingData.from_doc(data.to_doc()) == data
    res = SensingResult(stid, 1, "HUMAN", (1.0, 2.0), (0.0, 0.0), ((1.0, 2.0),), 0.5, "ELLIPSE", 0.9, 10)
    assert SensingResult.from_doc(res.to_doc()) == res
    assert canonical_json({"b": 1, "a": [1.5]}) == b'{"a":[1.5],"b":1}'


def test_schedule_window_wraps_midnight():
    w = ScheduleWindow.from_doc({"start": "22:00", "end": "02:00"})
    assert w.is_open(23 * 3600) and w.is_open(3600) and not w.is_open(12 * 3600)
    assert w.next_change(21 * 3600) == 3600
    assert w.to_doc() == {"start": "22:00:00", "end": "02:00:00"}
    with pytest.raises(IsacError):
        ScheduleWindow.from_doc({"start": "10:00", "end": "10:00"})
