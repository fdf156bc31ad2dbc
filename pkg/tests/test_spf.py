from __future__ import annotations

import math

import numpy as np
import pytest

from isacsim.domain import Detection, KpiTargets, Modality, SensingData, SensingResult, Stid, Tssa
from isacsim.env import GroundTruthObject, LabelChannel, World
from isacsim.errors import IsacError
from isacsim.spf import (
    AlphaBetaTracker,
    DetectionStream,
    FusedDetection,
    FusionPolicy,
    Spf,
    SpfTaskConfig,
    fuse,
    gate_for,
    measure_window,
)

SQUARE = Tssa.from_doc({"polygon": [[-20, -20], [20, -20], [20, 20], [-20, 20]]})


def det(x, y, conf=0.8):
    return Detection((float(x), float(y)), (0.0, 0.0), 10.0, conf)


def fdet(x, y, conf=0.9, label=None):
    return FusedDetection((float(x), float(y)), (0.0, 0.0), 0.3, conf, 10.0, (("s", 0),), frozenset({Modality.SIX_G}), label)


def test_inverse_variance_weights_by_hand():
    a = DetectionStream("a", 1.0, (det(0, 0, 0.5),))
    b = DetectionStream("b", 2.0, (det(5, 10, 0.6),), Modality.WIFI)
    (f,) = fuse([a, b], gate_m=20)
    # weights 1 and 1/4 -> 0.8 / 0.2 split
    assert f.position_m == pytest.approx((1.0, 2.0))
    assert f.sigma_m == pytest.approx(math.sqrt(0.8))
    assert f.confidence == pytest.approx(1 - 0.5 * 0.4)
    assert f.modalities == {Modality.SIX_G, Modality.WIFI} and f.merged


def test_fusion_gate_and_same_srx_exclusion():
    a = DetectionStream("a", 1.0, (det(0, 0), det(0.5, 0)))
    b = DetectionStream("b", 1.0, (det(0.2, 0), det(9, 9)))
    out = fuse([a, b], gate_m=1.0)
    merged = [f for f in out if f.merged]
    assert len(out) == 3 and len(merged) == 1
    # nearest cross pair wins: a[0]=(0,0) is 0.2 from b[0], a[1] is 0.3
    assert set(merged[0].sources) == {("a", 0), ("b", 0)}
    assert len(fuse([a, b], gate_m=1.0, policy=FusionPolicy.NONE)) == 4
    with pytest.raises(IsacError):
        fuse([a, a], gate_m=1.0)


def test_gate_follows_positioning_target():
    assert gate_for(KpiTargets(0.5)) == 2.0
    assert gate_for(KpiTargets(0.5, positioning_accuracy_m=0.4)) == 0.8


def test_tracker_confirms_after_three_hits_and_drops_after_misses():
    tr = AlphaBetaTracker(gate_m=2.0)
    assert tr.update([fdet(0, 0)], 0) == []
    assert tr.update([fdet(0.1, 0)], 500_000) == []
    confirmed = tr.update([fdet(0.2, 0)], 1_000_000)
    assert len(confirmed) == 1 and confirmed[0].hits == 3
    assert confirmed[0].confidence == pytest.approx(0.9)
    for k in range(4):
        assert tr.update([], 1_500_000 + k * 500_000) == []
    assert len(tr.tracks) == 1
    tr.update([], 4_000_000)
    assert tr.tracks == {}


def test_tracker_confidence_is_min_of_ratio_and_detection_confidence():
    tr = AlphaBetaTracker(gate_m=2.0, hit_window=4)
    for k, present in enumerate([1, 1, 1, 0]):
        tr.update([fdet(0, 0, conf=0.95)] if present else [], k * 100_000)
    (track,) = tr.tracks.values()
    assert track.confidence == pytest.approx(0.75)


def test_tracker_follows_constant_velocity():
    tr = AlphaBetaTracker(gate_m=2.0)
    for k in range(40):
        tr.update([fdet(0.5 * k * 0.1, 0)], k * 100_000)
    (track,) = tr.tracks.values()
    assert track.velocity[0] == pytest.approx(0.5, abs=0.05)


def test_measure_window_against_hand_counts():
    world = World([
        GroundTruthObject("inside", "HUMAN", ((0, (1.0, 1.0)),)),
        GroundTruthObject("outside", "HUMAN", ((0, (50.0, 0.0)),)),
        GroundTruthObject("missed", "VEHICLE", ((0, (-5.0, -5.0)),)),
    ])
    labels = LabelChannel(world)
    stream = DetectionStream("s", 0.3, (det(1.1, 1.0), det(8, 8)), labels=("inside", None))
    res = SensingResult(Stid(1), 1, "HUMAN", (1.3, 1.0), (0.0, 0.0), ((1.3, 1.0),), 0.5, "box", 0.7, 10)
    k = measure_window(tssa=SQUARE, window_end_us=10, window_start_us=0, streams=[stream], fused=[],
                       results=[res], latency_us=3000, labels=labels, gate_m=2.0)
    v = k.values
    assert v["missed_detection_rate_max"] == 0.5  # 1 of 2 present objects
    assert v["false_alarm_rate_max"] == 1.0
    assert v["confidence_level"] == pytest.approx(0.35)  # (0.7 + 0) / 2
    assert v["positioning_accuracy_m"] == pytest.approx(0.3)
    assert v["max_service_latency_ms"] == 3.0
    assert v["refresh_rate_hz"] == pytest.approx(1e5)


def _config(stid, srx=("a", "b"), sink=""):
    return SpfTaskConfig(stid, SQUARE, KpiTargets(0.5), frozenset(srx), result_sink=sink, refresh_rate_hz=2.0)


def _data(stid, srx, seq, t, pts=((0, 0),)):
    return SensingData(stid, srx, Modality.SIX_G, t, tuple(det(*p) for p in pts), 0.3, seq)


def test_spf_ingest_rules_and_window_processing():
    spf = Spf("spf")
    stid = Stid(9)
    assert spf.ingest(_data(stid, "a", 1, 500_000)) == "UNKNOWN_STID"
    spf.configure(_config(stid))
    with pytest.raises(IsacError):
        spf.configure(_config(stid))
    with pytest.raises(IsacError):
        spf.configure(_config(Stid(10)), update=True)
    assert spf.ingest(_data(stid, "z", 1, 500_000)) == "UNEXPECTED_SRX"
    assert spf.ingest(_data(stid, "a", 1, 500_000)) == "ACCEPTED"
    assert spf.ingest(_data(stid, "a", 1, 500_000)) == "STALE_SEQ"
    assert spf.counters.windows == 0
    assert spf.ingest(_data(stid, "b", 1, 500_000, pts=((0.1, 0),))) == "ACCEPTED"
    assert spf.counters.windows == 1
    assert spf.ingest(_data(stid, "b", 2, 400_000)) == "LATE"
    assert spf.window_log[-1]["merged"] == 1
    for k in range(2, 5):
        spf.ingest(_data(stid, "a", k, k * 500_000))
        spf.ingest(_data(stid, "b", k, k * 500_000))
    assert spf.counters.results >= 1
    assert spf.ingest_frame(b"garbage") == "BAD_FRAME"


def test_stg_change_resets_tracker():
    spf = Spf("spf")
    stid = Stid(3)
    spf.configure(_config(stid, srx=("a",)))
    for k in range(1, 4):
        spf.ingest(_data(stid, "a", k, k * 500_000))
    assert spf.tasks[stid].tracker.tracks
    spf.configure(_config(stid, srx=("a",)), update=True)
    assert spf.tasks[stid].tracker.tracks
    spf.configure(_config(stid, srx=("a", "b")), update=True)
    assert not spf.tasks[stid].tracker.tracks


def test_config_round_trip():
    cfg = _config(Stid(4), sink="sink")
    assert SpfTaskConfig.from_doc(cfg.to_doc()) == cfg
    with pytest.raises(IsacError):
        SpfTaskConfig(Stid(4), SQUARE, KpiTargets(0.5), frozenset())


def test_fusion_monte_carlo_small():
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(2000):
        e1, e2 = rng.normal(0, 1), rng.normal(0, 2)
        (f,) = fuse([DetectionStream("a", 1.0, (det(e1, 0),)), DetectionStream("b", 2.0, (det(e2, 0),))], gate_m=1e9)
        errs.append(f.position_m[0])
    assert np.std(errs) == pytest.approx(math.sqrt(0.8), rel=0.06)
