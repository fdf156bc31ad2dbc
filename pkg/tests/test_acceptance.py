"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python3 tests/test_acceptance.py``) or through pytest; under
pytest the lines are also repeated in the terminal summary.
"""
from __future__ import annotations

import functools
import math
import os
import struct
import subprocess
import sys
import time
import zlib

import numpy as np
import pytest

from isacsim import geometry
from isacsim.bus import HandlerError
from isacsim.conformance import check_callflow, check_pfrs, task_stids
from isacsim.domain import (
    Detection,
    Modality,
    SensingCapability,
    Stid,
    StidRegistry,
    Tssa,
    kpi_satisfied,
)
from isacsim.env import GroundTruthObject, LabelChannel, SensorModel, World, scan
from isacsim.errors import IsacError
from isacsim.scenario import build, execute, load_scenario, run
from isacsim.sensing_plane import PayloadType, SpFrame, decode, encode
from isacsim.spf import DetectionStream, FusionPolicy, fuse, measure_window

SCENARIOS = ("uc1_smart_shopping", "uc2_smart_home", "uc3_smart_factory")
LINES: dict[int, str] = {}


def z99() -> float:
    return 2.5758293035489004  # two-sided 99% normal quantile


def criterion(n: int, title: str):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                LINES[n] = f"criterion {n:2d} FAIL  {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                print(LINES[n])
                raise
            LINES[n] = f"criterion {n:2d} PASS  {title}: {detail}"
            print(LINES[n])
        return wrapper
    return deco


# --------------------------------------------------------------------------- 1


@criterion(1, "call flow PASS for every STID, 100 seeds x 3 scenarios, < 60 s")
def test_c01_callflow_all_seeds():
    t0 = time.perf_counter()
    checked = 0
    for name in SCENARIOS:
        sd = load_scenario(name)
        for seed in range(100):
            sim = build(sd, seed=seed)
            execute(sim)
            recs = sim.trace.records
            stids = task_stids(recs)
            assert len(stids) == len(sd.tasks), f"{name} seed {seed}: {len(stids)} STIDs"
            for stid in stids:
                v = check_callflow(recs, stid)
                assert v.ok, f"{name} seed {seed} {stid}: {v}"
                checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"{elapsed:.1f} s"
    return f"{checked} STIDs PASS in {elapsed:.1f} s"


# --------------------------------------------------------------------------- 2


@criterion(2, "byte-identical traces for same scenario and seed")
def test_c02_determinism(tmp_path):
    for name in SCENARIOS:
        blobs = []
        for i, hashseed in enumerate(("1", "4242")):
            out = tmp_path / f"{name}-{i}.jsonl"
            env = {**os.environ, "PYTHONHASHSEED": hashseed}
            subprocess.run(
                [sys.executable, "-m", "isacsim", "run", name, "--seed", "7", "--trace", str(out)],
                check=True, env=env, capture_output=True,
            )
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1], name
        assert len(blobs[0]) > 1000
    return "3 scenarios, two processes with different hash seeds"


# --------------------------------------------------------------------------- 3


@criterion(3, "100000 STIDs without duplicates")
def test_c03_stid_uniqueness():
    reg = StidRegistry(seed=3)
    ids = [reg.new() for _ in range(100_000)]
    texts = {str(s) for s in ids}
    assert len(texts) == 100_000
    assert all(len(t) == 32 for t in list(texts)[:100])
    return f"{len(texts)} distinct"


# --------------------------------------------------------------------------- 4


def _aaa_sim(scenario_variant):
    def edit(doc):
        doc["consumers"].append({
            "consumer_id": "viewer", "trust": "THIRD_PARTY", "token": "tok-viewer",
            "scopes": ["RECEIVE_RESULTS"], "mnos": ["h"],
        })
    sim = build(scenario_variant("uc2_smart_home_thirdparty", edit))
    sim.scheduler.run(until_us=0)
    return sim


@criterion(4, "AAA rejects bad token, scope and area before the SCF; direct calls FORBIDDEN_PATH")
def test_c04_aaa(scenario_variant):
    sim = _aaa_sim(scenario_variant)
    bus = sim.mnos["h"].bus
    scf_id = sim.mnos["h"].scf.nf_id
    rng = np.random.default_rng(4)
    good_tssa = {"polygon": [[1, 1], [9, 1], [9, 9], [1, 9]]}
    targets = {"confidence_level": 0.5}

    def no_scf_since(mark):
        return not any(r["target"] == scf_id for r in sim.trace.records[mark:])

    rejected = {"token": 0, "scope": 0, "area": 0, "direct": 0}
    n = 100
    for i in range(n):
        # invalid token
        mark = len(sim.trace.records)
        bad = "tok-" + "".join(rng.choice(list("abcdef0123"), 8))
        with pytest.raises(HandlerError) as exc:
            bus.request("care-provider", "Nsef", "Authenticate", {"consumer_id": "care-provider", "token": bad})
        assert exc.value.code == "AUTH_FAILED"
        with pytest.raises(HandlerError) as exc:
            bus.request("care-provider", "Nsef", "SubmitSensingRequest",
                        {"session": f"forged-{i}", "tssa": good_tssa, "targets": targets})
        assert exc.value.code == "AUTH_FAILED"
        assert no_scf_since(mark)
        rejected["token"] += 1

        # missing REQUEST_SENSING scope
        mark = len(sim.trace.records)
        sess = bus.request("viewer", "Nsef", "Authenticate", {"consumer_id": "viewer", "token": "tok-viewer"})["session"]
        with pytest.raises(HandlerError) as exc:
            bus.request("viewer", "Nsef", "SubmitSensingRequest", {"session": sess, "tssa": good_tssa, "targets": targets})
        assert exc.value.code == "FORBIDDEN_SCOPE"
        assert no_scf_since(mark)
        rejected["scope"] += 1

        # TSSA leaving the allowed area
        mark = len(sim.trace.records)
        sess = bus.request("care-provider", "Nsef", "Authenticate",
                           {"consumer_id": "care-provider", "token": "tok-care-provider"})["session"]
        x0, y0 = rng.uniform(-5, 8, 2)
        w = rng.uniform(3, 8)
        poly = [[x0, y0], [x0 + w, y0], [x0 + w, y0 + w], [x0, y0 + w]]
        if geometry.polygon_within(poly, [(0, 0), (10, 0), (10, 10), (0, 10)]):
            poly = [[p[0] + 11, p[1]] for p in poly]
        with pytest.raises(HandlerError) as exc:
            bus.request("care-provider", "Nsef", "SubmitSensingRequest",
                        {"session": sess, "tssa": {"polygon": poly}, "targets": targets})
        assert exc.value.code == "AREA_VIOLATION"
        assert no_scf_since(mark)
        rejected["area"] += 1

        # third party going straight to the SCF, with and without a trust claim
        for trust in ("THIRD_PARTY", None):
            payload = {"tssa": good_tssa, "targets": targets, "consumer": "care-provider"}
            if trust:
                payload["trust"] = trust
            with pytest.raises(HandlerError) as exc:
                bus.request("care-provider", scf_id, "SensingServiceRequest", payload)
            assert exc.value.code == "FORBIDDEN_PATH"
        rejected["direct"] += 1
    assert all(v == n for v in rejected.values())
    return ", ".join(f"{k} {v}/{n}" for k, v in rejected.items())


# --------------------------------------------------------------------------- 5


@criterion(5, "inverse-variance fusion RMSE within 5% of closed form")
def test_c05_fusion_oracle():
    s1, s2 = 1.0, 2.0
    expected = math.sqrt(1.0 / (1.0 / s1**2 + 1.0 / s2**2))
    rng = np.random.default_rng(5)
    n = 10_000
    truth = rng.uniform(-50, 50, size=(n, 2))
    e1 = rng.normal(0, s1, size=(n, 2))
    e2 = rng.normal(0, s2, size=(n, 2))
    sq = 0.0
    for i in range(n):
        d1 = Detection(tuple(truth[i] + e1[i]), (0.0, 0.0), 20.0, 0.9)
        d2 = Detection(tuple(truth[i] + e2[i]), (0.0, 0.0), 20.0, 0.9)
        out = fuse([DetectionStream("a", s1, (d1,)), DetectionStream("b", s2, (d2,), Modality.WIFI)],
                   gate_m=1e6, policy=FusionPolicy.INVERSE_VARIANCE)
        assert len(out) == 1 and out[0].merged
        err = np.asarray(out[0].position_m) - truth[i]
        sq += float(err @ err)
    rmse = math.sqrt(sq / (2 * n))  # per axis
    assert abs(rmse - expected) <= 0.05 * expected, (rmse, expected)
    return f"rmse {rmse:.4f} m vs {expected:.4f} m over {n} merges"


# --------------------------------------------------------------------------- 6


@criterion(6, "missed-detection and false-alarm statistics")
def test_c06_kpi_statistics():
    p_detect, fa_rate, n = 0.9, 0.05, 60_000
    cap = SensingCapability.from_doc({
        "entity_id": "s", "modalities": ["SIX_G"], "roles": ["STX", "SRX"],
        "coverage": {"position": [0, 0], "range_m": 20},
    })
    sensor = SensorModel("s", cap, p_detect, 0.3, fa_rate, True)
    world = World([GroundTruthObject("o", "HUMAN", ((0, (5.0, 5.0)),))])
    labels = LabelChannel(world)
    rng = np.random.default_rng(6)
    stid = Stid(1)
    tssa = Tssa.from_doc({"polygon": [[-30, -30], [30, -30], [30, 30], [-30, 30]]})
    missed = false = 0.0
    for i in range(1, n + 1):
        world.time_us = i * 1000
        data = scan(sensor, world, stid, i, rng, labels=labels)
        k = measure_window(
            tssa=tssa, window_end_us=i * 1000, window_start_us=(i - 1) * 1000,
            streams=[DetectionStream("s", 0.3, data.detections, data.modality, labels.labels("s", stid, i))],
            fused=[], results=[], latency_us=0, labels=labels, gate_m=2.0,
        )
        missed += k.values["missed_detection_rate_max"]
        false += k.values["false_alarm_rate_max"]
    q = 1 - p_detect
    half = z99() * math.sqrt(q * (1 - q) / n)
    md = missed / n
    fa = false / n
    assert q - half <= md <= q + half, (md, q - half, q + half)
    assert abs(fa - fa_rate) <= 0.05 * fa_rate, fa
    return f"missed {md:.4f} in [{q - half:.4f}, {q + half:.4f}], false-alarm mean {fa:.4f} over {n} scans"


# --------------------------------------------------------------------------- 7


@criterion(7, "UC1 switch/augment within 2 windows of K failing windows, never earlier")
def test_c07_switching(scenario_variant):
    def force_weak_6g(doc):
        doc["duration_s"] = 30
        for m in doc["mnos"]:
            for e in m["entities"]:
                if "SIX_G" in e["modalities"] and e["kind"] == "AN":
                    e["p_detect"] = 0.3
    sd = scenario_variant("uc1_smart_shopping", force_weak_6g)
    k = 3
    runs = 0
    seen: dict[str, int] = {}
    for seed in range(100):
        sim = build(sd, seed=seed)
        execute(sim)
        for name, inst in sim.mnos.items():
            assert inst.scf.policy.k_windows == k
            for stid in inst.scf.tasks:
                s = str(stid)
                evals = []
                first_kth = None
                decision = None
                for r in sim.trace.records:
                    if r["summary"].get("stid") != s:
                        continue
                    if r["operation"] == "KpiEvaluation":
                        evals.append(r)
                        if first_kth is None and r["summary"]["verdict"] == "FAIL" and r["summary"]["streak"] >= k:
                            first_kth = r
                    elif r["operation"] == "SwitchDecision":
                        prev = evals[-1] if evals else None
                        assert prev is not None and prev["summary"]["verdict"] == "FAIL", (seed, name, r)
                        assert prev["summary"]["streak"] >= k, (seed, name, r)
                        if decision is None:
                            decision = r
                assert first_kth is not None, f"seed {seed} {name}: 6G never failed {k} windows"
                assert decision is not None, f"seed {seed} {name}: no decision"
                assert decision["summary"]["decision"] in ("SWITCH_TO_NON6G", "AUGMENT_WITH_NON6G")
                lag = decision["summary"]["window_index"] - first_kth["summary"]["window_index"]
                assert 0 <= lag <= 2, (seed, name, lag)
                seen[decision["summary"]["decision"]] = seen.get(decision["summary"]["decision"], 0) + 1
                runs += 1
    return f"{runs} tasks over 100 runs, first decisions {dict(sorted(seen.items()))}"


# --------------------------------------------------------------------------- 8


@criterion(8, "UC3 occlusion and aggregated detection rate")
def test_c08_occlusion_aggregation():
    hidden, spot, p_detect = "hidden-worker", (16.0, 3.0), 0.9
    hits = views = scans_b = 0
    for seed in range(10):
        sim, _ = run("uc3_smart_factory", seed=seed)
        for (srx, _stid, _seq), labs in sim.labels.items():
            if srx == "f.robot-b":
                scans_b += 1
                assert hidden not in labs, f"seed {seed}: robot B saw the hidden worker"
        dt = sim.consumers["factory-dt"]
        a_stid = dt.stids["robot-a-view"][1]
        for v in [v for v in dt.views if v["stid"] == a_stid][3:]:
            views += 1
            hits += any(
                o["object_type"] == "HUMAN" and geometry.distance(o["position_m"], spot) <= 1.0 for o in v["objects"]
            )
    rate = hits / views
    half = z99() * math.sqrt(p_detect * (1 - p_detect) / views)
    assert scans_b > 500
    assert p_detect - half <= rate <= p_detect + half, (rate, half)
    return f"robot B 0/{scans_b} scans; view rate {rate:.3f} in [{p_detect - half:.3f}, {p_detect + half:.3f}] (n={views})"


# --------------------------------------------------------------------------- 9


def _random_frame(rng: np.random.Generator) -> SpFrame:
    kind = int(rng.integers(0, 3))
    payload = None
    if rng.random() < 0.8:
        payload = {
            "k": int(rng.integers(-(2**40), 2**40)),
            "x": float(rng.normal()),
            "s": "".join(chr(int(c)) for c in rng.integers(32, 0x2FF, int(rng.integers(0, 12)))),
            "l": [int(v) for v in rng.integers(0, 1000, int(rng.integers(0, 6)))],
        }
    return SpFrame(
        kind, int(rng.integers(0, 4)), Stid(int.from_bytes(rng.bytes(16), "big")),
        int(rng.integers(0, 2**32)), int(rng.integers(0, 2**63)), payload,
    )


@criterion(9, "frame codec round-trip, bit-flip rejection, 44-byte layout")
def test_c09_codec():
    rng = np.random.default_rng(9)
    n = 100_000
    frames = []
    for _ in range(n):
        fr = _random_frame(rng)
        raw = encode(fr)
        back = decode(raw)
        assert back == fr
        assert encode(back) == raw
        if len(frames) < 200:
            frames.append(raw)
    flips = 0
    for raw in frames:
        for bit in range(len(raw) * 8):
            bad = bytearray(raw)
            bad[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(IsacError):
                decode(bytes(bad))
            flips += 1

    stid = Stid(0x0123456789ABCDEF0011223344556677)
    raw = encode(SpFrame(PayloadType.SENSING_DATA, 2, stid, 7, 1_000_000, None))
    body = (
        b"SPF1" + b"\x01" + b"\x00" + b"\x02" + b"\x00"
        + bytes.fromhex("0123456789abcdef0011223344556677")
        + b"\x00\x00\x00\x07"
        + b"\x00\x00\x00\x00\x00\x0f\x42\x40"
        + b"\x00\x00\x00\x00"
    )
    expected = body + struct.pack(">I", zlib.crc32(body))
    assert len(raw) == 44 and raw == expected
    return f"{n} round-trips, {flips} single-bit flips rejected, empty frame = 44 bytes"


# --------------------------------------------------------------------------- 10


@criterion(10, "latency stamps within budget at 2 ms; 150 ms delay fails the latency KPI")
def test_c10_latency():
    sim, _ = run("uc2_smart_home", bus_delay_ms=2)
    stamps = [
        r["summary"]["latency_us"] for r in sim.trace.records
        if r["operation"] == "SensingResultAvailable" and r["target"] == "home-app"
    ]
    assert stamps and max(stamps) <= 100_000, max(stamps)

    slow, _ = run("uc2_smart_home", bus_delay_ms=150)
    task = next(iter(slow.mnos["h"].scf.tasks.values()))
    verdicts = [kpi_satisfied(task.targets, k)[0]["max_service_latency_ms"] for _, _, k in task.kpi_history]
    assert verdicts and not any(verdicts)
    failing = [
        r for r in slow.trace.records
        if r["operation"] == "KpiEvaluation" and "max_service_latency_ms" in r["summary"].get("failing", ())
    ]
    assert failing
    return f"max stamp {max(stamps) / 1000:.1f} ms at 2 ms; {len(verdicts)} windows fail latency at 150 ms"


# --------------------------------------------------------------------------- 11


@criterion(11, "charging ledger equals delivered results per STID")
def test_c11_ledger():
    total = 0
    for name in SCENARIOS + ("uc2_smart_home_thirdparty",):
        sim, _ = run(name)
        ledger: dict[str, int] = {}
        for inst in sim.mnos.values():
            if inst.sef is not None:
                for e in inst.sef.ledger:
                    ledger[e.stid] = ledger.get(e.stid, 0) + e.results_delivered
        delivered: dict[str, int] = {}
        for r in sim.trace.records:
            if r["operation"] == "SensingResultNotify":
                s = r["summary"]["stid"]
                delivered[s] = delivered.get(s, 0) + r["summary"]["n_results"]
        assert ledger == delivered, name
        for app in sim.consumers.values():
            for _, stid in app.stids.values():
                if stid in ledger:
                    assert app.delivered(stid) == ledger[stid]
        total += sum(ledger.values())
    assert total > 0
    return f"{total} charged results reconcile across 4 scenarios"


# --------------------------------------------------------------------------- 12


@criterion(12, "PFR matrix with no FAIL")
def test_c12_pfr_matrix():
    wanted = {
        "uc1_smart_shopping": [f"PFR1-{i}" for i in range(1, 7)],
        "uc2_smart_home": [f"PFR2-{i}" for i in range(1, 6)],
        "uc2_smart_home_thirdparty": [f"PFR2-{i}" for i in range(1, 7)],
        "uc3_smart_factory": [f"PFR3-{i}" for i in range(1, 5)],
    }
    passed = 0
    for name, ids in wanted.items():
        sim, _ = run(name)
        verdicts = check_pfrs(sim.trace.records, sim.scenario.doc)
        assert all(v.verdict != "FAIL" for v in verdicts.values()), (name, verdicts)
        for pid in ids:
            assert verdicts[pid].verdict == "PASS", (name, pid, verdicts[pid])
            passed += 1
    return f"{passed} PFR verdicts PASS (PFR2-6 via the third-party variant)"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
