from __future__ import annotations

import math
from collections import Counter

import pytest

from isacsim.bus import HandlerError
from isacsim.errors import IsacError
from isacsim.scenario import build, run
from isacsim.sef import ChargingEvent, ConsumerAccount, Sef


def test_account_and_event_validation():
    with pytest.raises(IsacError):
        ConsumerAccount("c", "tok", frozenset())
    with pytest.raises(IsacError):
        ConsumerAccount("c", "", frozenset({"REQUEST_SENSING"}))
    with pytest.raises(IsacError):
        ChargingEvent("c", "s", (0, 1), -1, 0)
    acc = ConsumerAccount("c", "t", frozenset({"RECEIVE_RESULTS"}))
    with pytest.raises(IsacError):
        Sef("sef", [acc, ConsumerAccount("d", "t", frozenset({"RECEIVE_RESULTS"}))])


def test_third_party_flow_is_charged_per_window(tmp_path):
    sim, _ = run("uc2_smart_home_thirdparty")
    sef = sim.mnos["h"].sef
    care = sim.consumers["care-provider"]
    mno, stid = care.stids["care"]
    assert mno == "h"
    # one charging event per delivered window, and the counts match the consumer side
    notify = [r for r in sim.trace.records if r["operation"] == "SensingResultNotify" and r["summary"]["stid"] == stid]
    events = [e for e in sef.ledger if e.stid == stid]
    assert len(events) == len(notify) > 0
    assert sef.delivered(stid) == care.delivered(stid) == sum(r["summary"]["n_results"] for r in notify)
    # consecutive windows tile the timeline
    assert all(a.window[1] == b.window[0] for a, b in zip(events, events[1:]))
    # the task summary closed the mapping
    assert sef.summaries and sef.summaries[0]["stid"] == stid
    assert sef.summaries[0]["results_delivered"] == sef.delivered(stid)
    path = tmp_path / "ledger.jsonl"
    sef.export_ledger(path)
    assert len(path.read_text().splitlines()) == len(sef.ledger)
    q = sim.mnos["h"].bus.request("care-provider", "Nsef", "QueryChargingLedger", {"stid": stid})
    assert q["results_delivered"] == sef.delivered(stid)


def test_sef_check_order_session_then_scope_then_area(scenario_variant):
    def edit(doc):
        doc["consumers"].append({"consumer_id": "peek", "trust": "THIRD_PARTY", "token": "tok-peek",
                                 "scopes": ["RECEIVE_RESULTS"], "mnos": ["h"],
                                 "allowed_area": {"polygon": [[0, 0], [1, 0], [1, 1], [0, 1]]}})

    sim = build(scenario_variant("uc2_smart_home_thirdparty", edit))
    sim.scheduler.run(until_us=0)
    bus = sim.mnos["h"].bus
    outside = {"polygon": [[50, 50], [60, 50], [60, 60], [50, 60]]}
    # no session: session failure even though scope and area are also wrong
    with pytest.raises(HandlerError) as exc:
        bus.request("peek", "Nsef", "SubmitSensingRequest", {"tssa": outside, "targets": {"confidence_level": 0.5}})
    assert exc.value.code == "AUTH_FAILED"
    sess = bus.request("peek", "Nsef", "Authenticate", {"consumer_id": "peek", "token": "tok-peek"})["session"]
    with pytest.raises(HandlerError) as exc:
        bus.request("peek", "Nsef", "SubmitSensingRequest",
                    {"session": sess, "tssa": outside, "targets": {"confidence_level": 0.5}})
    assert exc.value.code == "FORBIDDEN_SCOPE"
    with pytest.raises(HandlerError) as exc:
        bus.request("ghost", "Nsef", "Authenticate", {"consumer_id": "ghost", "token": "x"})
    assert exc.value.code == "UNKNOWN_CONSUMER"
    with pytest.raises(HandlerError) as exc:
        bus.request("peek", "Nsef", "SubscribeResults", {"session": sess, "stid": "0" * 32})
    assert exc.value.code == "NO_MAPPING"


def test_delivery_without_mapping_raises_alarm(scenario_variant):
    sim = build(scenario_variant("uc2_smart_home_thirdparty"))
    sim.scheduler.run(until_us=0)
    sef = sim.mnos["h"].sef
    assert sef.deliver_results({"stid": "f" * 32, "n_results": 2}) is None
    alarm = sim.trace.records[-1]
    assert alarm["operation"] == "DeliveryAlarm" and alarm["summary"]["error"] == "NO_MAPPING"
    assert sef.ledger == []


def test_internal_consumer_receives_spf_events_directly():
    sim, _ = run("uc2_smart_home")
    app = sim.consumers["home-app"]
    (_, stid), = app.stids.values()
    assert app.windows and all(w["stid"] == stid for w in app.windows)
    sources = {r["source"] for r in sim.trace.records
               if r["operation"] == "SensingResultAvailable" and r["target"] == "home-app"}
    assert sources and all(s.startswith("h.spf") for s in sources)


def test_digital_twin_merges_and_throttles_ris():
    sim, _ = run("uc3_smart_factory")
    dt = sim.consumers["factory-dt"]
    ris = sim.mnos["f"].ris["f.ris"]
    assert dt.commands and ris.received == dt.commands
    times = [r["sim_time_us"] for r in sim.trace.records if r["operation"] == "ReconfigureRis"]
    assert all(b - a >= dt.config.cooldown_s * 1e6 for a, b in zip(times, times[1:]))
    # merged views never keep two objects from different tasks within the gate
    for v in dt.views:
        objs = v["objects"]
        for i, a in enumerate(objs):
            for b in objs[i + 1:]:
                if a["source_stid"] != b["source_stid"]:
                    assert math.dist(a["position_m"], b["position_m"]) > dt.config.gate_m
    assert Counter(len({o["source_stid"] for o in v["objects"]}) for v in dt.views)[2] > 0
