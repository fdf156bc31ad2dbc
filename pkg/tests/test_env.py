from __future__ import annotations

import math

import numpy as np
import pytest

from isacsim.bus import DelayModel, NfKind, NfProfile, Scheduler, ServiceBus, Trace
from isacsim.domain import Modality, SensingCapability, SensingData, Stid
from isacsim.env import (
    GroundTruthObject,
    LabelChannel,
    SensingDevice,
    SensorModel,
    Wall,
    World,
    interpolate,
    line_of_sight,
    path_velocity,
    scan,
    step,
)
from isacsim.errors import IsacError
from isacsim.sensing_plane import SensingPlane, decode


def cap(pos=(0, 0), range_m=10.0, **kw):
    return SensingCapability("s", {"SIX_G"}, {"STX", "SRX"}, pos, range_m, **kw)


def test_interpolation_and_velocity():
    wps = ((0, (0.0, 0.0)), (2_000_000, (4.0, 2.0)))
    assert interpolate(wps, -5) == (0.0, 0.0)
    assert interpolate(wps, 1_000_000) == (2.0, 1.0)
    assert interpolate(wps, 9_000_000) == (4.0, 2.0)
    assert path_velocity(wps, 500_000) == (2.0, 1.0)
    assert path_velocity(wps, 3_000_000) == (0.0, 0.0)
    with pytest.raises(IsacError):
        GroundTruthObject("o", "HUMAN", ((5, (0, 0)), (5, (1, 1))))


def test_world_step_and_walls():
    w = World()
    step(w, 10)
    assert w.time_us == 10
    with pytest.raises(IsacError):
        step(w, 0)
    with pytest.raises(IsacError):
        Wall(((1, 1), (1, 1)))
    glass = Wall(((5, -5), (5, 5)), opaque_to={"SIX_G"})
    assert not line_of_sight((0, 0), (10, 0), [glass], Modality.SIX_G)
    assert line_of_sight((0, 0), (10, 0), [glass], Modality.WIFI)


def test_sensor_model_validation():
    for kw in ({"p_detect": 1.5}, {"sigma_m": 0}, {"false_alarm_rate": -1}):
        with pytest.raises(IsacError):
            SensorModel("s", cap(), **kw)


def test_scan_respects_range_sector_and_walls():
    objs = [
        GroundTruthObject("near", "HUMAN", ((0, (3.0, 0.0)),)),
        GroundTruthObject("far", "HUMAN", ((0, (30.0, 0.0)),)),
        GroundTruthObject("behind", "HUMAN", ((0, (-3.0, 0.0)),)),
        GroundTruthObject("walled", "HUMAN", ((0, (0.0, 6.0)),)),
    ]
    world = World(objs, walls=[Wall(((-1, 4), (1, 4)))])
    sensor = SensorModel("s", cap(azimuth_deg=45, width_deg=180), p_detect=1.0, sigma_m=0.01)
    labels = LabelChannel(world)
    data = scan(sensor, world, Stid(1), 1, np.random.default_rng(0), labels=labels)
    assert labels.labels("s", Stid(1), 1) == ("near",)
    (d,) = data.detections
    assert math.dist(d.position_m, (3, 0)) < 0.1
    assert SensingData.from_doc(data.to_doc()) == data
    nolos = SensorModel("s", cap(azimuth_deg=45, width_deg=180), p_detect=1.0, sigma_m=0.01, requires_los=False)
    scan(nolos, world, Stid(1), 2, np.random.default_rng(0), labels=labels)
    assert set(labels.labels("s", Stid(1), 2)) == {"near", "walled"}


def test_scan_noise_and_false_alarm_statistics():
    world = World([GroundTruthObject("o", "HUMAN", ((0, (2.0, 2.0)),))])
    sensor = SensorModel("s", cap(), p_detect=1.0, sigma_m=0.5, false_alarm_rate=0.3)
    rng = np.random.default_rng(1)
    labels = LabelChannel(world)
    errs, fa = [], 0
    n = 4000
    for i in range(n):
        data = scan(sensor, world, Stid(1), i, rng, labels=labels)
        for det, lab in zip(data.detections, labels.labels("s", Stid(1), i)):
            if lab is None:
                fa += 1
                assert math.dist(det.position_m, (0, 0)) <= 10.0
            else:
                errs.append(det.position_m[0] - 2.0)
    assert len(errs) == n
    assert abs(np.std(errs) - 0.5) < 0.03
    # Poisson mean 0.3, sd of the mean ~ sqrt(0.3/n)
    assert abs(fa / n - 0.3) < 4 * math.sqrt(0.3 / n)



def test_device_activation_scans_on_period_grid():
    sched, trace = Scheduler(), Trace()
    bus = ServiceBus(sched, trace, DelayModel(1000))
    bus.register_nf(NfProfile("scf", NfKind.STUB))
    plane = SensingPlane(sched, trace, DelayModel(1000))
    got = []
    plane.attach_spf("spf", lambda raw, src: got.append(decode(raw)))
    world = World([GroundTruthObject("o", "HUMAN", ((0, (1.0, 1.0)),))])
    dev = SensingDevice(SensorModel("s", cap(max_refresh_hz=4.0), p_detect=1.0), NfKind.UE, world, plane,
                        np.random.default_rng(2), LabelChannel(world))
    dev.attach(bus)
    stid = Stid(5)
    plane.install_route(stid, "spf")
    resp = bus.request("scf", "s", "ActivateSensing",
                       {"stid": str(stid), "roles": ["STX", "SRX"], "modality": "SIX_G", "refresh_rate_hz": 10})
    assert resp["accepted"]
    sched.run(until_us=1_000_000)
    # refresh capped at 4 Hz: scans at 250, 500, 750, 1000 ms
    assert [f.payload["window_end_us"] for f in got] == [250_000, 500_000, 750_000]
    assert bus.request("scf", "s", "DeactivateSensing", {"stid": str(stid)})["was_active"]
    n = dev.scans
    sched.run(until_us=3_000_000)
    assert dev.scans == n
    with pytest.raises(IsacError) as exc:
        dev.scan(stid, 0)
    assert exc.value.code == "NOT_ACTIVATED"
    dev.accept_activation = False
    with pytest.raises(IsacError):
        bus.request("scf", "s", "ActivateSensing",
                    {"stid": str(stid), "roles": ["SRX"], "modality": "SIX_G", "refresh_rate_hz": 1})
