import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventvlc.channel import CameraModel, EventNoiseParams, LedBarLayout, Trajectory, simulate_events
from eventvlc.codes import barker
from eventvlc.errors import InvalidArgument, SyncFailed
from eventvlc.events import empty_events, make_events, sort_events
from eventvlc.frontend import RoiWindow, apply_roi, barker_sync, frequency_filter, transition_signature
from eventvlc.transmitter import TxConfig, build_session, random_payload

CAM = CameraModel()


def _pixel_train(rate_hz, duration_s, x=5, y=5, t0=0):
    n = int(rate_hz * duration_s)
    t = t0 + np.rint(np.arange(n) * 1e6 / rate_hz).astype(np.int64)
    return make_events(t, np.full(n, x), np.full(n, y), np.where(np.arange(n) % 2, -1, 1))


@pytest.fixture(scope="module")
def bar_sim():
    tx = TxConfig()
    s = build_session(tx, random_payload(tx, 20, np.random.default_rng(0)), start_time=0.001)
    res = simulate_events(s, LedBarLayout(), Trajectory(start_distance=40.0), CAM, EventNoiseParams.off())
    return s, res


def test_roi_basics():
    r = RoiWindow(2, 3, 10, 8)
    assert (r.width, r.height) == (8, 5)
    with pytest.raises(InvalidArgument):
        RoiWindow(4, 4, 4, 9)
    assert r.aligned(4, 4) == RoiWindow(0, 0, 12, 8)
    assert r.aligned(2, 1, origin=(1, 0)) == RoiWindow(1, 3, 11, 8)
    m = np.zeros((20, 30), bool)
    m[5, 7] = m[9, 12] = True
    assert RoiWindow.from_mask(m, 2) == RoiWindow(5, 3, 15, 12)


def test_apply_roi_examples():
    ev = sort_events(make_events(np.arange(50), np.arange(50) % 20, np.arange(50) % 7, 1))
    full = RoiWindow.full(CAM.width, CAM.height)
    assert apply_roi(ev, full).tobytes() == ev.tobytes()
    assert apply_roi(ev, RoiWindow(100, 100, 110, 110)).size == 0
    r = RoiWindow(0, 0, 10, 4)
    once = apply_roi(ev, r)
    assert apply_roi(once, r).tobytes() == once.tobytes()
    assert np.all(np.diff(once["t"]) > 0)
    inactive = RoiWindow(0, 0, 1, 1, active=False)
    assert apply_roi(ev, inactive).size == ev.size


def test_frequency_filter_examples():
    fast = _pixel_train(5000, 0.05, x=3, y=4)
    slow = _pixel_train(10, 1.0, x=9, y=9)
    ev = sort_events(np.concatenate([fast, slow]))
    out, mask = frequency_filter(ev, 0.01, 2000.0, (20, 20))
    assert mask[4, 3] and not mask[9, 9]
    assert out.size == fast.size
    again, mask2 = frequency_filter(out, 0.01, 2000.0, (20, 20))
    assert again.tobytes() == out.tobytes() and np.array_equal(mask, mask2)
    e, m = frequency_filter(empty_events(), 0.01, 2000.0, (4, 4))
    assert e.size == 0 and not m.any()
    with pytest.raises(InvalidArgument):
        frequency_filter(ev, 0.0, 2000.0)


def test_frequency_filter_isolates_transmitter_pixel():
    rng = np.random.default_rng(4)
    dur, shape = 0.5, (30, 40)
    n = rng.poisson(100 * dur * shape[0] * shape[1])
    noise = make_events(np.sort(rng.integers(0, int(dur * 1e6), n)), rng.integers(0, 40, n),
                        rng.integers(0, 30, n), rng.choice([-1, 1], n))
    ev = sort_events(np.concatenate([noise, _pixel_train(10000, dur, x=17, y=11)]))
    _, mask = frequency_filter(ev, 0.01, 2000.0, shape)
    assert list(zip(*np.nonzero(mask))) == [(11, 17)]


def test_roi_from_filter_contains_transmitter(bar_sim):
    _, res = bar_sim
    _, mask = frequency_filter(res.events, 0.01, 2000.0, (CAM.height, CAM.width))
    roi = RoiWindow.from_mask(mask, 2)
    assert apply_roi(res.events, roi).size == res.events.size


def test_transition_signature():
    sig = transition_signature(barker(13), idle_level=-1)
    assert list(sig) == [1, 0, 0, 0, 0, -1, 0, 1, 0, -1, 1, -1, 1]
    assert transition_signature(barker(13), idle_level=None)[0] == 0


def test_sync_on_noiseless_sim(bar_sim):
    s, res = bar_sim
    r = barker_sync(res.events, barker(13), 10_000.0)
    assert abs(r.t0_us - s.frame_start(0) * 1e6) <= 25
    assert r.psr > 3


@given(k=st.integers(-5, 40))
def test_sync_time_covariance(bar_sim, k):
    _, res = bar_sim
    base = barker_sync(res.events, barker(13), 10_000.0)
    ev = res.events.copy()
    ev["t"] += 2000 + 100 * k
    moved = barker_sync(ev, barker(13), 10_000.0)
    assert moved.t0_us - base.t0_us == pytest.approx(2000 + 100 * k)


@pytest.mark.parametrize("seed", range(5))
def test_sync_rejects_pure_noise(seed):
    rng = np.random.default_rng(seed)
    n = 200_000
    ev = sort_events(make_events(np.sort(rng.integers(0, 30_000, n)), rng.integers(0, 20, n),
                                 rng.integers(0, 200, n), np.where(rng.random(n) < 2 / 3, -1, 1)))
    with pytest.raises(SyncFailed):
        barker_sync(ev, barker(13), 10_000.0)


def test_sync_empty_stream():
    with pytest.raises(SyncFailed):
        barker_sync(empty_events(), barker(13), 10_000.0)
