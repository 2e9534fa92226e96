"""Synthetic event-camera channel for a moving LED bar.

LEDs are projected through a pinhole camera, rasterised as square
footprints snapped to the pixel grid and turned on or off chip by chip. A pixel emits an event whenever
the number of lit LEDs covering it changes; sensor imperfections (missed
events, spurious events, timestamp jitter, refractory suppression) are
applied on top.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfView
from .events import EVENT_DTYPE
from .transmitter import Session


@dataclass
class CameraModel:
    focal_length: float = 0.035  # m
    pixel_pitch: float = 5.0e-6  # m
    width: int = 1280
    height: int = 720
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.focal_length <= 0 or self.pixel_pitch <= 0:
            raise InvalidArgument("focal length and pixel pitch must be positive")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgument("principal point must lie on the sensor")

    @property
    def focal_px(self) -> float:
        return self.focal_length / self.pixel_pitch


@dataclass
class CameraPose:
    """Camera centre in world coordinates and the world-to-camera rotation."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: np.ndarray | None = None


def project_point(point, pose: CameraPose | None = None, camera: CameraModel | None = None) -> np.ndarray:
    """Pinhole projection of one point ``(3,)`` or many ``(n, 3)`` to (u, v) pixels."""
    pose = pose or CameraPose()
    camera = camera or CameraModel()
    p = np.asarray(point, dtype=float)
    rel = p - np.asarray(pose.position, dtype=float)
    if pose.rotation is not None:
        rel = rel @ np.asarray(pose.rotation, dtype=float).T
    X, Y, Z = rel[..., 0], rel[..., 1], rel[..., 2]
    if np.any(Z <= 0):
        raise OutOfView("point is not in front of the camera")
    scale = camera.focal_px / Z
    return np.stack([X * scale + camera.cx, Y * scale + camera.cy], axis=-1)


@dataclass
class LedBarLayout:
    n_leds: int = 96
    led_spacing: float = 0.01  # m between adjacent LED centres
    leds_per_cluster: int = 6
    base_height: float | None = None  # height of LED 0 w.r.t. the camera; None centres the bar
    led_size: float | None = None  # edge of each LED's square footprint (m); None: the LED spacing

    def __post_init__(self):
        if self.n_leds < 1 or self.leds_per_cluster < 1 or self.n_leds % self.leds_per_cluster:
            raise InvalidArgument("LEDs must split evenly into clusters")
        if self.led_spacing <= 0:
            raise InvalidArgument("led_spacing must be positive")
        if self.led_size is None:
            self.led_size = self.led_spacing
        if self.led_size <= 0:
            raise InvalidArgument("led_size must be positive")

    @property
    def n_clusters(self) -> int:
        return self.n_leds // self.leds_per_cluster

    @property
    def length(self) -> float:
        return self.n_leds * self.led_spacing

    def led_heights(self) -> np.ndarray:
        base = self.base_height
        if base is None:
            base = -(self.n_leds - 1) / 2.0 * self.led_spacing
        return base + np.arange(self.n_leds) * self.led_spacing

    def cluster_of_led(self) -> np.ndarray:
        return np.arange(self.n_leds) // self.leds_per_cluster

    def cluster_center_heights(self) -> np.ndarray:
        return self.led_heights().reshape(self.n_clusters, self.leds_per_cluster).mean(axis=1)

    @property
    def center_height(self) -> float:
        return float(self.led_heights().mean())

    def cluster_spacing(self, i: int, j: int) -> float:
        return abs(i - j) * self.leds_per_cluster * self.led_spacing


@dataclass
class Trajectory:
    """Straight drive past a roadside bar at constant speed.

    The bar stands ``lateral_offset`` to the left of the optical axis; its
    longitudinal distance moves from ``start_distance`` toward
    ``end_distance``. Vibration adds a sinusoidal vertical image shift.
    """

    speed: float = 8.3
    lateral_offset: float = 1.5
    start_distance: float = 30.0
    end_distance: float = 100.0
    duration: float | None = None
    vibration_amplitude_px: float = 0.0
    vibration_freq_hz: float = 10.0

    def __post_init__(self):
        if self.speed < 0:
            raise InvalidArgument("speed must be >= 0")
        if self.start_distance <= 0 or self.end_distance <= 0:
            raise InvalidArgument("distances must be positive")

    @property
    def direction(self) -> float:
        return 1.0 if self.end_distance >= self.start_distance else -1.0

    @property
    def span(self) -> float:
        if self.duration is not None:
            return self.duration
        if self.speed > 0:
            return abs(self.end_distance - self.start_distance) / self.speed
        return math.inf

    def longitudinal(self, t):
        return self.start_distance + self.direction * self.speed * np.asarray(t, dtype=float)

    def vibration_px(self, t):
        t = np.asarray(t, dtype=float)
        if self.vibration_amplitude_px == 0:
            return np.zeros_like(t)
        return self.vibration_amplitude_px * np.sin(2 * np.pi * self.vibration_freq_hz * t)

    @property
    def peak_slew_px_per_ms(self) -> float:
        return 2 * np.pi * self.vibration_freq_hz * self.vibration_amplitude_px / 1000.0


def vibration_amplitude_for_slew(slew_px_per_ms: float, freq_hz: float) -> float:
    """Amplitude (px) of a sinusoid whose peak slew is ``slew_px_per_ms``."""
    return slew_px_per_ms * 1000.0 / (2 * np.pi * freq_hz)


def ground_truth_distance(trajectory: Trajectory, t, layout: LedBarLayout | None = None):
    """Euclidean camera-to-bar-centre distance at time ``t`` (s)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > trajectory.span + 1e-9):
        raise InvalidArgument(f"t outside trajectory span [0, {trajectory.span}]")
    z = trajectory.longitudinal(t_arr)
    h = layout.center_height if layout is not None else 0.0
    d = np.sqrt(z**2 + trajectory.lateral_offset**2 + h**2)
    return float(d) if np.ndim(d) == 0 else d


def project_leds(layout: LedBarLayout, trajectory: Trajectory, camera: CameraModel, t) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) of every LED at each time; arrays of shape (n_times, n_leds)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = trajectory.longitudinal(t)[:, None]
    if np.any(z <= 0):
        raise OutOfView("bar is behind the camera")
    scale = camera.focal_px / z
    u = -trajectory.lateral_offset * scale + camera.cx
    v = layout.led_heights()[None, :] * scale + camera.cy + trajectory.vibration_px(t)[:, None]
    return np.broadcast_to(u, v.shape).copy(), v


@dataclass
class EventNoiseParams:
    miss_prob: float = 0.0
    spurious_rate: float = 0.0  # events / pixel / s near the bar, positive and negative combined
    neg_spurious_bias: float = 1.0  # negative:positive ratio of spurious events
    timestamp_jitter: float = 0.0  # s, uniform half-width
    refractory: float = 0.0  # s
    rng_seed: int = 0
    spurious_margin_px: int = 2  # spurious events fill the bar's bounding box grown by this margin
    background_rate: float = 0.0  # events / pixel / s over the whole sensor
    max_event_rate: float | None = None  # throughput cap, events / s

    def __post_init__(self):
        if not 0 <= self.miss_prob < 1:
            raise InvalidArgument("miss_prob must be in [0, 1)")
        if self.spurious_rate < 0 or self.background_rate < 0:
            raise InvalidArgument("rates must be >= 0")
        if self.neg_spurious_bias < 1:
            raise InvalidArgument("neg_spurious_bias must be >= 1")
        if self.timestamp_jitter < 0 or self.refractory < 0:
            raise InvalidArgument("jitter and refractory must be >= 0")

    @classmethod
    def off(cls, rng_seed: int = 0) -> "EventNoiseParams":
        return cls(rng_seed=rng_seed)

    @classmethod
    def default(cls, rng_seed: int = 0) -> "EventNoiseParams":
        return cls(
            miss_prob=0.1,
            spurious_rate=1000.0,
            neg_spurious_bias=2.0,
            timestamp_jitter=10e-6,
            rng_seed=rng_seed,
        )


@dataclass
class SimulationResult:
    events: np.ndarray
    truth_t_us: np.ndarray
    truth_distance: np.ndarray
    stats: dict = field(default_factory=dict)


def footprint(centre, size_px):
    """First pixel and pixel count covered by ``[centre - size/2, centre + size/2)``.

    Edges snap to the nearest pixel boundary (pixel ``i`` spans
    ``[i - 0.5, i + 0.5)``); a footprint that would be empty keeps the
    pixel nearest to the centre.
    """
    c = np.asarray(centre, dtype=float)
    lo = np.floor(c - size_px / 2 + 0.5).astype(np.int64)
    hi = np.floor(c + size_px / 2 + 0.5).astype(np.int64)
    empty = hi <= lo
    lo = np.where(empty, np.floor(c + 0.5).astype(np.int64), lo)
    return lo, np.where(empty, 1, hi - lo)


def _chunk_transitions(on, x0, nx, y0, ny, width, height):
    """Luminance-change events for one block of chips.

    ``on`` and the footprint arrays have shape (m, n_leds); row 0 is the state
    just before the block and never produces events itself. Returns rows
    (1..m-1), flat pixel ids and polarities.
    """
    m = on.shape[0]
    rows, pids = [], []
    shapes = np.unique(np.stack([nx[on], ny[on]], axis=1), axis=0) if on.any() else []
    for sx, sy in shapes:
        sel = on & (nx == sx) & (ny == sy)
        rr = np.nonzero(sel)[0]
        xx = x0[sel]
        yy = y0[sel]
        for dy in range(sy):
            for dx in range(sx):
                x = xx + dx
                y = yy + dy
                inside = (x >= 0) & (x < width) & (y >= 0) & (y < height)
                rows.append(rr[inside])
                pids.append(y[inside] * width + x[inside])
    if not rows:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int8)
    rows = np.concatenate(rows).astype(np.int64)
    pids = np.concatenate(pids).astype(np.int64)
    key, cnt = np.unique(pids * m + rows, return_counts=True)
    pid = key // m
    r = key % m

    same = pid[1:] == pid[:-1]
    out_r, out_pid, out_p = [], [], []

    step = same & (r[1:] == r[:-1] + 1) & (cnt[1:] != cnt[:-1])
    i = np.flatnonzero(step)
    out_r.append(r[i + 1])
    out_pid.append(pid[i + 1])
    out_p.append(np.sign(cnt[i + 1] - cnt[i]))

    gap = same & (r[1:] > r[:-1] + 1)
    i = np.flatnonzero(gap)
    out_r += [r[i] + 1, r[i + 1]]
    out_pid += [pid[i], pid[i + 1]]
    out_p += [-np.ones(i.size, np.int64), np.ones(i.size, np.int64)]

    first = np.r_[True, ~same]
    i = np.flatnonzero(first & (r > 0))
    out_r.append(r[i])
    out_pid.append(pid[i])
    out_p.append(np.ones(i.size, np.int64))

    last = np.r_[~same, True]
    i = np.flatnonzero(last & (r < m - 1))
    out_r.append(r[i] + 1)
    out_pid.append(pid[i])
    out_p.append(-np.ones(i.size, np.int64))

    return np.concatenate(out_r), np.concatenate(out_pid), np.concatenate(out_p).astype(np.int8)


def _spurious(rng, rate, box, t_lo, t_hi, bias):
    x0, x1, y0, y1 = box
    area = max(0, x1 - x0) * max(0, y1 - y0)
    n = rng.poisson(rate * area * max(0.0, t_hi - t_lo)) if area else 0
    t = rng.uniform(t_lo, t_hi, n)
    x = rng.integers(x0, x1, n) if n else np.empty(0, np.int64)
    y = rng.integers(y0, y1, n) if n else np.empty(0, np.int64)
    p = np.where(rng.random(n) < bias / (1.0 + bias), -1, 1).astype(np.int8)
    return t, x, y, p


def _apply_refractory(t_us, pid, refractory_us):
    """Mask of events kept when each pixel ignores events within the dead time of its last output."""
    keep = np.ones(t_us.size, dtype=bool)
    if refractory_us <= 0 or t_us.size < 2:
        return keep
    order = np.lexsort((t_us, pid))
    ts, ps = t_us[order], pid[order]
    close = (ps[1:] == ps[:-1]) & (np.diff(ts) < refractory_us)
    if not close.any():
        return keep
    for pixel in np.unique(ps[1:][close]):
        lo, hi = np.searchsorted(ps, [pixel, pixel + 1])
        last = None
        for j in range(lo, hi):
            if last is not None and ts[j] - last < refractory_us:
                keep[order[j]] = False
            else:
                last = ts[j]
    return keep


def simulate_events(
    session: Session,
    layout: LedBarLayout,
    trajectory: Trajectory,
    camera: CameraModel,
    noise: EventNoiseParams,
    chunk_chips: int = 2048,
) -> SimulationResult:
    """Render a transmitted session into a sorted event stream plus ground truth.

    Time zero of the event stream is time zero of the trajectory; the
    session may start later (an idle lead-in). Each block of
    ``chunk_chips`` chips draws from its own RNG derived from
    ``noise.rng_seed`` so the output does not depend on processing order.
    """
    cfg = session.config
    if layout.n_clusters != cfg.n_clusters or layout.leds_per_cluster != cfg.leds_per_cluster:
        raise InvalidArgument("LED layout does not match the transmitter cluster configuration")
    T = cfg.chip_period
    if noise.timestamp_jitter >= T / 2:
        raise InvalidArgument("timestamp jitter must stay below half a chip period")
    if session.end_time > trajectory.span + 1e-9:
        raise InvalidArgument("trajectory does not cover the session")
    W, H = camera.width, camera.height
    cluster = layout.cluster_of_led()
    n_chips = session.n_chips
    if session.idle_level is None:
        before = session.chips[:, 0]
    else:
        before = np.full(cfg.n_clusters, session.idle_level, dtype=np.int8)

    ts, xs, ys, ps = [], [], [], []
    stats = dict(intended=0, missed=0, spurious=0, background=0, refractory=0, truncated=0)
    cap = noise.max_event_rate

    def finish_chunk(rng, t, x, y, p, t_lo, t_hi, box):
        parts_t, parts_x, parts_y, parts_p = [t], [x], [y], [p]
        if noise.spurious_rate > 0 and box is not None:
            st, sx, sy, sp = _spurious(rng, noise.spurious_rate, box, t_lo, t_hi, noise.neg_spurious_bias)
            stats["spurious"] += st.size
            parts_t.append(st); parts_x.append(sx); parts_y.append(sy); parts_p.append(sp)
        if noise.background_rate > 0:
            bt, bx, by, bp = _spurious(rng, noise.background_rate, (0, W, 0, H), t_lo, t_hi, 1.0)
            stats["background"] += bt.size
            parts_t.append(bt); parts_x.append(bx); parts_y.append(by); parts_p.append(bp)
        t = np.concatenate(parts_t)
        x = np.concatenate(parts_x).astype(np.int64)
        y = np.concatenate(parts_y).astype(np.int64)
        p = np.concatenate(parts_p).astype(np.int8)
        if cap is not None:
            limit = int(cap * (t_hi - t_lo))
            if t.size > limit:
                order = np.argsort(t, kind="stable")[:limit]
                stats["truncated"] += t.size - limit
                warnings.warn(
                    f"event throughput cap of {cap:g} ev/s exceeded; truncated "
                    f"{t.size - limit} events in [{t_lo:.4f}, {t_hi:.4f}) s",
                    RuntimeWarning,
                    stacklevel=3,
                )
                t, x, y, p = t[order], x[order], y[order], p[order]
        ts.append(t); xs.append(x); ys.append(y); ps.append(p)

    def bar_box(fp):
        m = noise.spurious_margin_px
        fx0, fnx, fy0, fny = fp
        x0 = max(0, int(fx0.min()) - m)
        x1 = min(W, int((fx0 + fnx).max()) + m)
        y0 = max(0, int(fy0.min()) - m)
        y1 = min(H, int((fy0 + fny).max()) + m)
        if x0 >= x1 or y0 >= y1:
            return None
        return (x0, x1, y0, y1)

    def pixel_positions(times):
        u, v = project_leds(layout, trajectory, camera, times)
        size = (layout.led_size * camera.focal_px / trajectory.longitudinal(times))[:, None]
        x0, nx = footprint(u, size)
        y0, ny = footprint(v, size)
        return x0, nx, y0, ny

    # Idle lead-in before the first chip: only noise.
    if session.start_time > 0:
        rng = np.random.default_rng(np.random.SeedSequence([noise.rng_seed, 0]))
        fp = pixel_positions(np.array([0.0, session.start_time]))
        finish_chunk(rng, np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64),
                     np.empty(0, np.int8), 0.0, session.start_time, bar_box(fp))

    for c, n0 in enumerate(range(0, n_chips, chunk_chips)):
        n1 = min(n_chips, n0 + chunk_chips)
        rng = np.random.default_rng(np.random.SeedSequence([noise.rng_seed, c + 1]))
        chip_idx = np.arange(n0 - 1, n1)
        times = session.start_time + np.maximum(chip_idx, 0) * T
        fp = pixel_positions(times)
        levels = np.empty((chip_idx.size, cfg.n_clusters), dtype=np.int8)
        levels[1:] = session.chips[:, n0:n1].T
        levels[0] = before if n0 == 0 else session.chips[:, n0 - 1]
        on = (levels > 0)[:, cluster]
        r, pid, p = _chunk_transitions(on, *fp, W, H)
        stats["intended"] += r.size
        if noise.miss_prob > 0:
            kept = rng.random(r.size) >= noise.miss_prob
            stats["missed"] += int(r.size - kept.sum())
            r, pid, p = r[kept], pid[kept], p[kept]
        t = session.start_time + (n0 - 1 + r) * T
        if noise.timestamp_jitter > 0:
            t = t + rng.uniform(-noise.timestamp_jitter, noise.timestamp_jitter, t.size)
        t_lo = session.start_time + n0 * T
        t_hi = session.start_time + n1 * T
        finish_chunk(rng, t, pid % W, pid // W, p, t_lo, t_hi, bar_box(fp))

    t = np.concatenate(ts) if ts else np.empty(0)
    x = np.concatenate(xs) if xs else np.empty(0, np.int64)
    y = np.concatenate(ys) if ys else np.empty(0, np.int64)
    p = np.concatenate(ps) if ps else np.empty(0, np.int8)
    t_us = np.rint(t * 1e6).astype(np.int64)
    ok = t_us >= 0
    t_us, x, y, p = t_us[ok], x[ok], y[ok], p[ok]

    if noise.refractory > 0:
        keep = _apply_refractory(t_us, y * W + x, int(round(noise.refractory * 1e6)))
        stats["refractory"] = int((~keep).sum())
        t_us, x, y, p = t_us[keep], x[keep], y[keep], p[keep]

    # One int64 key sorts by (t, y, x) and carries the polarity in its low bit.
    key = ((t_us * H + y) * W + x) * 2 + (p > 0)
    key.sort()
    events = np.empty(key.size, dtype=EVENT_DTYPE)
    events["p"] = np.where(key & 1, 1, -1)
    key >>= 1
    events["x"] = key % W
    key //= W
    events["y"] = key % H
    events["t"] = key // H
    stats["total"] = int(events.size)

    frame_times = np.array([session.frame_start(f) for f in range(session.n_frames + 1)])
    frame_times = frame_times[frame_times <= trajectory.span + 1e-9]
    truth = ground_truth_distance(trajectory, frame_times, layout)
    return SimulationResult(
        events=events,
        truth_t_us=np.rint(frame_times * 1e6).astype(np.int64),
        truth_distance=np.atleast_1d(truth),
        stats=stats,
    )
