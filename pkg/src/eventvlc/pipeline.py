"""Frame-by-frame receiver: sync, presence maps, decoding and ranging over an event stream."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .channel import CameraModel, LedBarLayout
from .codes import barker
from .errors import InvalidArgument, SyncFailed, TrackingLost
from .frontend import RoiWindow, SyncResult, barker_sync, frequency_filter
from .presence import GridSpec, PresenceMap, cell_majority, presence_map, reconstruct_pairs, slot_samples, track_update
from .ranging import (RangeEstimate, aggregate, batch_subpixel, next_pow2, poc_batch, spacing_weight, triangulate,
                      unit_spectra)
from .transmitter import TxConfig
from .vlc import decode_indices, integrate_all


@dataclass
class ReceiverParams:
    cell_w: int = 2
    cell_h: int = 1  # a vertical bar needs resolution along its length more than across it
    presence_threshold: float = 0.5
    init_window: float = 0.01  # s, frequency-filter window
    init_span: float = 0.02  # s of stream examined to seed the ROI
    min_rate: float = 2000.0  # events / s a pixel must reach to seed the ROI
    roi_margin: int = 2  # px
    sync_min_psr: float = 3.0
    sync_min_significance: float = 8.0
    guard: float = 0.5  # chips of slot lead before each nominal boundary
    min_pair_spacing: float = 0.3  # m
    exclude_clusters: tuple[int, ...] | None = None  # None: outermost and central
    window: tuple[int, int] | None = None  # (height, width) of the ranging window; None sizes it to the ROI
    track_max_shift: int = 4  # cells
    slant_correction: bool = True
    mask_dilation: int = 1  # cells added around the selection before pixel-level re-evaluation
    single_pair: tuple[int, int] | None = None  # None: the longest usable pair
    min_pairs: int = 3  # surviving pair estimates needed for a frame to count as valid
    drift_frames: int = 16  # frames over which the bar's horizontal drift direction is measured

    def __post_init__(self):
        if not 0 < self.presence_threshold <= 1:
            raise InvalidArgument("presence_threshold must be in (0, 1]")
        if not 0 <= self.guard < 1:
            raise InvalidArgument("guard must be in [0, 1) chips")
        GridSpec(self.cell_w, self.cell_h)


def dilate(mask: np.ndarray, n: int) -> np.ndarray:
    """Grow a boolean mask by ``n`` cells in every direction (square structuring element)."""
    if n <= 0:
        return mask
    out = mask.copy()
    for _ in range(n):
        g = out.copy()
        g[1:] |= out[:-1]
        g[:-1] |= out[1:]
        h = g.copy()
        h[:, 1:] |= g[:, :-1]
        h[:, :-1] |= g[:, 1:]
        out = h
    return out


def default_excluded(n_clusters: int) -> tuple[int, ...]:
    return tuple(sorted({0, n_clusters - 1, n_clusters // 2}))


def ranging_pairs(layout: LedBarLayout, excluded, min_spacing: float) -> list[tuple[int, int]]:
    used = [k for k in range(layout.n_clusters) if k not in set(excluded)]
    return [(i, j) for i, j in combinations(used, 2) if layout.cluster_spacing(i, j) >= min_spacing - 1e-12]


@dataclass
class ReceiverOutput:
    sync: SyncResult
    frame_t_us: np.ndarray  # start of each frame's first pilot chip
    decoded: np.ndarray  # (frames, clusters) info codebook index, -1 when absent
    range_t_us: np.ndarray  # pilot midpoint of each frame
    estimate: np.ndarray  # aggregated distance, NaN when unavailable
    single: np.ndarray  # distance from the single reference pair, NaN when unavailable
    n_pairs: np.ndarray
    flags: list
    pairs: list
    single_pair: tuple[int, int] | None
    presence: list = field(default_factory=list)  # PresenceMap per frame when kept
    estimates: list = field(default_factory=list)  # RangeEstimate lists per frame when kept
    stats: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.decoded.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Frames whose aggregated estimate passed every quality gate."""
        return np.array([fl == "ok" for fl in self.flags], dtype=bool) & ~np.isnan(self.estimate)


def initial_roi(events: np.ndarray, camera: CameraModel, params: ReceiverParams) -> RoiWindow:
    if events.size == 0:
        raise SyncFailed("empty event stream")
    t0 = events["t"][0]
    head = events[: np.searchsorted(events["t"], t0 + params.init_span * 1e6)]
    _, mask = frequency_filter(head, params.init_window, params.min_rate, (camera.height, camera.width))
    if not mask.any():
        raise SyncFailed("no pixel blinks fast enough to be a transmitter")
    return RoiWindow.from_mask(mask, params.roi_margin)


def _fit_roi(roi: RoiWindow, camera: CameraModel, p: ReceiverParams, phase: int = 0) -> RoiWindow:
    """Clip to the sensor and snap to the cell lattice whose columns start at ``phase`` (mod cell_w)."""
    r = roi.clipped(camera.width, camera.height).aligned(p.cell_w, p.cell_h, (phase, 0))
    x0, y0, x1, y1 = r.x0, r.y0, r.x1, r.y1
    while x0 < 0:
        x0 += p.cell_w
    while x1 > camera.width:
        x1 -= p.cell_w
    while y1 > camera.height:
        y1 -= p.cell_h
    return RoiWindow(x0, max(0, y0), x1, y1)


def bar_columns(pixel_samples: np.ndarray, x0: int, level: float = 0.5) -> tuple[int, int] | None:
    """First and last sensor column whose event activity reaches ``level`` of the busiest one."""
    act = np.count_nonzero(pixel_samples, axis=(0, 2))
    if act.max(initial=0) == 0:
        return None
    cols = np.flatnonzero(act >= level * act.max())
    return x0 + int(cols[0]), x0 + int(cols[-1])


def lattice_phase(span: tuple[int, int], direction: int, cell_w: int) -> int:
    """Column phase that keeps the bar's leading column and its next column in one cell.

    A column that the image leaves in the middle of a pilot records a
    spurious falling event there; sharing a cell with the column it moves
    into lets the cell majority cancel it.
    """
    lo, hi = span
    if direction < 0:
        return (lo - cell_w + 1) % cell_w
    return hi % cell_w


def receive(events: np.ndarray, tx: TxConfig, camera: CameraModel, layout: LedBarLayout,
            params: ReceiverParams | None = None, n_frames: int | None = None, keep_presence: bool = False,
            idle_level: int | None = -1) -> ReceiverOutput:
    """Run the whole receiver over a time-ordered event stream."""
    p = params or ReceiverParams()
    if layout.n_clusters != tx.n_clusters:
        raise InvalidArgument("layout and transmitter disagree on the cluster count")
    if tx.pilot_len % 2 or tx.info_len % 2:
        raise InvalidArgument("pilot and info segments must have even length")
    T = 1e6 / tx.blink_rate
    frame_us = tx.frame_len * T
    pilots = tx.pilots()
    info = tx.info_book()
    sigs = pilots.pair_signatures.astype(np.float64)

    roi = _fit_roi(initial_roi(events, camera, p), camera, p)
    roi_ev = events[roi.contains(events["x"], events["y"])]
    sync = barker_sync(roi_ev, barker(tx.preamble_length), tx.blink_rate, min_psr=p.sync_min_psr,
                       min_significance=p.sync_min_significance, idle_level=idle_level, search_span=p.init_span)
    t_all = np.ascontiguousarray(events["t"])
    if n_frames is None:
        n_frames = max(0, int(math.floor((float(t_all[-1]) - sync.t0_us) / frame_us)))

    excluded = default_excluded(tx.n_clusters) if p.exclude_clusters is None else tuple(p.exclude_clusters)
    pairs = ranging_pairs(layout, excluded, p.min_pair_spacing)
    if p.single_pair is not None:
        single_pair = tuple(p.single_pair)
    elif pairs:
        single_pair = max(pairs, key=lambda ij: (layout.cluster_spacing(*ij), -ij[0]))
    else:
        single_pair = None
    pair_i = np.array([i for i, _ in pairs], dtype=int)
    pair_j = np.array([j for _, j in pairs], dtype=int)
    spacing = np.array([layout.cluster_spacing(i, j) for i, j in pairs])
    weight = np.array([spacing_weight(s) for s in spacing])

    decoded = np.full((n_frames, tx.n_clusters), -1, dtype=np.int64)
    estimate = np.full(n_frames, np.nan)
    single = np.full(n_frames, np.nan)
    n_pairs = np.zeros(n_frames, dtype=np.int64)
    flags = ["ok"] * n_frames
    kept, detail = [], []
    stats = dict(tracking_lost=0, degraded=0, no_range=0, roi_area=0)
    prev: PresenceMap | None = None
    phase, direction, centres = 0, 0, []
    pending = None  # (presence map, info pairs) of the frame awaiting the next pilot

    def decode_pending(nxt: PresenceMap | None):
        pm0, info0 = pending
        w = pm0.weights if nxt is None else np.maximum(pm0.weights, regrid(nxt, pm0))
        integ, present = integrate_all(w, info0, p.presence_threshold)
        decoded[pm0.frame] = np.where(present, decode_indices(integ, info), -1)

    for f in range(n_frames):
        fs = sync.t0_us + f * frame_us
        origin = fs - p.guard * T
        # Integer bounds keep the search from casting the whole time column.
        a, b = np.searchsorted(t_all, np.ceil([origin, origin + tx.frame_len * T]).astype(np.int64))
        ev = events[a:b]
        ev = ev[roi.contains(ev["x"], ev["y"])]
        px = slot_samples(ev, origin, T, tx.frame_len, roi)
        stats["roi_area"] += roi.width * roi.height
        cells = cell_majority(px, p.cell_h, p.cell_w)
        pilot = reconstruct_pairs(cells[..., : tx.pilot_len])
        pm = presence_map(pilot, sigs, (roi.x0, roi.y0), GridSpec(p.cell_w, p.cell_h, (phase, 0)), f, fs)
        if keep_presence:
            kept.append(pm)

        # The info segment sits between this pilot and the next one, so it is
        # integrated once the next presence map is known.
        if pending is not None:
            decode_pending(pm)
        pending = (pm, reconstruct_pairs(cells[..., tx.pilot_len :]))

        sel = pm.selected(p.presence_threshold)
        ests = range_frame(px[..., : tx.pilot_len], sel, roi, sigs, layout, camera, p, pairs, spacing, weight)
        if keep_presence:
            detail.append(ests)
        for e in ests:
            if e.pair == single_pair:
                single[f] = e.distance_m
        if ests:
            res = aggregate(ests)
            estimate[f] = res.distance_m
            n_pairs[f] = res.n_used if not res.degraded else len(ests)
            if res.degraded or res.n_used < p.min_pairs:
                flags[f] = "degraded"
                stats["degraded"] += 1
        else:
            flags[f] = "no_range"
            stats["no_range"] += 1

        # ROI for the next frame: selected support plus margin, moved by the tracked shift.
        support = sel.any(axis=0)
        if support.any():
            box = RoiWindow.from_mask(support, 0)
            nxt = RoiWindow(roi.x0 + box.x0 * p.cell_w - p.roi_margin, roi.y0 + box.y0 * p.cell_h - p.roi_margin,
                            roi.x0 + box.x1 * p.cell_w + p.roi_margin, roi.y0 + box.y1 * p.cell_h + p.roi_margin)
            if prev is not None:
                try:
                    dx, dy = track_update(prev, pm, p.presence_threshold, p.track_max_shift)
                    nxt = nxt.shifted(dx * p.cell_w, dy * p.cell_h)
                except TrackingLost:
                    pass
            span = bar_columns(px[..., : tx.pilot_len], roi.x0)
            if span is not None:
                centres.append(0.5 * (span[0] + span[1]))
                if len(centres) > p.drift_frames:
                    drift = centres[-1] - centres[-1 - p.drift_frames]
                    if abs(drift) >= 0.5:
                        direction = 1 if drift > 0 else -1
                phase = lattice_phase(span, direction, p.cell_w)
            roi = _fit_roi(nxt, camera, p, phase)
            prev = pm
        else:
            flags[f] = "tracking_lost"
            stats["tracking_lost"] += 1
    if pending is not None:
        decode_pending(None)

    frame_t = sync.t0_us + np.arange(n_frames) * frame_us
    return ReceiverOutput(
        sync=sync,
        frame_t_us=frame_t,
        decoded=decoded,
        range_t_us=frame_t + tx.pilot_len * T / 2,
        estimate=estimate,
        single=single,
        n_pairs=n_pairs,
        flags=flags,
        pairs=pairs,
        single_pair=single_pair,
        presence=kept,
        estimates=detail,
        stats=stats,
    )


def regrid(src: PresenceMap, target: PresenceMap) -> np.ndarray:
    """``src`` weights resampled onto the cells of ``target``: the maximum over the pixels each target cell covers."""
    K, R, C = target.weights.shape
    sg, tg = src.grid, target.grid
    pix = np.repeat(np.repeat(src.weights, sg.cell_h, axis=1), sg.cell_w, axis=2)
    canvas = np.zeros((K, R * tg.cell_h, C * tg.cell_w))
    ox, oy = src.origin[0] - target.origin[0], src.origin[1] - target.origin[1]
    _, h, w = pix.shape
    r0, r1 = max(0, oy), min(canvas.shape[1], oy + h)
    c0, c1 = max(0, ox), min(canvas.shape[2], ox + w)
    if r0 < r1 and c0 < c1:
        canvas[:, r0:r1, c0:c1] = pix[:, r0 - oy : r1 - oy, c0 - ox : c1 - ox]
    return canvas.reshape(K, R, tg.cell_h, C, tg.cell_w).max(axis=(2, 4))


def range_frame(pilot_px: np.ndarray, sel: np.ndarray, roi: RoiWindow, sigs: np.ndarray, layout: LedBarLayout,
                camera: CameraModel, p: ReceiverParams, pairs, spacing, weight) -> list[RangeEstimate]:
    """Pairwise distance estimates for one frame.

    ``pilot_px`` holds the (H, W, pilot_len) pixel samples of the ROI and
    ``sel`` the (K, rows, cols) selected cells.
    """
    if not pairs:
        return []
    used = sorted({k for pr in pairs for k in pr if sel[k].any()})
    if not used:
        return []
    pix = reconstruct_pairs(pilot_px).astype(np.float64)
    score = np.clip((pix @ sigs[used].T) / sigs.shape[1], 0.0, 1.0)  # (H, W, n_used)
    maps = np.zeros((len(used), roi.height, roi.width))
    for n, k in enumerate(used):
        m = np.repeat(np.repeat(dilate(sel[k], p.mask_dilation), p.cell_h, axis=0), p.cell_w, axis=1)
        maps[n] = np.where(m, score[..., n], 0.0)
    slot = {k: n for n, k in enumerate(used) if maps[n].any()}
    good = [n for n, (i, j) in enumerate(pairs) if i in slot and j in slot]
    if not good:
        return []
    shape = p.window or (next_pow2(2 * roi.height), next_pow2(2 * roi.width))
    if shape[0] < roi.height or shape[1] < roi.width:
        raise InvalidArgument(f"ranging window {shape} smaller than the ROI")
    unit = unit_spectra(maps, shape)
    gi = np.array([slot[pairs[n][0]] for n in good])
    gj = np.array([slot[pairs[n][1]] for n in good])
    disp, _ = batch_subpixel(poc_batch(unit, gj, gi, shape))
    lpx = np.hypot(disp[:, 0], disp[:, 1])
    slant = 1.0
    if p.slant_correction:
        mm = maps.sum(axis=0)
        rr, cc = np.indices(mm.shape)
        tot = mm.sum()
        xc = roi.x0 + (mm * cc).sum() / tot
        yc = roi.y0 + (mm * rr).sum() / tot
        fpx = camera.focal_px
        slant = math.sqrt(1 + ((xc - camera.cx) / fpx) ** 2 + ((yc - camera.cy) / fpx) ** 2)
    out = []
    for n, l in zip(good, lpx):
        if l > 0:
            L = triangulate(float(l), spacing[n], camera.focal_length, camera.pixel_pitch) * slant
            out.append(RangeEstimate(pairs[n], float(l), float(spacing[n]), L, float(weight[n])))
    return out
