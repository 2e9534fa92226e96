"""Grid-level waveform recovery and per-cluster presence maps.

Every chip boundary that changes an LED's level produces an event whose
polarity equals the new level, so the sample taken in a chip slot is the
chip itself where a transition happened and 0 where the level held. With
pairwise-inverting codes the second chip of every pair always transitions;
pair reconstruction keeps those samples and, when one is missing, recovers
it from the negated first chip of the pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, TrackingLost
from .frontend import RoiWindow


@dataclass(frozen=True)
class GridSpec:
    cell_w: int = 2
    cell_h: int = 2
    origin: tuple[int, int] = (0, 0)  # (x, y) pixel anchoring the lattice

    def __post_init__(self):
        if self.cell_w < 1 or self.cell_h < 1 or self.cell_w * self.cell_h < 2:
            raise InvalidArgument("a grid cell must span at least two pixels")


def slot_samples(events: np.ndarray, origin_us: float, chip_us: float, n_slots: int, roi: RoiWindow) -> np.ndarray:
    """Polarity of the last event per pixel and chip slot, 0 where none.

    Slot ``n`` covers ``[origin_us + n * chip_us, origin_us + (n + 1) * chip_us)``.
    ``events`` must be time ordered. Returns an int8 array (roi.height,
    roi.width, n_slots).
    """
    H, W = roi.height, roi.width
    out = np.zeros((H, W, n_slots), dtype=np.int8)
    if events.size == 0:
        return out
    slot = np.floor((events["t"] - origin_us) / chip_us).astype(np.int64)
    x = events["x"].astype(np.int64) - roi.x0
    y = events["y"].astype(np.int64) - roi.y0
    ok = (slot >= 0) & (slot < n_slots) & (x >= 0) & (x < W) & (y >= 0) & (y < H)
    key = ((y * W + x) * n_slots + slot)[ok][::-1]
    p = events["p"][ok][::-1]
    uniq, first = np.unique(key, return_index=True)
    out.reshape(-1)[uniq] = p[first]
    return out


def cell_majority(pixel_samples: np.ndarray, cell_h: int, cell_w: int) -> np.ndarray:
    """Sign of the summed pixel samples of each cell; ties give 0."""
    H, W, n = pixel_samples.shape
    if H % cell_h or W % cell_w:
        raise InvalidArgument("sample array does not tile into whole cells")
    s = pixel_samples.reshape(H // cell_h, cell_h, W // cell_w, cell_w, n).sum(axis=(1, 3), dtype=np.int32)
    return np.sign(s).astype(np.int8)


def grid_waveform(cell_events: np.ndarray, frame_start_us: float, blink_rate: float, n_slots: int = 32,
                  guard: float = 0.5) -> np.ndarray:
    """Sampled chips of one grid cell over one frame.

    Slots are centred on chip boundaries: ``guard`` chips before the nominal
    boundary, so that early jittered events still land in the right slot.
    """
    chip_us = 1e6 / blink_rate
    if cell_events.size == 0:
        return np.zeros(n_slots, dtype=np.int8)
    x0, x1 = int(cell_events["x"].min()), int(cell_events["x"].max()) + 1
    y0, y1 = int(cell_events["y"].min()), int(cell_events["y"].max()) + 1
    roi = RoiWindow(x0, y0, x1, y1)
    px = slot_samples(cell_events, frame_start_us - guard * chip_us, chip_us, n_slots, roi)
    return np.sign(px.sum(axis=(0, 1), dtype=np.int32)).astype(np.int8)


def reconstruct_pairs(b) -> np.ndarray:
    """Pair-level waveform along the last axis.

    Element ``i`` (1-indexed) is ``b[2i]`` when observed, otherwise
    ``-b[2i-1]`` for ``i > 1``, otherwise 0.
    """
    b = np.asarray(b)
    if b.shape[-1] % 2:
        raise InvalidArgument("sample length must be even")
    first = b[..., 0::2]
    second = b[..., 1::2]
    out = second.copy()
    fill = second == 0
    fill[..., 0] = False
    out[fill] = -first[fill]
    return out


@dataclass
class PresenceMap:
    """Per-cluster presence weights over the cells of one ROI.

    ``weights[k, r, c]`` belongs to the cell whose top-left pixel is
    ``(origin[0] + c * cell_w, origin[1] + r * cell_h)``.
    """

    weights: np.ndarray
    origin: tuple[int, int]
    grid: GridSpec
    frame: int = 0
    t_us: float = 0.0

    @property
    def n_clusters(self) -> int:
        return self.weights.shape[0]

    def selected(self, threshold: float) -> np.ndarray:
        return self.weights > threshold

    def cell_origin(self) -> tuple[int, int]:
        """Origin expressed in whole cells of the lattice."""
        ox, oy = self.grid.origin
        return ((self.origin[0] - ox) // self.grid.cell_w, (self.origin[1] - oy) // self.grid.cell_h)


def presence_map(pilot_pairs: np.ndarray, pilot_signatures: np.ndarray, origin=(0, 0), grid: GridSpec = GridSpec(),
                 frame: int = 0, t_us: float = 0.0) -> PresenceMap:
    """Normalised positive pilot correlation of every cell for every cluster.

    ``pilot_pairs`` is (rows, cols, P) pair-reconstructed pilot samples and
    ``pilot_signatures`` (K, P) the clusters' pair-level pilots.
    """
    sigs = np.asarray(pilot_signatures, dtype=np.float64)
    scores = np.asarray(pilot_pairs, dtype=np.float64) @ sigs.T
    w = np.clip(scores / sigs.shape[1], 0.0, 1.0)
    return PresenceMap(np.moveaxis(w, -1, 0), tuple(origin), grid, frame, t_us)


def track_update(previous: PresenceMap, new: PresenceMap, threshold: float = 0.5, max_shift: int = 4) -> tuple[int, int]:
    """Cell shift (dx, dy) that best overlays the previous map's support on the new one.

    Support is the set of cells where any cluster exceeds ``threshold``.
    Ties prefer the smallest shift.
    """
    def cells(pm):
        r, c = np.nonzero(pm.selected(threshold).any(axis=0))
        cx, cy = pm.cell_origin()
        return c + cx, r + cy

    ax, ay = cells(previous)
    bx, by = cells(new)
    if ax.size == 0 or bx.size == 0:
        raise TrackingLost("no cell above threshold")
    m = max_shift
    x_lo, y_lo = min(ax.min(), bx.min()) - m, min(ay.min(), by.min()) - m
    canvas = np.zeros((max(ay.max(), by.max()) + m - y_lo + 1, max(ax.max(), bx.max()) + m - x_lo + 1), bool)
    canvas[by - y_lo, bx - x_lo] = True
    d = np.arange(-m, m + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    overlap = canvas[ay[None, :] - y_lo + dy[:, None], ax[None, :] - x_lo + dx[:, None]].sum(axis=1)
    order = np.lexsort((dx, dy, np.abs(dx) + np.abs(dy), -overlap))
    best = order[0]
    if overlap[best] == 0:
        raise TrackingLost("presence support does not overlap between frames")
    return int(dx[best]), int(dy[best])


def write_pgm(path, weights: np.ndarray) -> None:
    """Plain-text PGM (P2) with weights in [0, 1] scaled to 0..255."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise InvalidArgument("PGM output needs a 2-D array")
    g = np.rint(np.clip(w, 0, 1) * 255).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{g.shape[1]} {g.shape[0]}\n255\n")
        for row in g:
            fh.write(" ".join(str(v) for v in row) + "\n")
