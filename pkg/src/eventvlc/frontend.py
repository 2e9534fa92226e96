"""Receiver front end: frequency filtering, ROI handling and preamble sync."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codes import BarkerSequence
from .errors import InvalidArgument, SyncFailed


@dataclass(frozen=True)
class RoiWindow:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int
    active: bool = True

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise InvalidArgument(f"empty ROI {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @classmethod
    def full(cls, width: int, height: int) -> "RoiWindow":
        return cls(0, 0, width, height)

    @classmethod
    def from_mask(cls, mask: np.ndarray, margin: int = 2) -> "RoiWindow":
        """Bounding box of the True pixels of a (height, width) mask, grown by ``margin``."""
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            raise InvalidArgument("mask selects no pixels")
        h, w = mask.shape
        return cls(
            max(0, int(xs.min()) - margin),
            max(0, int(ys.min()) - margin),
            min(w, int(xs.max()) + margin + 1),
            min(h, int(ys.max()) + margin + 1),
        )

    def clipped(self, width: int, height: int) -> "RoiWindow":
        return RoiWindow(max(0, self.x0), max(0, self.y0), min(width, self.x1), min(height, self.y1), self.active)

    def shifted(self, dx: int, dy: int) -> "RoiWindow":
        return RoiWindow(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy, self.active)

    def aligned(self, cell_w: int, cell_h: int, origin=(0, 0)) -> "RoiWindow":
        """Smallest window on the cell lattice anchored at ``origin`` (x, y) covering this one."""
        ox, oy = origin
        x0 = ox + math.floor((self.x0 - ox) / cell_w) * cell_w
        y0 = oy + math.floor((self.y0 - oy) / cell_h) * cell_h
        x1 = ox + math.ceil((self.x1 - ox) / cell_w) * cell_w
        y1 = oy + math.ceil((self.y1 - oy) / cell_h) * cell_h
        return RoiWindow(x0, y0, x1, y1, self.active)

    def contains(self, x, y):
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)


def apply_roi(events: np.ndarray, roi: RoiWindow) -> np.ndarray:
    if not roi.active:
        return events
    return events[roi.contains(events["x"], events["y"])]


def frequency_filter(events: np.ndarray, window: float = 0.01, min_rate: float = 2000.0, shape=(720, 1280)):
    """Keep only pixels that fire fast enough somewhere in the stream.

    A pixel passes when some sliding ``window`` (s) holds at least
    ``min_rate * window`` of its events. Returns the retained events (in
    their original order) and the (height, width) boolean pass mask.
    """
    if window <= 0 or min_rate <= 0:
        raise InvalidArgument("window and min_rate must be positive")
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    if events.size == 0:
        return events, mask
    need = min_rate * window
    win_us = int(round(window * 1e6))
    pid = events["y"].astype(np.int64) * w + events["x"].astype(np.int64)
    t = events["t"].astype(np.int64)
    t = t - t.min()
    span = int(t.max() + win_us + 1)
    key = np.sort(pid * span + t)
    # Windows starting at an event are enough to find each pixel's densest window.
    count = np.searchsorted(key, key + win_us, side="left") - np.arange(key.size)
    passing = np.unique((key // span)[count >= need])
    mask.flat[passing] = True
    return events[mask.flat[pid]], mask


@dataclass(frozen=True)
class SyncResult:
    t0_us: float  # start of the first pilot chip
    peak_score: float
    psr: float
    preamble_start_us: float
    significance: float = math.nan  # robust z-score of the peak over all searched offsets


def transition_signature(code: BarkerSequence, idle_level: int | None = -1) -> np.ndarray:
    """Expected event polarity at each chip boundary of the preamble (0 where the level holds)."""
    c = code.as_array().astype(int)
    sig = np.zeros(c.size, dtype=int)
    sig[1:] = np.where(c[1:] != c[:-1], c[1:], 0)
    if idle_level is not None and c[0] != idle_level:
        sig[0] = c[0]
    return sig


def barker_sync(
    events: np.ndarray,
    code: BarkerSequence,
    blink_rate: float,
    search_window: tuple[float, float] | None = None,
    step: float = 0.25,
    min_psr: float = 3.0,
    min_significance: float = 8.0,
    idle_level: int | None = -1,
    search_span: float = 0.02,
) -> SyncResult:
    """Locate the preamble by sliding its transition signature over the stream.

    Candidate preamble starts are stepped every ``step`` chips on an absolute
    lattice, across ``search_window`` (µs) or, by default, ``search_span``
    seconds from the first event. At each candidate, the signed event count
    within half a chip of every boundary is correlated with the signature.
    The peak-to-sidelobe ratio compares the best score with the largest
    positive score at lags between one chip and one preamble length; the
    peak must also stand ``min_significance`` robust standard deviations
    (scaled median absolute deviation) above the median score. The winning
    offset is refined by the median timing error of matching
    events.
    """
    if events.size == 0:
        raise SyncFailed("no events to synchronise on")
    T = 1e6 / blink_rate
    L = code.length
    sig = transition_signature(code, idle_level)
    nz = np.flatnonzero(sig)
    if search_window is None:
        first = float(events["t"][0])
        lo, hi = first - L * T, first + search_span * 1e6
    else:
        lo, hi = search_window
    a, b = np.searchsorted(events["t"], [lo - T, hi + (L + 1) * T])
    t = events["t"][a:b].astype(float)
    p = events["p"][a:b].astype(np.int64)
    d = step * T
    offsets = np.arange(math.floor(lo / d), math.ceil(hi / d) + 1) * d
    cum = np.concatenate([[0], np.cumsum(p)])

    def signed_count(centres):
        a = np.searchsorted(t, centres - T / 2, side="left")
        b = np.searchsorted(t, centres + T / 2, side="left")
        return cum[b] - cum[a]

    centres = offsets[:, None] + nz[None, :] * T
    scores = (signed_count(centres) * sig[nz][None, :]).sum(axis=1).astype(float)
    best = int(np.argmax(scores))
    peak = scores[best]
    lag = np.abs(offsets - offsets[best])
    # Sidelobes are the lags the preamble itself spans; payload further away is not part of this peak.
    far = (lag >= T) & (lag <= L * T)
    # Anti-correlated offsets cannot be mistaken for the preamble, so only positive lobes count.
    side = max(0.0, float(np.max(scores[far]))) if far.any() else 0.0
    psr = math.inf if side == 0 else peak / side
    med = float(np.median(scores))
    spread = 1.4826 * float(np.median(np.abs(scores - med)))
    z = math.inf if spread == 0 else (peak - med) / spread
    if peak <= 0 or psr < min_psr or z < min_significance:
        raise SyncFailed(f"preamble not found (peak {peak:g}, peak-to-sidelobe {psr:.2f}, significance {z:.1f})")

    tau = offsets[best]
    residuals = []
    for n in nz:
        c = tau + n * T
        a, b = np.searchsorted(t, [c - T / 2, c + T / 2])
        sel = p[a:b] == sig[n]
        residuals.append(t[a:b][sel] - c)
    residuals = np.concatenate(residuals)
    if residuals.size:
        tau += float(np.median(residuals))
    return SyncResult(t0_us=tau + L * T, peak_score=float(peak), psr=float(psr), preamble_start_us=tau,
                      significance=float(z))
