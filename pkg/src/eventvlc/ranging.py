"""Inter-cluster displacement by phase-only correlation and distance by triangulation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ClusterAbsent, InvalidArgument


class ClusterUnrangeable(ClusterAbsent):
    """No grid cell of the cluster passed the presence threshold in this frame."""


@dataclass
class PixelProbMap:
    """Pixel-level presence of one cluster inside a power-of-two window.

    ``values[r, c]`` is pixel ``(origin[0] + c, origin[1] + r)``.
    """

    values: np.ndarray
    origin: tuple[int, int]
    cluster: int = -1

    def __post_init__(self):
        h, w = self.values.shape
        if h & (h - 1) or w & (w - 1):
            raise InvalidArgument(f"window {self.values.shape} is not a power of two per axis")

    def centroid(self) -> tuple[float, float]:
        """(x, y) in sensor pixels."""
        v = self.values
        total = v.sum()
        if total <= 0:
            raise InvalidArgument("empty probability map")
        r, c = np.indices(v.shape)
        return (float((v * c).sum() / total) + self.origin[0], float((v * r).sum() / total) + self.origin[1])


@dataclass
class CorrelationSurface:
    values: np.ndarray
    peak: tuple[int, int]  # (row, col) index of the global maximum
    peak_value: float

    def signed_peak(self) -> tuple[int, int]:
        return tuple(_signed(i, n) for i, n in zip(self.peak, self.values.shape))


@dataclass(frozen=True)
class RangeEstimate:
    pair: tuple[int, int]
    displacement_px: float
    spacing_m: float
    distance_m: float
    weight: float


@dataclass(frozen=True)
class AggregateResult:
    distance_m: float
    n_used: int
    degraded: bool


def next_pow2(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(1, n)))))


def _signed(i: int, n: int) -> int:
    return i - n if i >= n // 2 else i


def pixel_prob_map(selected_cells: np.ndarray, pixel_scores: np.ndarray, grid_cell: tuple[int, int],
                   roi_origin: tuple[int, int], window_shape: tuple[int, int], window_origin=None,
                   cluster: int = -1) -> PixelProbMap:
    """Pixel-level presence for one cluster restricted to its selected cells.

    ``selected_cells`` is the (rows, cols) above-threshold mask of the
    cluster's grid map; ``pixel_scores`` the (H, W) per-pixel normalised pilot
    correlation over the same ROI; ``grid_cell`` is (cell_h, cell_w).
    """
    if not np.any(selected_cells):
        raise ClusterUnrangeable(f"cluster {cluster}: no cell above threshold")
    ch, cw = grid_cell
    mask = np.repeat(np.repeat(selected_cells, ch, axis=0), cw, axis=1)
    vals = np.where(mask, np.clip(pixel_scores, 0.0, 1.0), 0.0)
    wo = roi_origin if window_origin is None else window_origin
    out = np.zeros(window_shape, dtype=np.float64)
    ox, oy = roi_origin[0] - wo[0], roi_origin[1] - wo[1]
    h, w = vals.shape
    if ox < 0 or oy < 0 or oy + h > window_shape[0] or ox + w > window_shape[1]:
        raise InvalidArgument("ROI does not fit inside the ranging window")
    out[oy : oy + h, ox : ox + w] = vals
    return PixelProbMap(out, tuple(wo), cluster)


def normalized_cross_spectrum(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    tiny = np.finfo(float).eps * max(1.0, float(mag.max(initial=0.0)))
    return np.where(mag > tiny, cross / np.where(mag > tiny, mag, 1.0), 0.0)


def unit_spectra(maps: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Phase of the zero-padded real spectra of a stack of maps (n, h, w); zero bins stay 0.

    Computed in single precision: the batch path only needs the peak and
    its neighbours, and halving the memory traffic roughly halves its cost.
    """
    spec = sfft.rfft2(np.asarray(maps, dtype=np.float32), s=shape)
    mag = np.abs(spec)
    tiny = np.finfo(np.float32).eps * np.maximum(1.0, mag.max(axis=(-2, -1), keepdims=True))
    nz = mag > tiny
    return np.where(nz, spec / np.where(nz, mag, 1.0), 0.0).astype(np.complex64)


def poc_batch(unit: np.ndarray, a_idx, b_idx, shape: tuple[int, int]) -> np.ndarray:
    """Correlation surfaces for many (a, b) pairs drawn from one stack of unit spectra."""
    conj = np.conj(unit)
    return sfft.irfft2(unit[a_idx] * conj[b_idx], s=shape)


def poc(a, b) -> CorrelationSurface:
    """Phase-only correlation; the peak sits at the displacement of ``a`` relative to ``b``."""
    a = a.values if isinstance(a, PixelProbMap) else np.asarray(a, dtype=float)
    b = b.values if isinstance(b, PixelProbMap) else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"window mismatch {a.shape} vs {b.shape}")
    if not np.any(a) or not np.any(b):
        raise InvalidArgument("phase-only correlation of an all-zero input")
    r = np.fft.ifft2(normalized_cross_spectrum(np.fft.fft2(a), np.fft.fft2(b))).real
    idx = np.unravel_index(int(np.argmax(r)), r.shape)
    return CorrelationSurface(r, (int(idx[0]), int(idx[1])), float(r[idx]))


_DELTAS = np.linspace(-1.0, 1.0, 2001)[1:-1]
_TAPS = np.arange(-2, 3)
_MODEL = np.sinc(_TAPS[None, :] - _DELTAS[:, None])  # (n_delta, 5)
_MODEL_NORM = (_MODEL**2).sum(axis=1)


def fit_sinc_offset(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares offset of ``A * sinc(k - delta)`` through 5 samples at k = -2..2.

    ``samples`` is (..., 5). Returns ``(delta, ok)``; flat sample sets give
    ``delta = 0`` and ``ok = False``.
    """
    y = np.asarray(samples, dtype=float)
    proj = y @ _MODEL.T  # (..., n_delta)
    resid = (y**2).sum(axis=-1, keepdims=True) - proj**2 / _MODEL_NORM
    # Only positive-amplitude fits describe a peak.
    resid = np.where(proj > 0, resid, np.inf)
    k = np.argmin(resid, axis=-1)
    delta = _DELTAS[k].copy()
    # Parabolic refinement between neighbouring grid points.
    inner = (k > 0) & (k < _DELTAS.size - 1)
    kk = np.clip(k, 1, _DELTAS.size - 2)
    r0 = np.take_along_axis(resid, (kk - 1)[..., None], -1)[..., 0]
    r1 = np.take_along_axis(resid, kk[..., None], -1)[..., 0]
    r2 = np.take_along_axis(resid, (kk + 1)[..., None], -1)[..., 0]
    denom = r0 - 2 * r1 + r2
    with np.errstate(invalid="ignore", divide="ignore"):
        step = np.where(inner & np.isfinite(denom) & (denom > 0), 0.5 * (r0 - r2) / denom, 0.0)
    delta = delta + np.clip(step, -0.5, 0.5) * (_DELTAS[1] - _DELTAS[0])
    flat = np.ptp(y, axis=-1) <= 1e-12 * np.maximum(1.0, np.abs(y).max(axis=-1))
    ok = ~flat & np.isfinite(np.take_along_axis(resid, k[..., None], -1)[..., 0])
    return np.where(ok, delta, 0.0), ok


def _axis_samples(values: np.ndarray, peak: tuple[int, int]):
    """5-sample profiles through the peak along rows and columns, with circular wrap."""
    h, w = values.shape[-2:]
    r, c = peak
    rows = values[..., (r + _TAPS) % h, c]
    cols = values[..., r, (c + _TAPS) % w]
    return rows, cols


def subpixel_peak(surface: CorrelationSurface) -> tuple[tuple[float, float], bool]:
    """Signed (dy, dx) displacement refined by a sinc fit on each axis.

    Returns the displacement and whether both fits were well posed; a
    degenerate axis falls back to the integer peak.
    """
    rows, cols = _axis_samples(surface.values, surface.peak)
    d, ok = fit_sinc_offset(np.stack([rows, cols]))
    iy, ix = surface.signed_peak()
    return (iy + float(d[0]), ix + float(d[1])), bool(ok.all())


def batch_subpixel(surfaces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sub-pixel signed displacements for a stack of surfaces (n, h, w) -> (n, 2), ok (n,)."""
    n, h, w = surfaces.shape
    flat = surfaces.reshape(n, -1).argmax(axis=1)
    r, c = np.divmod(flat, w)
    idx = np.arange(n)[:, None]
    rows = surfaces[idx, (r[:, None] + _TAPS) % h, c[:, None]]
    cols = surfaces[idx, r[:, None], (c[:, None] + _TAPS) % w]
    d, ok = fit_sinc_offset(np.stack([rows, cols], axis=1))
    ir = np.where(r >= h // 2, r - h, r)
    ic = np.where(c >= w // 2, c - w, c)
    return np.stack([ir + d[:, 0], ic + d[:, 1]], axis=1), ok.all(axis=1)


def triangulate(l_px: float, spacing: float, focal_length: float, pixel_pitch: float) -> float:
    """Distance from the image separation of two points a known distance apart."""
    if not l_px > 0:
        raise InvalidArgument(f"pixel displacement must be positive, got {l_px!r}")
    return focal_length * spacing / (l_px * pixel_pitch)


def theoretical_error(distance: float, focal_length: float, spacing: float, pixel_pitch: float, delta_px: float) -> float:
    """Range error caused by misreading the separation by ``delta_px`` pixels."""
    if min(distance, focal_length, spacing, pixel_pitch) <= 0 or delta_px < 0:
        raise InvalidArgument("arguments must be positive")
    l_px = focal_length * spacing / (distance * pixel_pitch)
    if delta_px >= l_px:
        raise InvalidArgument(f"deviation {delta_px} px exceeds the separation {l_px:g} px")
    return abs(focal_length * spacing / ((l_px - delta_px) * pixel_pitch) - distance)


def quartiles(values) -> tuple[float, float]:
    """First and third quartile with linear interpolation between order statistics."""
    q1, q3 = np.percentile(np.asarray(values, dtype=float), [25, 75], method="linear")
    return float(q1), float(q3)


def aggregate(estimates: list[RangeEstimate]) -> AggregateResult:
    """Outlier-trimmed weighted mean of pairwise distance estimates.

    Drops the single largest and smallest value, then anything outside the
    1.5 IQR fences of the rest, and averages the survivors weighted by
    their ``weight``. With fewer than three inputs, or no survivor, the
    result is flagged as degraded.
    """
    if not estimates:
        raise InvalidArgument("no estimates to aggregate")
    ranked = sorted(estimates, key=lambda e: (e.distance_m, e.weight))
    if len(ranked) < 3:
        num = math.fsum(e.weight * e.distance_m for e in ranked)
        den = math.fsum(e.weight for e in ranked)
        value = num / den if den > 0 else float(np.median([e.distance_m for e in ranked]))
        return AggregateResult(value, len(ranked), True)
    core = ranked[1:-1]
    q1, q3 = quartiles([e.distance_m for e in core])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    kept = [e for e in core if lo <= e.distance_m <= hi]
    den = math.fsum(e.weight for e in kept)
    if not kept or den <= 0:
        return AggregateResult(float(np.median([e.distance_m for e in ranked])), 0, True)
    return AggregateResult(math.fsum(e.weight * e.distance_m for e in kept) / den, len(kept), False)


def spacing_weight(spacing: float) -> float:
    """Inverse-variance weight: a fixed pixel error gives a range error proportional to 1/spacing."""
    return spacing**2
