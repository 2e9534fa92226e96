"""Presence-weighted integration of information chips, symbol decoding and BER."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .codes import Codebook
from .errors import ClusterAbsent, DecodeFailure, InvalidArgument


@dataclass(frozen=True)
class DecodedFrame:
    cluster: int
    symbol: tuple[int, bool]
    integration: np.ndarray
    margin: float
    frame: int = 0

    def __post_init__(self):
        if self.integration.ndim != 1:
            raise InvalidArgument("integration vector must be 1-D")


def integrate_info(weights: np.ndarray, segments: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Sum of ``w * segment`` over the cells whose weight exceeds ``threshold``.

    ``weights`` has the cell shape (rows, cols), ``segments`` the same plus a
    trailing pair axis.
    """
    w = np.asarray(weights, dtype=float)
    s = np.asarray(segments, dtype=float)
    if s.shape[:-1] != w.shape:
        raise InvalidArgument(f"weights {w.shape} do not match segments {s.shape}")
    sel = w > threshold
    if not sel.any():
        raise ClusterAbsent("no cell exceeds the presence threshold")
    return w[sel] @ s[sel]


def integrate_all(weights: np.ndarray, segments: np.ndarray, threshold: float = 0.5):
    """Vectorised :func:`integrate_info` for every cluster.

    ``weights`` is (K, rows, cols). Returns the (K, P) integrations and a
    boolean (K,) mask of clusters that had at least one selected cell.
    """
    w = np.asarray(weights, dtype=float)
    w = np.where(w > threshold, w, 0.0)
    s = np.asarray(segments, dtype=float).reshape(-1, segments.shape[-1])
    out = w.reshape(w.shape[0], -1) @ s
    return out, (w > 0).reshape(w.shape[0], -1).any(axis=1)


def decode_frame(integration, codebook: Codebook, cluster: int = -1, frame: int = 0) -> DecodedFrame:
    """Best-matching codeword for a pair-level integration vector."""
    I = np.asarray(integration, dtype=float)
    sigs = codebook.pair_signatures
    if I.shape != (sigs.shape[1],):
        raise InvalidArgument(f"integration length {I.shape} != pair length {sigs.shape[1]}")
    if not np.any(I):
        raise DecodeFailure(f"cluster {cluster}: empty integration")
    scores = sigs @ I
    best = codebook.argmax(scores)
    rest = np.delete(scores, best)
    margin = float(scores[best] - rest.max()) if rest.size else float(scores[best])
    return DecodedFrame(cluster, codebook[best].id, I, margin, frame)


def decode_indices(integrations: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Codebook index per row of (n, P) integrations; -1 for all-zero rows."""
    I = np.asarray(integrations, dtype=float)
    scores = I @ codebook.pair_signatures.T.astype(float)
    best = scores.max(axis=1, keepdims=True)
    # Ties go to the smallest (row, inverted) rank.
    rank = np.where(scores == best, codebook._tiebreak[None, :], len(codebook))
    idx = codebook._tiebreak.argsort()[rank.min(axis=1)]
    return np.where(np.any(I != 0, axis=1), idx, -1)


def symbol_bits(index, bits: int) -> np.ndarray:
    """Natural binary of a codebook index, most significant bit first."""
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(bits - 1, -1, -1)
    return ((index[..., None] >> shifts) & 1).astype(np.int8)


def distance_bin(distance, width: float = 10.0) -> np.ndarray:
    return np.floor(np.asarray(distance, dtype=float) / width).astype(np.int64)


@dataclass
class BerReport:
    """Bit errors per distance bin for one speed; ``bins`` maps bin index to (errors, bits)."""

    speed: float
    bin_width: float = 10.0
    bins: dict = field(default_factory=dict)

    def add(self, other: "BerReport") -> "BerReport":
        if other.bin_width != self.bin_width:
            raise InvalidArgument("bin widths differ")
        for b, (e, n) in other.bins.items():
            e0, n0 = self.bins.get(b, (0, 0))
            self.bins[b] = (e0 + e, n0 + n)
        return self

    def rows(self, lo: float | None = None, hi: float | None = None):
        """(bin_mid, errors, bits, ber) sorted by distance, optionally limited to mids in [lo, hi]."""
        out = []
        for b in sorted(self.bins):
            mid = (b + 0.5) * self.bin_width
            if (lo is not None and mid < lo) or (hi is not None and mid > hi):
                continue
            e, n = self.bins[b]
            out.append((mid, e, n, e / n if n else float("nan")))
        return out

    @property
    def errors(self) -> int:
        return sum(e for e, _ in self.bins.values())

    @property
    def bits(self) -> int:
        return sum(n for _, n in self.bins.values())

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    def write_csv(self, path) -> None:
        write_ber_csv(path, [self])


def write_ber_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_mid_m", "speed_mps", "errors", "bits", "ber"])
        for r in reports:
            for mid, e, n, ber in r.rows():
                w.writerow([f"{mid:g}", f"{r.speed:g}", e, n, f"{ber:.6g}"])


def ber(decoded, reference, distances, bits_per_symbol: int, speed: float = 0.0, bin_width: float = 10.0,
        bin_range: tuple[int, int] | None = None) -> BerReport:
    """Bitwise comparison of decoded and transmitted symbol indices, binned by distance.

    Entries of ``decoded`` equal to -1 are erasures and count every bit as
    wrong. ``bin_range`` (first, last bin index) clips distances that spill
    just past the ends of the drive into the outermost bins.
    """
    d = np.asarray(decoded, dtype=np.int64)
    r = np.asarray(reference, dtype=np.int64)
    dist = np.asarray(distances, dtype=float)
    if d.shape != r.shape or d.shape[:1] != dist.shape[:1]:
        raise InvalidArgument(f"length mismatch: decoded {d.shape}, reference {r.shape}, distances {dist.shape}")
    if dist.ndim == 1 and d.ndim == 2:
        dist = np.broadcast_to(dist[:, None], d.shape)
    wrong = (symbol_bits(np.where(d < 0, 0, d), bits_per_symbol) != symbol_bits(r, bits_per_symbol)).sum(axis=-1)
    wrong = np.where(d < 0, bits_per_symbol, wrong)
    b = distance_bin(dist, bin_width)
    if bin_range is not None:
        b = np.clip(b, *bin_range)
    report = BerReport(speed, bin_width)
    for k in np.unique(b):
        m = b == k
        report.bins[int(k)] = (int(wrong[m].sum()), int(m.sum()) * bits_per_symbol)
    return report
