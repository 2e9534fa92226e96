"""Walsh-Hadamard and Barker code generation, correlation and decoding.

Chips are bipolar (+1/-1). Received samples may also contain 0 where no
event was observed; those contribute nothing to a correlation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

BARKER_CODES = {
    2: (1, -1),
    3: (1, 1, -1),
    4: (1, 1, -1, 1),
    5: (1, 1, 1, -1, 1),
    7: (1, 1, 1, -1, -1, 1, -1),
    11: (1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1),
    13: (1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1),
}


def _is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Codeword:
    """One bipolar spreading code, identified by (row, inverted)."""

    row: int
    inverted: bool
    chips: tuple[int, ...]

    def __post_init__(self):
        if any(c not in (-1, 1) for c in self.chips):
            raise InvalidArgument("codeword chips must be +1/-1")

    @property
    def id(self) -> tuple[int, bool]:
        return (self.row, self.inverted)

    @property
    def length(self) -> int:
        return len(self.chips)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.chips, dtype=np.int8)

    def pair_signature(self) -> np.ndarray:
        """Chips at the even (1-indexed) positions, i.e. what survives pair reconstruction."""
        return self.as_array()[1::2]

    def negated(self) -> "Codeword":
        return Codeword(self.row, not self.inverted, tuple(-c for c in self.chips))


@dataclass(frozen=True)
class BarkerSequence:
    chips: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.chips)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.chips, dtype=np.int8)


def generate_wh_matrix(order: int) -> np.ndarray:
    """Sylvester Hadamard matrix of the given power-of-two order.

    Rows are the Walsh-Hadamard codewords in natural (Sylvester) order, so
    ``H[r, c] = (-1) ** popcount(r & c)``.
    """
    if not _is_power_of_two(order) or order < 2:
        raise InvalidArgument(f"order must be a power of two >= 2, got {order!r}")
    h = np.array([[1]], dtype=np.int8)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def wh_codeword(order: int, row: int, inverted: bool = False) -> Codeword:
    h = generate_wh_matrix(order)
    if not 0 <= row < order:
        raise InvalidArgument(f"row {row} outside 0..{order - 1}")
    chips = -h[row] if inverted else h[row]
    return Codeword(int(row), bool(inverted), tuple(int(c) for c in chips))


def is_pairwise_inverting(chips: Sequence[int]) -> bool:
    """True when every adjacent chip pair (1,2), (3,4), ... flips sign."""
    c = np.asarray(chips)
    if c.size % 2:
        return False
    return bool(np.all(c[1::2] == -c[0::2]))


def pairwise_inverting_rows(order: int) -> list[int]:
    h = generate_wh_matrix(order)
    return [r for r in range(order) if is_pairwise_inverting(h[r])]


def cross_correlate(received, code) -> float:
    """Inner product of received samples with a code.

    ``code`` may be a :class:`Codeword` or any sequence of chips. Samples of
    0 (missing events) contribute nothing.
    """
    chips = code.as_array() if isinstance(code, Codeword) else np.asarray(code)
    r = np.asarray(received, dtype=float)
    if r.shape != chips.shape:
        raise InvalidArgument(f"length mismatch: {r.shape} vs {chips.shape}")
    return float(r @ chips)


class Codebook:
    """Ordered collection of codewords with matrix views for fast correlation.

    Order matters: the position of a codeword is its symbol index (used for
    the symbol-to-bits mapping and for cluster pilot assignment).
    """

    def __init__(self, codewords: Iterable[Codeword]):
        self.codewords: list[Codeword] = list(codewords)
        if not self.codewords:
            raise InvalidArgument("codebook must not be empty")
        lengths = {c.length for c in self.codewords}
        if len(lengths) != 1:
            raise InvalidArgument("codewords must share one length")
        ids = [c.id for c in self.codewords]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("duplicate codeword ids")
        self.length = lengths.pop()
        self._index = {cid: i for i, cid in enumerate(ids)}
        self.chips = np.stack([c.as_array() for c in self.codewords])
        self.pair_signatures = self.chips[:, 1::2]
        # Rank of each codeword under the (row, inverted) tie-break order.
        order = sorted(range(len(ids)), key=lambda i: (ids[i][0], ids[i][1]))
        self._tiebreak = np.empty(len(ids), dtype=int)
        self._tiebreak[order] = np.arange(len(ids))

    def __len__(self) -> int:
        return len(self.codewords)

    def __getitem__(self, i: int) -> Codeword:
        return self.codewords[i]

    def __iter__(self):
        return iter(self.codewords)

    @property
    def ids(self) -> list[tuple[int, bool]]:
        return [c.id for c in self.codewords]

    @property
    def bits_per_symbol(self) -> int:
        return int(np.floor(np.log2(len(self))))

    def index_of(self, cid) -> int:
        try:
            return self._index[tuple(cid)]
        except (KeyError, TypeError):
            raise InvalidArgument(f"codeword {cid!r} not in codebook") from None

    def lookup(self, cid) -> Codeword:
        return self.codewords[self.index_of(cid)]

    def argmax(self, scores: np.ndarray) -> int:
        """Index of the best score, ties resolved toward the smallest (row, inverted)."""
        scores = np.asarray(scores, dtype=float)
        best = scores.max()
        tied = np.flatnonzero(scores == best)
        return int(tied[np.argmin(self._tiebreak[tied])])


def inverting_codebook(order: int = 16) -> Codebook:
    """The pairwise-inverting rows followed by their inversions (``order`` codewords)."""
    rows = pairwise_inverting_rows(order)
    words = [wh_codeword(order, r) for r in rows]
    return Codebook(words + [w.negated() for w in words])


def extended_codebook(order: int = 16) -> Codebook:
    """Every WH row and its inversion (``2 * order`` codewords)."""
    words = [wh_codeword(order, r) for r in range(order)]
    return Codebook(words + [w.negated() for w in words])


def wh_transform_decode(received, codebook) -> tuple[tuple[int, bool], float, float]:
    """Pick the codeword with the largest correlation against ``received``.

    Returns ``(id, score, margin)`` where margin is the gap to the runner-up
    (equal to the score when the codebook holds one entry).
    """
    if not isinstance(codebook, Codebook):
        codebook = Codebook(codebook)
    r = np.asarray(received, dtype=float)
    if r.shape != (codebook.length,):
        raise InvalidArgument(f"received length {r.shape} != codeword length {codebook.length}")
    scores = codebook.chips @ r
    best = codebook.argmax(scores)
    if len(scores) > 1:
        runner_up = np.max(np.delete(scores, best))
    else:
        runner_up = 0.0
    return codebook[best].id, float(scores[best]), float(scores[best] - runner_up)


def barker(length: int) -> BarkerSequence:
    try:
        return BarkerSequence(BARKER_CODES[length])
    except (KeyError, TypeError):
        raise InvalidArgument(
            f"no Barker code of length {length!r}; choose from {sorted(BARKER_CODES)}"
        ) from None


def aperiodic_autocorrelation(chips) -> np.ndarray:
    c = np.asarray(chips, dtype=int)
    return np.correlate(c, c, mode="full")
