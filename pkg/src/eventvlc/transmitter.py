"""Per-cluster chip stream construction.

A session is a Barker preamble shared by every cluster, followed by frames
of ``pilot_len`` pilot chips and ``info_len`` spread information chips.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codes import Codebook, barker, extended_codebook, inverting_codebook
from .errors import InvalidArgument


@dataclass
class TxConfig:
    blink_rate: float = 10_000.0  # chips per second
    pilot_len: int = 16
    info_len: int = 16
    n_clusters: int = 16
    leds_per_cluster: int = 6
    preamble_length: int = 13
    # "inverting": pairwise-inverting rows and their negations (4 bits/symbol at length 16).
    # "extended": every row and its negation (5 bits/symbol), not decodable at pair level.
    info_codebook: str = "inverting"

    def __post_init__(self):
        if self.blink_rate <= 0:
            raise InvalidArgument("blink_rate must be positive")
        if self.pilot_len != self.info_len:
            raise InvalidArgument("pilot and info segments must share the codeword length")
        if self.n_clusters > len(self.pilot_codebook()):
            raise InvalidArgument(
                f"{self.n_clusters} clusters exceed the {len(self.pilot_codebook())}-entry pilot codebook"
            )
        barker(self.preamble_length)

    @property
    def chip_period(self) -> float:
        return 1.0 / self.blink_rate

    @property
    def frame_len(self) -> int:
        return self.pilot_len + self.info_len

    @property
    def frame_period(self) -> float:
        return self.frame_len / self.blink_rate

    @property
    def n_leds(self) -> int:
        return self.n_clusters * self.leds_per_cluster

    def pilot_codebook(self) -> Codebook:
        return inverting_codebook(self.pilot_len)

    def info_book(self) -> Codebook:
        if self.info_codebook == "inverting":
            return inverting_codebook(self.info_len)
        if self.info_codebook == "extended":
            return extended_codebook(self.info_len)
        raise InvalidArgument(f"unknown info codebook {self.info_codebook!r}")

    def pilots(self) -> Codebook:
        """Pilot codeword per cluster; cluster k uses entry k of the pilot codebook."""
        book = self.pilot_codebook()
        return Codebook(book[k] for k in range(self.n_clusters))


def spread_info(symbol, codebook: Codebook) -> np.ndarray:
    """Chips carrying one information symbol (a codeword id or a codebook index)."""
    if isinstance(symbol, (int, np.integer)):
        if not 0 <= symbol < len(codebook):
            raise InvalidArgument(f"symbol index {symbol} outside codebook of {len(codebook)}")
        return codebook[int(symbol)].as_array()
    return codebook.lookup(symbol).as_array()


@dataclass
class Session:
    """Synchronous chip streams for all clusters.

    ``chips[k, i]`` is the level of cluster ``k`` during
    ``[start_time + i / blink_rate, start_time + (i + 1) / blink_rate)``.
    """

    config: TxConfig
    chips: np.ndarray
    symbols: np.ndarray  # (n_clusters, n_frames) indices into the info codebook
    start_time: float = 0.0
    idle_level: int = field(default=-1)

    @property
    def n_frames(self) -> int:
        return self.symbols.shape[1]

    @property
    def n_chips(self) -> int:
        return self.chips.shape[1]

    @property
    def preamble_duration(self) -> float:
        return self.config.preamble_length * self.config.chip_period

    @property
    def end_time(self) -> float:
        return self.start_time + self.n_chips * self.config.chip_period

    def chip_times(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_chips) * self.config.chip_period

    def frame_start(self, frame: int) -> float:
        """Time at which the first pilot chip of ``frame`` begins."""
        return self.start_time + self.preamble_duration + frame * self.config.frame_period

    def write_chip_trace(self, path) -> None:
        """CSV ``time_us,cluster_id,chip``, one row per cluster per chip."""
        times = np.rint(self.chip_times() * 1e6).astype(np.int64)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_us", "cluster_id", "chip"])
            for i, t in enumerate(times):
                for k in range(self.chips.shape[0]):
                    w.writerow([int(t), k, int(self.chips[k, i])])


def build_session(config: TxConfig, payload_symbols: Sequence[Sequence], start_time: float = 0.0) -> Session:
    """Lay out preamble + frames for every cluster.

    ``payload_symbols[k]`` lists cluster ``k``'s information symbols, one per
    frame, as codeword ids or info-codebook indices.
    """
    if len(payload_symbols) != config.n_clusters:
        raise InvalidArgument(f"expected {config.n_clusters} payload lists, got {len(payload_symbols)}")
    counts = {len(s) for s in payload_symbols}
    if len(counts) != 1:
        raise InvalidArgument(f"clusters carry different frame counts: {sorted(counts)}")
    n_frames = counts.pop()

    info = config.info_book()
    pilots = config.pilots()
    preamble = barker(config.preamble_length).as_array()

    symbols = np.zeros((config.n_clusters, n_frames), dtype=np.int64)
    for k, seq in enumerate(payload_symbols):
        for f, s in enumerate(seq):
            symbols[k, f] = s if isinstance(s, (int, np.integer)) else info.index_of(s)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= len(info)):
        raise InvalidArgument("payload symbol outside the info codebook")

    # (clusters, frames, frame_len): pilot repeated per frame, info looked up per symbol.
    frames = np.empty((config.n_clusters, n_frames, config.frame_len), dtype=np.int8)
    frames[:, :, : config.pilot_len] = pilots.chips[:, None, :]
    frames[:, :, config.pilot_len :] = info.chips[symbols]
    body = frames.reshape(config.n_clusters, -1)
    chips = np.concatenate([np.tile(preamble, (config.n_clusters, 1)), body], axis=1)
    return Session(config=config, chips=chips, symbols=symbols, start_time=start_time)


def random_payload(config: TxConfig, n_frames: int, rng: np.random.Generator) -> list[list[int]]:
    n = len(config.info_book())
    return rng.integers(0, n, size=(config.n_clusters, n_frames)).tolist()


def nominal_data_rate(config: TxConfig, bits_per_symbol: int) -> tuple[float, float]:
    """Aggregate bit rate and the same rate divided over every LED."""
    if bits_per_symbol < 1:
        raise InvalidArgument("bits_per_symbol must be >= 1")
    rate = config.n_clusters * bits_per_symbol / config.frame_period
    return rate, per_led_rate(rate, config.n_clusters * config.leds_per_cluster)


def per_led_rate(total_bps: float, n_leds: int) -> float:
    if n_leds < 1:
        raise InvalidArgument("n_leds must be >= 1")
    return total_bps / n_leds


def presence_update_rate(config: TxConfig) -> float:
    """Presence maps refresh once per frame."""
    return 1.0 / config.frame_period
