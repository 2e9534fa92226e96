"""End-to-end trials and parameter sweeps producing BER, RMSE and scan-rate reports."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import CameraModel, EventNoiseParams, LedBarLayout, Trajectory, simulate_events
from .errors import InvalidArgument, SyncFailed
from .events import write_events, write_ground_truth
from .pipeline import ReceiverOutput, ReceiverParams, receive
from .ranging import theoretical_error
from .transmitter import TxConfig, build_session, nominal_data_rate, per_led_rate, presence_update_rate, random_payload
from .vlc import BerReport, ber, distance_bin, write_ber_csv

log = logging.getLogger(__name__)

MODES = ("aggregate", "single")
# Total data rate used for the per-LED rate accounting.
REFERENCE_TOTAL_BPS = 27_000.0

EXIT_OK, EXIT_SYNC_FAILED, EXIT_TRACKING_LOST = 0, 2, 3


@dataclass
class ExperimentConfig:
    tx: TxConfig = field(default_factory=TxConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    layout: LedBarLayout = field(default_factory=LedBarLayout)
    trajectory: Trajectory = field(default_factory=Trajectory)
    noise: EventNoiseParams = field(default_factory=EventNoiseParams.default)
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str | None = None
    lead_in: float = 0.001  # s of idle bar before the preamble
    bin_width: float = 10.0  # m
    workers: int = 1
    write_events: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise InvalidArgument("at least one seed is required")
        if self.lead_in < 0 or self.bin_width <= 0 or self.workers < 1:
            raise InvalidArgument("lead_in must be >= 0, bin_width > 0 and workers >= 1")
        if self.layout.n_clusters != self.tx.n_clusters or self.layout.leds_per_cluster != self.tx.leds_per_cluster:
            raise InvalidArgument("LED layout does not match the transmitter cluster configuration")
        if not math.isfinite(self.trajectory.span):
            raise InvalidArgument("trajectory needs a finite span (set a speed or a duration)")

    @property
    def n_frames(self) -> int:
        usable = self.trajectory.span - self.lead_in - self.tx.preamble_length * self.tx.chip_period
        return max(0, int(math.floor(usable / self.tx.frame_period + 1e-9)))

    @property
    def bin_range(self) -> tuple[int, int]:
        """First and last 10 m bin index covered by the drive."""
        lo = min(self.trajectory.start_distance, self.trajectory.end_distance)
        hi = max(self.trajectory.start_distance, self.trajectory.end_distance)
        return int(math.floor(lo / self.bin_width)), max(int(math.ceil(hi / self.bin_width)) - 1, int(lo // self.bin_width))

    def bin_mids(self) -> list[float]:
        b0, b1 = self.bin_range
        return [(b + 0.5) * self.bin_width for b in range(b0, b1 + 1)]


@dataclass
class RangeReport:
    """Per-frame range estimates against ground truth, binned by true distance."""

    speed: float
    t_us: np.ndarray
    estimate: np.ndarray
    truth: np.ndarray
    n_pairs: np.ndarray
    flags: list
    single: np.ndarray
    elapsed_s: float
    camera: CameraModel
    theory_spacing: float  # m, baseline used for the theoretical error curves
    bin_width: float = 10.0
    bin_range: tuple[int, int] | None = None

    @classmethod
    def from_output(cls, out: ReceiverOutput, truth_t_us, truth_m, speed: float, camera: CameraModel,
                    theory_spacing: float, frame_period: float, bin_width: float = 10.0, bin_range=None) -> "RangeReport":
        truth = np.interp(out.range_t_us, np.asarray(truth_t_us, dtype=float), np.asarray(truth_m, dtype=float))
        return cls(speed, np.rint(out.range_t_us).astype(np.int64), out.estimate.copy(), truth, out.n_pairs.copy(),
                   list(out.flags), out.single.copy(), out.n_frames * frame_period, camera, theory_spacing,
                   bin_width, bin_range)

    @property
    def valid(self) -> np.ndarray:
        return np.array([f == "ok" for f in self.flags], dtype=bool) & np.isfinite(self.estimate)

    @property
    def scan_rate(self) -> float:
        """Frames with a valid estimate per second of stream."""
        return float(self.valid.sum() / self.elapsed_s) if self.elapsed_s > 0 else float("nan")

    def errors(self, mode: str = "aggregate") -> np.ndarray:
        """Signed estimation error per frame, NaN where the mode produced no usable value."""
        if mode == "aggregate":
            return np.where(self.valid, self.estimate - self.truth, np.nan)
        if mode == "single":
            return self.single - self.truth
        raise InvalidArgument(f"unknown mode {mode!r}; expected one of {MODES}")

    def bins(self) -> np.ndarray:
        b = distance_bin(self.truth, self.bin_width)
        return b if self.bin_range is None else np.clip(b, *self.bin_range)

    def theory(self, distance: float, delta_px: float) -> float:
        c = self.camera
        try:
            return theoretical_error(distance, c.focal_length, self.theory_spacing, c.pixel_pitch, delta_px)
        except InvalidArgument:
            return float("nan")

    def rows(self, mode: str = "aggregate", lo: float | None = None, hi: float | None = None):
        """Per-bin dicts: mid, rmse, theory curves, fraction of |error| >= 0.5 m and frame counts."""
        err = self.errors(mode)
        b = self.bins()
        keys = range(self.bin_range[0], self.bin_range[1] + 1) if self.bin_range else sorted(set(b.tolist()))
        out = []
        for k in keys:
            mid = (k + 0.5) * self.bin_width
            if (lo is not None and mid < lo) or (hi is not None and mid > hi):
                continue
            e = err[b == k]
            e = e[np.isfinite(e)]
            out.append(dict(
                bin_mid_m=mid,
                rmse_m=float(np.sqrt(np.mean(e**2))) if e.size else float("nan"),
                theory_1px_m=self.theory(mid, 1.0),
                theory_0p5px_m=self.theory(mid, 0.5),
                frac_ge_0p5m=float(np.mean(np.abs(e) >= 0.5)) if e.size else float("nan"),
                frames=int((b == k).sum()),
                used=int(e.size),
            ))
        return out

    def write_frames_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us", "estimate_m", "truth_m", "n_pairs", "flag"])
            for t, e, g, n, f in zip(self.t_us, self.estimate, self.truth, self.n_pairs, self.flags):
                w.writerow([int(t), _fmt(e), _fmt(g), int(n), f])

    def write_rmse_csv(self, path, mode: str = "aggregate") -> None:
        write_rmse_csv(path, [self], mode)


def write_rmse_csv(path, reports, mode: str = "aggregate") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_mid_m", "speed_mps", "rmse_m", "theory_1px_m", "theory_0p5px_m"])
        for r in reports:
            for row in r.rows(mode):
                w.writerow([f"{row['bin_mid_m']:g}", f"{r.speed:g}", _fmt(row["rmse_m"]),
                            _fmt(row["theory_1px_m"]), _fmt(row["theory_0p5px_m"])])


def _fmt(v) -> str:
    return "NA" if v is None or not np.isfinite(v) else f"{float(v):.6f}"


@dataclass
class TrialResult:
    seed: int
    speed: float
    status: str  # "ok", "sync_failed" or "tracking_lost"
    exit_code: int
    ber: BerReport | None = None
    ranges: RangeReport | None = None
    stats: dict = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


def trial_dir(config: ExperimentConfig, seed: int) -> Path | None:
    if config.output_dir is None:
        return None
    return Path(config.output_dir) / f"speed{config.trajectory.speed:g}_seed{seed}"


def write_symbols(path, symbols: np.ndarray) -> None:
    """CSV of transmitted info-codebook indices, one row per frame and one column per cluster."""
    sym = np.asarray(symbols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"c{k}" for k in range(sym.shape[0])])
        for f in range(sym.shape[1]):
            w.writerow([f] + [int(v) for v in sym[:, f]])


def read_symbols(path) -> np.ndarray:
    """(clusters, frames) array written by :func:`write_symbols`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return data[:, 1:].T.copy()


def _write_stats(path, stats: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k in sorted(stats):
            w.writerow([k, stats[k]])


def simulate(config: ExperimentConfig, seed: int):
    """Session and simulated event stream for one seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    session = build_session(config.tx, random_payload(config.tx, config.n_frames, rng), start_time=config.lead_in)
    noise = replace(config.noise, rng_seed=seed)
    return session, simulate_events(session, config.layout, config.trajectory, config.camera, noise)


def evaluate(out: ReceiverOutput, config: ExperimentConfig, symbols: np.ndarray, truth_t_us, truth_m):
    """BER and range reports for a receiver output against the transmitted symbols and ground truth."""
    tx = config.tx
    n = min(out.n_frames, symbols.shape[1])
    ranges = RangeReport.from_output(out, truth_t_us, truth_m, config.trajectory.speed, config.camera,
                                     _theory_spacing(out, config.layout), tx.frame_period, config.bin_width,
                                     config.bin_range)
    report = ber(out.decoded[:n], symbols[:, :n].T, ranges.truth[:n], tx.info_book().bits_per_symbol,
                 config.trajectory.speed, config.bin_width, config.bin_range)
    return report, ranges


def _theory_spacing(out: ReceiverOutput, layout: LedBarLayout) -> float:
    if out.single_pair is not None:
        return layout.cluster_spacing(*out.single_pair)
    return layout.cluster_spacing(0, layout.n_clusters - 1)


def write_reports(directory: Path, report: BerReport, ranges: RangeReport, stats: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    report.write_csv(directory / "ber.csv")
    ranges.write_frames_csv(directory / "range.csv")
    ranges.write_rmse_csv(directory / "rmse.csv", "aggregate")
    ranges.write_rmse_csv(directory / "rmse_single.csv", "single")
    _write_stats(directory / "stats.csv", stats)


def run_trial(config: ExperimentConfig, seed: int) -> TrialResult:
    """Simulate, receive and score one seeded drive; writes CSV artifacts when ``output_dir`` is set."""
    d = trial_dir(config, seed)
    speed = config.trajectory.speed
    session, sim = simulate(config, seed)
    stats = {f"events_{k}": v for k, v in sim.stats.items()}
    if d is not None:
        d.mkdir(parents=True, exist_ok=True)
        write_ground_truth(d / "truth.csv", sim.truth_t_us, sim.truth_distance)
        write_symbols(d / "symbols.csv", session.symbols)
        if config.write_events:
            write_events(d / "events.bin", sim.events)
    try:
        out = receive(sim.events, config.tx, config.camera, config.layout, config.receiver, n_frames=config.n_frames)
    except SyncFailed as exc:
        log.warning("seed %d: %s", seed, exc)
        if d is not None:
            _write_stats(d / "stats.csv", stats)
        return TrialResult(seed, speed, "sync_failed", EXIT_SYNC_FAILED, stats=stats, message=str(exc))
    report, ranges = evaluate(out, config, session.symbols, sim.truth_t_us, sim.truth_distance)
    stats.update({f"rx_{k}": v for k, v in out.stats.items()})
    stats["rx_frames"] = out.n_frames
    stats["rx_valid_frames"] = int(ranges.valid.sum())
    if d is not None:
        write_reports(d, report, ranges, stats)
    if out.stats.get("tracking_lost", 0):
        msg = f"tracking lost in {out.stats['tracking_lost']} of {out.n_frames} frames"
        return TrialResult(seed, speed, "tracking_lost", EXIT_TRACKING_LOST, report, ranges, stats, msg)
    return TrialResult(seed, speed, "ok", EXIT_OK, report, ranges, stats)


def _job(args) -> TrialResult:
    config, seed = args
    try:
        return run_trial(config, seed)
    except Exception as exc:  # a failing cell must not stop the sweep
        log.exception("trial speed=%g seed=%d failed", config.trajectory.speed, seed)
        return TrialResult(seed, config.trajectory.speed, "error", 1, message=f"{type(exc).__name__}: {exc}")


@dataclass
class SweepResult:
    trials: list
    rows: list  # one dict per (mode, speed, bin)

    def write_csv(self, path) -> None:
        cols = ["mode", "speed_mps", "bin_mid_m", "rmse_m", "theory_1px_m", "theory_0p5px_m", "frac_ge_0p5m",
                "ber", "frames", "trials", "failed_trials"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["mode"], f"{r['speed_mps']:g}", f"{r['bin_mid_m']:g}", _fmt(r["rmse_m"]),
                            _fmt(r["theory_1px_m"]), _fmt(r["theory_0p5px_m"]), _fmt(r["frac_ge_0p5m"]),
                            _fmt(r["ber"]), r["frames"], r["trials"], r["failed_trials"]])


def sweep(configs, modes=MODES, workers: int | None = None) -> SweepResult:
    """Run every config over its seeds and pool the results per (mode, speed, bin).

    Cells whose trials all failed still appear, with NA values.
    """
    configs = list(configs)
    if not configs:
        raise InvalidArgument("empty sweep grid")
    for m in modes:
        if m not in MODES:
            raise InvalidArgument(f"unknown mode {m!r}")
    jobs = [(c, s) for c in configs for s in c.seeds]
    n = workers or max(c.workers for c in configs)
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            trials = list(pool.map(_job, jobs))
    else:
        trials = [_job(j) for j in jobs]

    rows = []
    k = 0
    for c in configs:
        group = trials[k : k + len(c.seeds)]
        k += len(c.seeds)
        done = [t for t in group if t.ranges is not None]
        b0, b1 = c.bin_range
        pooled = BerReport(c.trajectory.speed, c.bin_width)
        for t in done:
            pooled.add(t.ber)
        for mode in modes:
            per_bin = {}
            for t in done:
                err = t.ranges.errors(mode)
                b = t.ranges.bins()
                for j in range(b0, b1 + 1):
                    per_bin.setdefault(j, []).append(err[b == j])
            for j in range(b0, b1 + 1):
                mid = (j + 0.5) * c.bin_width
                e = np.concatenate(per_bin[j]) if per_bin.get(j) else np.empty(0)
                frames = int(e.size)
                e = e[np.isfinite(e)]
                e_b, n_b = pooled.bins.get(j, (0, 0))
                ref = done[0].ranges if done else None
                rows.append(dict(
                    mode=mode, speed_mps=c.trajectory.speed, bin_mid_m=mid,
                    rmse_m=float(np.sqrt(np.mean(e**2))) if e.size else float("nan"),
                    theory_1px_m=ref.theory(mid, 1.0) if ref else float("nan"),
                    theory_0p5px_m=ref.theory(mid, 0.5) if ref else float("nan"),
                    frac_ge_0p5m=float(np.mean(np.abs(e) >= 0.5)) if e.size else float("nan"),
                    ber=e_b / n_b if n_b else float("nan"),
                    frames=frames, trials=len(group), failed_trials=len(group) - len(done),
                ))
    return SweepResult(trials, rows)


def rate_summary(tx: TxConfig, realized_scan_rate: float | None = None) -> list[str]:
    """Human-readable presence-update and data-rate accounting."""
    bits = tx.info_book().bits_per_symbol
    total, per_led = nominal_data_rate(tx, bits)
    lines = [
        f"frame period: {tx.frame_period * 1e3:g} ms",
        f"nominal presence-update rate: {presence_update_rate(tx):g} Hz",
    ]
    if realized_scan_rate is not None:
        lines.append(f"realized scan rate: {realized_scan_rate:.2f} Hz")
    lines += [
        f"configured data rate: {total:g} bps ({bits} bits/symbol x {tx.n_clusters} clusters), "
        f"{per_led:.2f} bps per LED over {tx.n_leds} LEDs",
        f"per-LED rate at {REFERENCE_TOTAL_BPS:g} bps over {tx.n_leds} LEDs: "
        f"{per_led_rate(REFERENCE_TOTAL_BPS, tx.n_leds):.2f} bps",
    ]
    return lines
