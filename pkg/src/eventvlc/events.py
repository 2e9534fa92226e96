"""Event arrays and their CSV / packed-binary file formats.

In memory an event stream is a numpy structured array with fields
``t`` (int64 microseconds), ``x``, ``y`` (uint16 pixels) and ``p`` (int8,
+1 or -1), sorted by time with ties broken by (y, x).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

# On disk: little-endian u64 t_us, u16 x, u16 y, i8 polarity, 13 bytes, no padding.
BINARY_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
assert BINARY_DTYPE.itemsize == 13

CSV_HEADER = "t_us,x,y,p"


def make_events(t, x, y, p) -> np.ndarray:
    t = np.asarray(t)
    ev = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    ev["t"] = t
    ev["x"] = x
    ev["y"] = y
    ev["p"] = p
    return ev


def empty_events() -> np.ndarray:
    return np.empty(0, dtype=EVENT_DTYPE)


def sort_events(ev: np.ndarray) -> np.ndarray:
    """Stable order by (t, y, x)."""
    order = np.lexsort((ev["x"], ev["y"], ev["t"]))
    return ev[order]


def is_sorted(ev: np.ndarray) -> bool:
    if ev.size < 2:
        return True
    key = np.stack([ev["t"], ev["y"].astype(np.int64), ev["x"].astype(np.int64)])
    d = np.diff(key, axis=1)
    dt, dy, dx = d
    return bool(np.all((dt > 0) | ((dt == 0) & ((dy > 0) | ((dy == 0) & (dx >= 0))))))


def write_events_csv(path, ev: np.ndarray) -> None:
    """One line per event: ``t_us,x,y,p`` with p in {0, 1} meaning -1 / +1."""
    cols = np.column_stack(
        [ev["t"].astype(np.int64), ev["x"], ev["y"], (ev["p"] > 0).astype(np.int64)]
    )
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        if cols.size:
            np.savetxt(fh, cols, fmt="%d", delimiter=",")


def read_events_csv(path) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline()
        skip = 1 if first.strip() and not first[0].isdigit() else 0
    data = np.loadtxt(path, dtype=np.int64, delimiter=",", skiprows=skip, ndmin=2)
    if data.size == 0:
        return empty_events()
    if np.any((data[:, 3] != 0) & (data[:, 3] != 1)):
        raise ValueError(f"{path}: polarity column must be 0 or 1")
    return make_events(data[:, 0], data[:, 1], data[:, 2], np.where(data[:, 3] > 0, 1, -1))


def write_events_bin(path, ev: np.ndarray) -> None:
    if ev.size and ev["t"].min() < 0:
        raise ValueError("negative timestamps cannot be stored as unsigned")
    out = np.empty(ev.shape[0], dtype=BINARY_DTYPE)
    for name in ("t", "x", "y", "p"):
        out[name] = ev[name]
    out.tofile(path)


def read_events_bin(path) -> np.ndarray:
    raw = np.fromfile(path, dtype=BINARY_DTYPE)
    ev = np.empty(raw.shape[0], dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = raw[name]
    return ev


def write_events(path, ev: np.ndarray) -> None:
    if Path(path).suffix.lower() == ".csv":
        write_events_csv(path, ev)
    else:
        write_events_bin(path, ev)


def read_events(path) -> np.ndarray:
    if Path(path).suffix.lower() == ".csv":
        return read_events_csv(path)
    return read_events_bin(path)


def write_ground_truth(path, t_us, distance_m) -> None:
    with open(path, "w") as fh:
        fh.write("t_us,distance_m\n")
        for t, d in zip(np.asarray(t_us, dtype=np.int64), np.asarray(distance_m, dtype=float)):
            fh.write(f"{int(t)},{d:.6f}\n")


def read_ground_truth(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1]
