"""Sampled waveforms, their CSV form, and waveform comparison."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Waveform:
    times: np.ndarray
    columns: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=np.float64)
            if col.shape != self.times.shape:
                raise ValueError(f"column {name!r} has {col.size} samples, times has {self.times.size}")
            self.columns[name] = col

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def names(self) -> list[str]:
        return list(self.columns)


def to_csv(wf: Waveform) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *wf.columns])
    cols = [wf.times, *wf.columns.values()]
    for row in zip(*cols):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_csv(wf: Waveform, path: str | Path) -> None:
    Path(path).write_text(to_csv(wf))


def read_csv(path: str | Path) -> Waveform:
    """Read a waveform CSV (header ``t,<name>,...``)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match header width")
    return Waveform(data[:, 0], {h: data[:, i] for i, h in enumerate(header) if i})


def write_loss_csv(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            w.writerow([epoch, repr(float(loss))])


@dataclass(frozen=True)
class ColumnError:
    name: str
    rms: float
    max: float
    span: float  # normaliser: peak-to-peak of the reference column

    @property
    def rms_pct(self) -> float:
        return 100.0 * self.rms / self.span

    @property
    def max_pct(self) -> float:
        return 100.0 * self.max / self.span


def _span(col: np.ndarray) -> float:
    ptp = float(np.ptp(col))
    if ptp > 0:
        return ptp
    # constant column (e.g. a supply rail): fall back to its magnitude
    mag = float(np.max(np.abs(col)))
    return mag if mag > 0 else 1.0


def compare(a: Waveform, b: Waveform, columns: list[str] | None = None) -> list[ColumnError]:
    """Error of ``b`` against reference ``a`` on ``a``'s time grid.

    ``b`` is linearly interpolated onto the samples of ``a`` that fall inside
    ``b``'s time range.  Raises ``ValueError`` on missing columns or when the
    two time ranges do not overlap.
    """
    shared = [c for c in a.columns if c in b.columns]
    if columns is None:
        columns = shared
    missing = [c for c in columns if c not in a.columns or c not in b.columns]
    if missing:
        raise ValueError("column(s) not present in both files: " + ", ".join(missing))
    if not columns:
        raise ValueError("no shared columns to compare")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty overlap between time ranges")
    lo, hi = b.times[0], b.times[-1]
    mask = (a.times >= lo - 1e-15 * abs(lo)) & (a.times <= hi + 1e-12 * abs(hi))
    if not mask.any():
        raise ValueError("empty overlap between time ranges")
    ta = a.times[mask]
    out = []
    for name in columns:
        ref = a.columns[name][mask]
        other = np.interp(ta, b.times, b.columns[name])
        err = other - ref
        out.append(ColumnError(name, float(np.sqrt(np.mean(err**2))), float(np.max(np.abs(err))), _span(ref)))
    return out


def format_report(errors: list[ColumnError]) -> str:
    width = max(8, *(len(e.name) for e in errors))
    lines = [f"{'column':<{width}}  {'rms':>11}  {'max':>11}  {'rms%':>8}  {'max%':>8}"]
    for e in errors:
        lines.append(
            f"{e.name:<{width}}  {e.rms:11.4e}  {e.max:11.4e}  {e.rms_pct:8.3f}  {e.max_pct:8.3f}"
        )
    return "\n".join(lines)
