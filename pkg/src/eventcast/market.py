"""OHLC bar ingestion, event/window alignment, normalization, chronological split."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EventScript, format_timestamp, parse_timestamp
from .errors import AlignmentError, DataError, DatasetError, FormatError

CHANNELS = ("open", "high", "low", "close")
BAR_SECONDS = 300
TAUS = (35, 70, 140)


def _epoch(ts: datetime) -> int:
    return int(ts.astimezone(timezone.utc).timestamp())


def _from_epoch(sec: int) -> datetime:
    return datetime.fromtimestamp(int(sec), tz=timezone.utc)


@dataclass
class BarSeries:
    """Time-ordered 5-minute OHLC bars. ``times`` are UTC epoch seconds."""

    asset_id: str
    times: np.ndarray
    values: np.ndarray  # (n, 4) open, high, low, close

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 4 or len(self.values) != len(self.times):
            raise FormatError(f"{self.asset_id}: bars must be (n, 4) aligned with times")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise FormatError(f"{self.asset_id}: timestamps not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise FormatError(f"{self.asset_id}: non-finite bar values")
        o, h, l, c = self.values.T
        if np.any(h < np.maximum(o, c)) or np.any(l > np.minimum(o, c)):
            raise FormatError(f"{self.asset_id}: OHLC ordering violated")
        if not self.is_yield and np.any(self.values <= 0):
            raise FormatError(f"{self.asset_id}: index prices must be positive")

    @property
    def is_yield(self) -> bool:
        return self.asset_id.upper().startswith("USGG")

    def __len__(self) -> int:
        return len(self.times)


def read_bars(path: str | Path, asset_id: str | None = None) -> BarSeries:
    path = Path(path)
    asset_id = asset_id or path.stem
    times, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["timestamp", *CHANNELS]:
            raise FormatError(f"{path}: header must be timestamp,open,high,low,close")
        for row in reader:
            times.append(_epoch(parse_timestamp(row["timestamp"])))
            values.append([float(row[c]) for c in CHANNELS])
    return BarSeries(asset_id, np.array(times, dtype=np.int64), np.array(values).reshape(-1, 4))


def write_bars(series: BarSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *CHANNELS])
        for t, row in zip(series.times, series.values):
            writer.writerow([format_timestamp(_from_epoch(t)), *(repr(float(v)) for v in row)])


@dataclass
class AlignedSample:
    event_id: str
    asset_id: str
    tau: int
    event_time: int  # epoch seconds
    anchor_index: int
    pre_times: np.ndarray
    post_times: np.ndarray
    pre: np.ndarray  # (tau, 4)
    post: np.ndarray  # (tau, 4)
    mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    std: np.ndarray = field(default_factory=lambda: np.ones(4))
    normalized: bool = False

    @property
    def key(self) -> str:
        return f"{self.event_id}@{self.asset_id}/{self.tau}"

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "asset_id": self.asset_id,
            "tau": self.tau,
            "event_time": format_timestamp(_from_epoch(self.event_time)),
            "anchor_index": self.anchor_index,
            "pre_times": [format_timestamp(_from_epoch(t)) for t in self.pre_times],
            "post_times": [format_timestamp(_from_epoch(t)) for t in self.post_times],
            "pre": self.pre.tolist(),
            "post": self.post.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "normalized": self.normalized,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "AlignedSample":
        ts = lambda xs: np.array([_epoch(parse_timestamp(x)) for x in xs], dtype=np.int64)  # noqa: E731
        return cls(
            event_id=rec["event_id"],
            asset_id=rec["asset_id"],
            tau=int(rec["tau"]),
            event_time=_epoch(parse_timestamp(rec["event_time"])),
            anchor_index=int(rec["anchor_index"]),
            pre_times=ts(rec["pre_times"]),
            post_times=ts(rec["post_times"]),
            pre=np.array(rec["pre"], dtype=np.float64).reshape(-1, 4),
            post=np.array(rec["post"], dtype=np.float64).reshape(-1, 4),
            mean=np.array(rec["mean"], dtype=np.float64),
            std=np.array(rec["std"], dtype=np.float64),
            normalized=bool(rec["normalized"]),
        )


def anchor_index(series: BarSeries, when: datetime | int) -> int:
    """Index of the last bar stamped at or before ``when`` (-1 if none)."""
    t = when if isinstance(when, (int, np.integer)) else _epoch(when)
    return int(np.searchsorted(series.times, t, side="right")) - 1


def align_event(series: BarSeries, event: EventScript, tau: int) -> AlignedSample:
    if tau < 1:
        raise AlignmentError(f"tau must be positive, got {tau}")
    t = _epoch(event.timestamp)
    i = anchor_index(series, t)
    if i < 0:
        raise AlignmentError(f"{event.id}: event precedes first bar of {series.asset_id}", deficit=tau)
    history = i + 1
    future = len(series) - 1 - i
    if history < tau:
        raise AlignmentError(
            f"{event.id}: {series.asset_id} has {history} bars up to the anchor, need {tau} "
            f"(short by {tau - history})",
            deficit=tau - history,
        )
    if future < tau:
        raise AlignmentError(
            f"{event.id}: {series.asset_id} has {future} bars after the anchor, need {tau} "
            f"(short by {tau - future})",
            deficit=tau - future,
        )
    pre = slice(i - tau + 1, i + 1)
    post = slice(i + 1, i + 1 + tau)
    return AlignedSample(
        event_id=event.id,
        asset_id=series.asset_id,
        tau=tau,
        event_time=t,
        anchor_index=i,
        pre_times=series.times[pre].copy(),
        post_times=series.times[post].copy(),
        pre=series.values[pre].copy(),
        post=series.values[post].copy(),
    )


def align_all(series: BarSeries, events: Iterable[EventScript], tau: int):
    """Align every event that fits; returns (samples, [(event_id, reason)])."""
    samples, skipped = [], []
    for ev in events:
        try:
            samples.append(align_event(series, ev, tau))
        except AlignmentError as exc:
            skipped.append((ev.id, str(exc)))
    return samples, skipped


def normalize_sample(sample: AlignedSample) -> AlignedSample:
    """Per-channel z-score of both windows using pre-window statistics."""
    if sample.normalized:
        return sample
    mean = sample.pre.mean(axis=0)
    std = sample.pre.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return replace(
        sample,
        pre=(sample.pre - mean) / std,
        post=(sample.post - mean) / std,
        mean=mean,
        std=std,
        normalized=True,
    )


def denormalize(values: np.ndarray, sample: AlignedSample, channels: Sequence[int] = (0, 1, 2, 3)) -> np.ndarray:
    """Map normalized values shaped (..., len(channels)) back to original units."""
    ch = list(channels)
    return values * sample.std[ch] + sample.mean[ch]


def denormalize_sample(sample: AlignedSample) -> AlignedSample:
    if not sample.normalized:
        return sample
    return replace(
        sample,
        pre=denormalize(sample.pre, sample),
        post=denormalize(sample.post, sample),
        mean=np.zeros(4),
        std=np.ones(4),
        normalized=False,
    )


@dataclass
class DatasetSplit:
    train: list[AlignedSample]
    validation: list[AlignedSample]
    test: list[AlignedSample]


def split_dataset(samples: Sequence[AlignedSample]) -> DatasetSplit:
    """Chronological 6:2:2 split: floor(0.6N) train, floor(0.2N) validation, rest test."""
    n = len(samples)
    if n < 5:
        raise DatasetError(f"need at least 5 samples to split, got {n}")
    ordered = sorted(samples, key=lambda s: (s.event_time, s.event_id, s.asset_id))
    n_train = math.floor(0.6 * n)
    n_val = math.floor(0.2 * n)
    return DatasetSplit(
        train=ordered[:n_train],
        validation=ordered[n_train:n_train + n_val],
        test=ordered[n_train + n_val:],
    )


def write_samples(samples: Iterable[AlignedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def read_samples(path: str | Path) -> list[AlignedSample]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"samples file {path} not found")
    with open(path, encoding="utf-8") as fh:
        return [AlignedSample.from_json(json.loads(line)) for line in fh if line.strip()]
