"""Planted-sentiment synthetic corpora and bar series.

Each event text carries one word from the first polarity ladder, so the
stub backend rates it exactly at that word's position. The bars after the
event follow a ramp whose slope is set by that sentiment, plus a small
type-specific oscillation; between events prices are flat noise. The
forecast target is therefore a deterministic function of the text.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .corpus import EASTERN, EventScript, EventType, event_id
from .counterfactual.backends import LEXICON
from .market import BarSeries, write_bars

BAR_SECONDS = 300
CYCLE_BARS = 7
TYPES = tuple(EventType)
_SUBJECTS = {
    EventType.FOMC: "policy outlook",
    EventType.UnemploymentInsuranceClaims: "initial claims",
    EventType.EmploymentSituation: "payroll employment",
    EventType.GDPAdvance: "real output",
    EventType.CPIReport: "consumer prices",
    EventType.PPIReport: "producer prices",
}


def planted_text(etype: EventType, sentiment: int, rng: np.random.Generator) -> str:
    word = LEXICON[0][sentiment]
    figure = int(rng.integers(1, 4))
    return f"{etype.label} release. The {_SUBJECTS[etype]} measure {word} over {figure} months."


def distinct_sentiments(n: int, rng: np.random.Generator, spread: int = len(TYPES) - 1) -> np.ndarray:
    """Random ratings where any two events fewer than ``spread + 1`` apart differ.

    With types cycling, the nearest-date events of the other types fall in
    that neighbourhood, so every counterfactual has a different sentiment.
    """
    out: list[int] = []
    for _ in range(n):
        recent = set(out[-spread:])
        out.append(int(rng.choice([s for s in range(11) if s not in recent])))
    return np.array(out)


def planted_events(n: int, seed: int = 0, start: datetime = datetime(2015, 1, 5),
                   sentiments: np.ndarray | None = None) -> list[EventScript]:
    """One event per calendar day at 08:30 ET, cycling through the six types."""
    rng = np.random.default_rng(seed)
    if sentiments is None:
        sentiments = distinct_sentiments(n, rng)
    out = []
    for i in range(n):
        etype = TYPES[i % len(TYPES)]
        local = datetime(start.year, start.month, start.day, 8, 30, tzinfo=EASTERN) + timedelta(days=i)
        ts = local.astimezone(timezone.utc)
        s = int(sentiments[i])
        out.append(EventScript(
            id=event_id(etype, ts), type=etype, timestamp=ts, raw_format="txt",
            text=planted_text(etype, s, rng), sentiment=s,
        ))
    return out


def planted_effect(sentiment: int, etype: EventType, length: int, slope: float = 0.005,
                   wiggle: float = 0.1) -> np.ndarray:
    """Additive post-event price path for ``length`` bars."""
    t = np.arange(1, length + 1, dtype=np.float64)
    freq = 2 * np.pi * (TYPES.index(etype) + 1) / 70.0
    return slope * (sentiment - 5) * t + wiggle * np.sin(freq * t)


def planted_bars(events: list[EventScript], tau: int, seed: int = 0, asset_id: str = "SYN",
                 noise: float = 0.05, cycle: float = 0.2, level: float = 100.0,
                 margin_days: int = 1) -> BarSeries:
    """Continuous 5-minute bars with each event's planted path over its post window.

    The background is a 7-bar cycle plus noise. Every window length is a
    multiple of 7, so each pre-window has nearly the same spread and the
    per-sample normalization does not blur the planted slope.
    """
    rng = np.random.default_rng(seed)
    first = min(e.timestamp for e in events) - timedelta(days=margin_days)
    last = max(e.timestamp for e in events) + timedelta(days=margin_days)
    t0 = int(first.timestamp()) // BAR_SECONDS * BAR_SECONDS
    times = np.arange(t0, int(last.timestamp()) + BAR_SECONDS, BAR_SECONDS, dtype=np.int64)
    close = level + cycle * np.sin(2 * np.pi * np.arange(len(times)) / CYCLE_BARS) + noise * rng.standard_normal(len(times))
    for ev in events:
        i = int(np.searchsorted(times, int(ev.timestamp.timestamp()), side="right")) - 1
        seg = slice(i + 1, min(len(times), i + 1 + tau))
        close[seg] += planted_effect(ev.sentiment, ev.type, seg.stop - seg.start)
    opens = np.concatenate([[close[0]], close[:-1]])
    spread = np.abs(noise * rng.standard_normal(len(times)))
    high = np.maximum(opens, close) + spread
    low = np.minimum(opens, close) - spread
    return BarSeries(asset_id, times, np.stack([opens, high, low, close], axis=1))


def write_archive(events: list[EventScript], directory: str | Path) -> list[Path]:
    """Lay events out as ``<type>/<YYYY-MM-DD>.<ext>``, alternating html and txt."""
    directory = Path(directory)
    paths = []
    for i, ev in enumerate(events):
        folder = directory / ev.type.value
        folder.mkdir(parents=True, exist_ok=True)
        stem = ev.timestamp.astimezone(EASTERN).strftime("%Y-%m-%d")
        if i % 2:
            path = folder / f"{stem}.txt"
            path.write_text(ev.text + "\n", encoding="utf-8")
        else:
            path = folder / f"{stem}.html"
            path.write_text(f"<html><body><p>{ev.text}</p></body></html>\n", encoding="utf-8")
        paths.append(path)
    return paths


def write_fixture(directory: str | Path, n_events: int = 12, tau: int = 35, seed: int = 0) -> tuple[Path, Path]:
    """Archive plus a bars directory holding one asset; returns (archive, bars)."""
    directory = Path(directory)
    events = planted_events(n_events, seed)
    archive, bars = directory / "archive", directory / "bars"
    write_archive(events, archive)
    bars.mkdir(parents=True, exist_ok=True)
    write_bars(planted_bars(events, tau, seed), bars / "SYN.csv")
    return archive, bars


def counterfactual_sets(events: list[EventScript], backend=None, n_identical: int = 10,
                        include_diverse: bool = True) -> tuple[list, dict]:
    """Augment every event with the given backend (stub by default) and sample its set."""
    from .counterfactual import EventIndex, StubBackend, augment_event, group_by_parent, sample_counterfactuals

    backend = backend or StubBackend()
    records = [r for ev in events for r in augment_event(ev, backend)]
    store = group_by_parent(records)
    index = EventIndex(events)
    sets = {ev.id: sample_counterfactuals(ev, index, store, n_identical, include_diverse) for ev in events}
    return records, sets


def planted_dataset(n_events: int, tau: int = 35, seed: int = 0):
    """Events, normalized aligned samples and counterfactual sets for planted data."""
    from .market import align_event, normalize_sample

    events = planted_events(n_events, seed)
    bars = planted_bars(events, tau, seed)
    samples = [normalize_sample(align_event(bars, ev, tau)) for ev in events]
    _, sets = counterfactual_sets(events)
    return events, samples, sets
