"""Counterfactual event generation and per-sample counterfactual set assembly."""

from __future__ import annotations

import bisect
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ..corpus import EventScript, EventType
from ..errors import AugmentationError, ContractError, GenerationError, ParseError, RangeError, SamplingError
from . import prompts
from .backends import TextGenBackend, with_retries

RATING_TEMPERATURE = 0.0
GENERATION_TEMPERATURE = 0.7
DEFAULT_CHUNK_WORDS = 500
DEFAULT_SUMMARY_WORDS = 200
N_IDENTICAL = 10
N_DIVERSE = len(EventType) - 1

_RATING = re.compile(r"Sentiment rating:\s*(-?\d+)")


@dataclass
class CounterfactualRecord:
    parent_event_id: str
    target_sentiment: int
    text: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise GenerationError(f"empty counterfactual for {self.parent_event_id}")
        original = self.provenance.get("original_sentiment")
        if original is not None and original == self.target_sentiment:
            raise ContractError("counterfactual target equals the factual sentiment")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, rec: dict) -> "CounterfactualRecord":
        return cls(**rec)


@dataclass
class CounterfactualSet:
    event_id: str
    identical: list[CounterfactualRecord]
    diverse: list[EventScript]

    def texts(self) -> list[str]:
        return [r.text for r in self.identical] + [e.text for e in self.diverse]

    def __len__(self) -> int:
        return len(self.identical) + len(self.diverse)


def _call(backend: TextGenBackend, prompt: str, words: int, temperature: float,
          attempts: int, sleep: Callable[[float], None] | None) -> str:
    kwargs = {"attempts": attempts}
    if sleep is not None:
        kwargs["sleep"] = sleep
    return with_retries(lambda: backend.complete(prompt, words, temperature), **kwargs)


def chunk_words(text: str, size: int) -> list[str]:
    words = text.split()
    n = max(1, math.ceil(len(words) / size))
    return [" ".join(words[i * size:(i + 1) * size]) for i in range(n)]


def chunk_and_summarize(
    script: EventScript,
    backend: TextGenBackend,
    chunk_words_: int = DEFAULT_CHUNK_WORDS,
    summary_words: int = DEFAULT_SUMMARY_WORDS,
    attempts: int = 3,
    sleep: Callable[[float], None] | None = None,
) -> str:
    """Summarize each word chunk, then merge the chunk summaries when there are several."""
    if chunk_words_ < 100:
        raise ContractError("chunk size must be at least 100 words")
    if summary_words < 50:
        raise ContractError("summary length must be at least 50 words")
    text_type = script.type.label
    summaries = []
    for idx, chunk in enumerate(chunk_words(script.text, chunk_words_), start=1):
        prompt = prompts.render_chunk_summary(idx, text_type, summary_words, chunk)
        try:
            summaries.append(_call(backend, prompt, summary_words, GENERATION_TEMPERATURE, attempts, sleep).strip())
        except GenerationError as exc:
            raise GenerationError(f"{script.id}: chunk {idx} summary failed: {exc}", chunk_index=idx) from exc
    if len(summaries) == 1:
        return summaries[0]
    prompt = prompts.render_final_summary(len(summaries), text_type, summary_words, summaries)
    try:
        return _call(backend, prompt, summary_words, GENERATION_TEMPERATURE, attempts, sleep).strip()
    except GenerationError as exc:
        raise GenerationError(f"{script.id}: final summary failed: {exc}", chunk_index=None) from exc


def parse_rating(response: str) -> int:
    m = _RATING.search(response)
    if not m:
        raise ParseError("no 'Sentiment rating: <n>' in response", raw=response)
    value = int(m.group(1))
    if not 0 <= value <= 10:
        raise RangeError(f"sentiment rating {value} outside [0, 10]")
    return value


def rate_sentiment(
    summary: str,
    text_type: EventType | str,
    backend: TextGenBackend,
    attempts: int = 3,
    sleep: Callable[[float], None] | None = None,
) -> int:
    if not summary or not summary.strip():
        raise ContractError("cannot rate an empty summary")
    label = text_type.label if isinstance(text_type, EventType) else text_type
    prompt = prompts.render_sentiment(label, summary)
    return parse_rating(_call(backend, prompt, 60, RATING_TEMPERATURE, attempts, sleep))


def generate_counterfactual(
    summary: str,
    current: int,
    target: int,
    backend: TextGenBackend,
    parent_event_id: str = "",
    attempts: int = 3,
    sleep: Callable[[float], None] | None = None,
) -> CounterfactualRecord:
    for r in (current, target):
        if not 0 <= r <= 10:
            raise RangeError(f"rating {r} outside [0, 10]")
    if current == target:
        raise ContractError(f"target rating equals current rating ({current})")
    prompt = prompts.render_counterfactual(current, target, summary)
    words = max(50, 2 * len(summary.split()))
    text = _call(backend, prompt, words, GENERATION_TEMPERATURE, attempts, sleep).strip()
    if not text:
        raise GenerationError(f"{parent_event_id}: backend returned empty counterfactual for target {target}")
    return CounterfactualRecord(
        parent_event_id=parent_event_id,
        target_sentiment=target,
        text=text,
        provenance={
            "backend": backend.name,
            "model": backend.model,
            "template_version": prompts.TEMPLATE_VERSION,
            "original_sentiment": current,
        },
    )


def augment_event(
    script: EventScript,
    backend: TextGenBackend,
    chunk_words_: int = DEFAULT_CHUNK_WORDS,
    summary_words: int = DEFAULT_SUMMARY_WORDS,
    max_in_flight: int = 4,
    attempts: int = 3,
    sleep: Callable[[float], None] | None = None,
) -> list[CounterfactualRecord]:
    """Ten counterfactuals, one per rating in 0..10 other than the factual one.

    Rates the script first when its sentiment is unset (and stores it).
    """
    summary = chunk_and_summarize(script, backend, chunk_words_, summary_words, attempts, sleep)
    if script.sentiment is None:
        script.sentiment = rate_sentiment(summary, script.type, backend, attempts, sleep)
    targets = [t for t in range(11) if t != script.sentiment]

    def one(target):
        return generate_counterfactual(summary, script.sentiment, target, backend, script.id, attempts, sleep)

    results: dict[int, CounterfactualRecord] = {}
    failures: list[tuple[int, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = {t: pool.submit(one, t) for t in targets}
        for t, fut in futures.items():
            try:
                results[t] = fut.result()
            except (GenerationError, ContractError) as exc:
                failures.append((t, str(exc)))
    records = [results[t] for t in sorted(results)]
    if failures:
        raise AugmentationError(
            f"{script.id}: {len(failures)} of {len(targets)} counterfactuals failed",
            records=records,
            failures=failures,
        )
    return records


# -- diverse counterfactual sampling ----------------------------------------

class EventIndex:
    """Per-type chronological index for nearest-date lookups."""

    def __init__(self, registry: Iterable[EventScript]):
        self.by_type: dict[EventType, list[EventScript]] = {t: [] for t in EventType}
        for ev in registry:
            self.by_type[ev.type].append(ev)
        for evs in self.by_type.values():
            evs.sort(key=lambda e: (e.timestamp, e.id))
        self._stamps = {t: [e.timestamp.timestamp() for e in evs] for t, evs in self.by_type.items()}

    def nearest(self, etype: EventType, when) -> EventScript:
        """Event of ``etype`` closest to ``when``; ties go to the earlier one."""
        evs = self.by_type[etype]
        if not evs:
            raise SamplingError(f"registry has no {etype.value} events")
        stamps = self._stamps[etype]
        t = when.timestamp()
        i = bisect.bisect_left(stamps, t)
        candidates = []
        if i > 0:
            candidates.append(i - 1)
        if i < len(evs):
            candidates.append(i)
        # equal distance: the lower index is the earlier release
        best = min(candidates, key=lambda j: (abs(stamps[j] - t), stamps[j], j))
        return evs[best]


def sample_counterfactuals(
    event: EventScript,
    registry: Sequence[EventScript] | EventIndex,
    cf_store: Sequence[CounterfactualRecord] | dict[str, list[CounterfactualRecord]],
    n_identical: int = N_IDENTICAL,
    include_diverse: bool = True,
) -> CounterfactualSet:
    index = registry if isinstance(registry, EventIndex) else EventIndex(registry)
    if isinstance(cf_store, dict):
        own = list(cf_store.get(event.id, []))
    else:
        own = [r for r in cf_store if r.parent_event_id == event.id]
    if len(own) < n_identical:
        raise SamplingError(f"{event.id}: {len(own)} counterfactuals stored, need {n_identical}")
    own.sort(key=lambda r: r.target_sentiment)
    diverse = []
    if include_diverse:
        diverse = [index.nearest(t, event.timestamp) for t in EventType if t != event.type]
    return CounterfactualSet(event.id, own[:n_identical], diverse)


def group_by_parent(records: Iterable[CounterfactualRecord]) -> dict[str, list[CounterfactualRecord]]:
    out: dict[str, list[CounterfactualRecord]] = {}
    for r in records:
        out.setdefault(r.parent_event_id, []).append(r)
    return out


def write_counterfactuals(records: Iterable[CounterfactualRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_counterfactuals(path: str | Path) -> list[CounterfactualRecord]:
    with open(path, encoding="utf-8") as fh:
        return [CounterfactualRecord.from_json(json.loads(line)) for line in fh if line.strip()]
