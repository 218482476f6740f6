"""Text-generation backends: a deterministic offline stub and an HTTP client."""

from __future__ import annotations

import json
import math
import os
import re
import time
import urllib.error
import urllib.request
from typing import Callable, Protocol

from ..errors import ConfigError, GenerationError
from . import prompts

BACKEND_URL_ENV = "CF_BACKEND_URL"
BACKEND_KEY_ENV = "CF_BACKEND_KEY"


class TextGenBackend(Protocol):
    name: str
    model: str

    def complete(self, prompt: str, max_words: int, temperature: float) -> str: ...


# Polarity ladders: position p carries score p - 5. Counterfactual rewriting
# moves every ladder word by (target - current) positions.
LEXICON: tuple[tuple[str, ...], ...] = (
    ("collapsed", "plunged", "tumbled", "fell", "slipped", "held", "edged", "rose", "climbed", "surged", "soared"),
    ("dire", "grim", "poor", "weak", "soft", "steady", "firm", "solid", "strong", "robust", "booming"),
    ("catastrophic", "alarming", "bleak", "gloomy", "cautious", "balanced", "hopeful", "upbeat", "bright", "buoyant", "exuberant"),
)
_POSITION = {word: (ladder, pos) for ladder, words in enumerate(LEXICON) for pos, word in enumerate(words)}
_WORD = re.compile(r"[A-Za-z]+")
_NUMBER = re.compile(r"(?<![\w.])(\d{1,3}(?:,\d{3})+|\d+)(\.\d+)?(?![\w])")


def lexicon_score(text: str) -> int:
    """Signed sum of ladder scores over every lexicon word in ``text``."""
    return sum(_POSITION[w.lower()][1] - 5 for w in _WORD.findall(text) if w.lower() in _POSITION)


def stub_rating(text: str) -> int:
    return 5 + max(-5, min(5, lexicon_score(text)))


def _match_case(word: str, template: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[0].isupper():
        return word.capitalize()
    return word


def shift_text(text: str, current: int, target: int) -> str:
    """Stub counterfactual: scale numbers by 1 + 0.05 (target - current) and move ladder words."""
    delta = target - current
    factor = 1.0 + 0.05 * delta

    def number(m: re.Match) -> str:
        whole, frac = m.group(1), m.group(2) or ""
        value = float(whole.replace(",", "") + frac) * factor
        decimals = len(frac) - 1 if frac else 0
        if "," in whole:
            return f"{value:,.{decimals}f}"
        return f"{value:.{decimals}f}"

    def word(m: re.Match) -> str:
        w = m.group(0)
        hit = _POSITION.get(w.lower())
        if hit is None:
            return w
        ladder, pos = hit
        return _match_case(LEXICON[ladder][max(0, min(10, pos + delta))], w)

    return _WORD.sub(word, _NUMBER.sub(number, text))


def first_words(text: str, n: int) -> str:
    return " ".join(text.split()[:n])


class StubBackend:
    """Offline deterministic backend.

    Summaries are the first ``number_of_words`` words, ratings come from the
    ladder lexicon, and counterfactuals come from :func:`shift_text`.
    Temperature is ignored.
    """

    name = "stub"
    model = "lexicon-v1"

    def __init__(self):
        self.calls: list[str] = []

    def complete(self, prompt: str, max_words: int, temperature: float) -> str:
        self.calls.append(prompt)
        kind, fields = prompts.identify(prompt)
        if kind in ("chunk", "final"):
            return first_words(fields["text"], int(fields["words"]))
        if kind == "sentiment":
            text = fields["text"]
            return (
                f"Sentiment rating: {stub_rating(text)}, "
                f"Explanation: lexicon score {lexicon_score(text)}"
            )
        if kind == "counterfactual":
            return shift_text(fields["text"], int(fields["current"]), int(fields["target"]))
        raise GenerationError("stub backend cannot interpret prompt")


class HttpBackend:
    """JSON-over-HTTP completion endpoint.

    Posts ``{"prompt", "max_tokens", "temperature"}`` and accepts a response
    with a ``text`` field, a ``choices[0].text`` field, or a plain-text body.
    """

    name = "http"
    tokens_per_word = 2

    def __init__(self, url: str | None = None, key: str | None = None, model: str = "remote", timeout: float = 120.0):
        self.url = url or os.environ.get(BACKEND_URL_ENV)
        self.key = key if key is not None else os.environ.get(BACKEND_KEY_ENV)
        if not self.url:
            raise ConfigError(f"HTTP backend needs {BACKEND_URL_ENV}")
        self.model = model
        self.timeout = timeout

    def complete(self, prompt: str, max_words: int, temperature: float) -> str:
        body = json.dumps({
            "prompt": prompt,
            "max_tokens": int(math.ceil(max_words * self.tokens_per_word)),
            "temperature": temperature,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        request = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise GenerationError(f"backend request failed: {exc}") from exc
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            return raw
        if isinstance(payload, dict):
            if "text" in payload:
                return str(payload["text"])
            choices = payload.get("choices")
            if choices:
                return str(choices[0].get("text", ""))
        raise GenerationError("backend response has no text field")


def with_retries(
    call: Callable[[], str],
    attempts: int = 3,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Run ``call`` up to ``attempts`` times with exponential backoff."""
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return call()
        except Exception as exc:  # noqa: BLE001 - any backend failure is retried
            last = exc
            if attempt + 1 < attempts:
                sleep(backoff * 2**attempt)
    raise GenerationError(f"backend failed after {attempts} attempts: {last}") from last


def make_backend(kind: str) -> TextGenBackend:
    if kind == "stub":
        return StubBackend()
    if kind == "http":
        return HttpBackend()
    raise ConfigError(f"unknown backend {kind!r}")
