from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from eventcast.corpus import EventScript, EventType
from eventcast.counterfactual import (
    CounterfactualRecord,
    EventIndex,
    StubBackend,
    augment_event,
    chunk_and_summarize,
    generate_counterfactual,
    parse_rating,
    rate_sentiment,
    read_counterfactuals,
    sample_counterfactuals,
    write_counterfactuals,
)
from eventcast.counterfactual import prompts
from eventcast.counterfactual.backends import shift_text, stub_rating, with_retries
from eventcast.errors import (
    AugmentationError,
    ContractError,
    GenerationError,
    ParseError,
    RangeError,
    SamplingError,
)

TS = datetime(2021, 5, 7, 12, 30, tzinfo=timezone.utc)


def script(text, etype=EventType.EmploymentSituation, ts=TS, sentiment=None):
    return EventScript(f"{etype.value}-{ts:%Y%m%dT%H%MZ}", etype, ts, "txt", text, sentiment)


def test_prompt_goldens(golden):
    assert prompts.render_chunk_summary(2, "CPI", 200, "The index for all items rose 0.3 percent in March.") \
        == golden("chunk_summary.txt")
    assert prompts.render_final_summary(
        3, "Employment Situation", 150, ["Payrolls rose.", "Wages firmed.", "Unemployment held at 3.9 percent."]) \
        == golden("final_summary.txt")
    assert prompts.render_sentiment("FOMC Minutes", "Participants judged that inflation had eased.") \
        == golden("sentiment.txt")
    assert prompts.render_counterfactual(7, 2, "GDP grew at a 2.8 percent annual rate.") \
        == golden("counterfactual.txt")


def test_identify_recovers_fields():
    kind, fields = prompts.identify(prompts.render_counterfactual(3, 9, "Output fell."))
    assert kind == "counterfactual"
    assert (fields["current"], fields["target"], fields["text"]) == ("3", "9", "Output fell.")
    assert prompts.identify("hello")[0] == "unknown"


def test_sentiment_labels():
    assert prompts.sentiment_label(0) == "Extremely Negative"
    assert prompts.sentiment_label(5) == "Neutral"
    with pytest.raises(RangeError):
        prompts.sentiment_label(11)


def test_stub_rating_and_shift():
    assert stub_rating("Payrolls rose and the outlook is strong") == 5 + 2 + 3
    assert stub_rating("nothing notable") == 5
    shifted = shift_text("Payrolls rose by 1,200 to 3.50 percent", 7, 9)
    assert shifted == "Payrolls surged by 1,320 to 3.85 percent"
    assert shift_text("Prices Held", 5, 0) == "Prices Collapsed"


def test_parse_rating():
    assert parse_rating("Sentiment rating: 7, Explanation: ok") == 7
    with pytest.raises(ParseError):
        parse_rating("I think it is positive")
    with pytest.raises(RangeError):
        parse_rating("Sentiment rating: 12, Explanation:")


def test_retries_with_backoff():
    calls, sleeps = [], []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise OSError("down")
        return "ok"

    assert with_retries(flaky, sleep=sleeps.append) == "ok"
    assert sleeps == [1.0, 2.0]
    with pytest.raises(GenerationError):
        with_retries(lambda: 1 / 0, sleep=sleeps.append)


def test_single_chunk_returns_direct_summary():
    backend = StubBackend()
    summary = chunk_and_summarize(script("word " * 120), backend, 500, 50)
    assert len(backend.calls) == 1 and summary == " ".join(["word"] * 50)


def test_multi_chunk_merges():
    backend = StubBackend()
    chunk_and_summarize(script("w " * 1100), backend, 500, 60)
    kinds = [prompts.identify(c)[0] for c in backend.calls]
    assert kinds == ["chunk", "chunk", "chunk", "final"]


def test_chunk_contract():
    with pytest.raises(ContractError):
        chunk_and_summarize(script("x"), StubBackend(), 50, 60)


class FailingBackend(StubBackend):
    def complete(self, prompt, max_words, temperature):
        if prompts.identify(prompt)[0] == "chunk" and "chunk 2" in prompt:
            raise OSError("timeout")
        return super().complete(prompt, max_words, temperature)


def test_chunk_failure_names_chunk():
    with pytest.raises(GenerationError) as err:
        chunk_and_summarize(script("w " * 1100), FailingBackend(), 500, 60, sleep=lambda s: None)
    assert err.value.chunk_index == 2


def test_augment_event_ten_records_with_provenance():
    ev = script("Payrolls rose by 250,000 in April.")
    backend = StubBackend()
    records = augment_event(ev, backend)
    assert ev.sentiment == stub_rating(ev.text)
    assert [r.target_sentiment for r in records] == [t for t in range(11) if t != ev.sentiment]
    assert len(backend.calls) == 12  # summary, rating, ten rewrites
    for r in records:
        assert r.provenance == {"backend": "stub", "model": "lexicon-v1",
                                "template_version": prompts.TEMPLATE_VERSION, "original_sentiment": ev.sentiment}
        assert stub_rating(r.text) == r.target_sentiment


def test_counterfactual_contract():
    with pytest.raises(ContractError):
        generate_counterfactual("text", 4, 4, StubBackend())
    with pytest.raises(RangeError):
        generate_counterfactual("text", 4, 11, StubBackend())
    with pytest.raises(ContractError):
        CounterfactualRecord("e", 3, "t", {"original_sentiment": 3})


class EmptyRewrites(StubBackend):
    def complete(self, prompt, max_words, temperature):
        if prompts.identify(prompt)[0] == "counterfactual" and "rating of 9" in prompt.splitlines()[1]:
            return "   "
        return super().complete(prompt, max_words, temperature)


def test_partial_augmentation_reports_failures():
    with pytest.raises(AugmentationError) as err:
        augment_event(script("Output held."), EmptyRewrites(), sleep=lambda s: None)
    assert len(err.value.records) == 9
    assert [t for t, _ in err.value.failures] == [9]


def test_rate_sentiment_rejects_empty():
    with pytest.raises(ContractError):
        rate_sentiment("  ", EventType.CPIReport, StubBackend())


def registry(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        etype = list(EventType)[int(rng.integers(6))]
        ts = TS + timedelta(hours=int(rng.integers(0, 24 * 400)))
        out.append(script(f"event {i}", etype, ts))
    # make ids unique even when type and hour collide
    return [EventScript(f"{e.id}-{i}", e.type, e.timestamp, "txt", e.text) for i, e in enumerate(out)]


def nearest_oracle(reg, event, etype):
    best = None
    for cand in reg:
        if cand.type != etype:
            continue
        key = (abs((cand.timestamp - event.timestamp).total_seconds()), cand.timestamp)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


def test_diverse_sampling_matches_quadratic_oracle():
    reg = registry(200)
    index = EventIndex(reg)
    for ev in reg:
        for etype in EventType:
            if etype != ev.type:
                assert index.nearest(etype, ev.timestamp).timestamp == nearest_oracle(reg, ev, etype).timestamp


def test_tie_goes_to_earlier():
    a = script("a", EventType.CPIReport, TS - timedelta(days=1))
    b = script("b", EventType.CPIReport, TS + timedelta(days=1))
    assert EventIndex([b, a]).nearest(EventType.CPIReport, TS) is a


def test_sample_counterfactual_set():
    reg = [script(f"rose {i}", t, TS + timedelta(days=i)) for i, t in enumerate(EventType)]
    backend = StubBackend()
    store = [r for ev in reg for r in augment_event(ev, backend)]
    cset = sample_counterfactuals(reg[0], reg, store)
    assert len(cset.identical) == 10 and len(cset.diverse) == 5
    assert {e.type for e in cset.diverse} == set(EventType) - {reg[0].type}
    assert len(cset.texts()) == 15
    with pytest.raises(SamplingError):
        sample_counterfactuals(reg[0], reg[:1], store)
    with pytest.raises(SamplingError):
        sample_counterfactuals(reg[0], reg, store[:5])


def test_counterfactual_file_round_trip(tmp_path):
    records = augment_event(script("Hiring was weak."), StubBackend())
    write_counterfactuals(records, tmp_path / "cf.jsonl")
    assert read_counterfactuals(tmp_path / "cf.jsonl") == records
