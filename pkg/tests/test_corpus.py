from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from eventcast.corpus import (
    EventScript,
    EventType,
    StructuredTable,
    event_id,
    ingest_archive,
    normalize_document,
    parse_table,
    parse_timestamp,
    read_events,
    release_timestamp,
    serialize_table,
    split_name,
    write_events,
)
from eventcast.errors import ConfigError, FormatError, IngestError


def test_event_type_labels():
    assert EventType.CPIReport.label == "CPI"
    assert EventType.parse("FOMC") is EventType.FOMC
    with pytest.raises(ConfigError):
        EventType.parse("Retail")


def test_table_golden(golden):
    table = StructuredTable(["Header 1", "Header 2", "Header 3"], [["Cell 1", "Cell 2", "Cell 3"]])
    assert serialize_table(table) == golden("table.txt")
    assert parse_table(golden("table.txt")) == table


def test_table_escapes_delimiters():
    table = StructuredTable(["a|b", "c\\d"], [["x | y", ""], ["\\|", "z"]])
    text = serialize_table(table)
    assert "a\\|b" in text and "c\\\\d" in text
    assert parse_table(text) == table


def test_ragged_table_rejected():
    with pytest.raises(FormatError):
        serialize_table(StructuredTable(["a", "b"], [["only one"]]))


cells = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=8)


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(
    st.lists(cells, min_size=n, max_size=n),
    st.lists(st.lists(cells, min_size=n, max_size=n), max_size=4))))
def test_table_round_trip(parts):
    headers, rows = parts
    table = StructuredTable(headers, rows)
    assert parse_table(serialize_table(table)) == table


def test_release_timestamp_eastern():
    # 08:30 EST in January is 13:30 UTC, EDT in July is 12:30 UTC
    assert release_timestamp("2020-01-10") == datetime(2020, 1, 10, 13, 30, tzinfo=timezone.utc)
    assert release_timestamp("2020-07-02") == datetime(2020, 7, 2, 12, 30, tzinfo=timezone.utc)
    assert release_timestamp("2019-06-19_1400") == datetime(2019, 6, 19, 18, 0, tzinfo=timezone.utc)
    with pytest.raises(IngestError):
        release_timestamp("June 2019")


def test_event_id_and_timestamp_format():
    ts = datetime(2020, 1, 10, 13, 30, tzinfo=timezone.utc)
    assert event_id(EventType.EmploymentSituation, ts) == "EmploymentSituation-20200110T1330Z"
    assert parse_timestamp("2020-01-10T13:30:00Z") == ts


def test_event_validation():
    ts = datetime(2020, 1, 10, 13, 30, tzinfo=timezone.utc)
    with pytest.raises(IngestError):
        EventScript("x", EventType.CPIReport, ts, "txt", "   ")
    with pytest.raises(IngestError):
        EventScript("x", EventType.CPIReport, datetime(1990, 1, 1, tzinfo=timezone.utc), "txt", "t")
    with pytest.raises(ConfigError):
        EventScript("x", EventType.CPIReport, ts, "docx", "t")


def test_html_with_table_normalizes():
    html = ("<html><head><title>skip</title><style>p{}</style></head><body>"
            "<p>Prices  rose&nbsp;0.3 percent.</p>"
            "<table><tr><th>Item</th><th>Change</th></tr><tr><td>Food</td><td>0.1</td></tr></table>"
            "<script>var x;</script><p>End.</p></body></html>")
    text = normalize_document(html, "html")
    assert text == "Prices rose 0.3 percent.\n\n<Table>\nItem | Change\n----\nFood | 0.1\n</Table>\n\nEnd."


def test_normalization_is_idempotent():
    html = "<div>A  line</div><table><tr><td>x</td><td></td></tr><tr><td>1</td></tr></table>"
    once = normalize_document(html, "html")
    assert normalize_document(once, "txt") == once
    assert parse_table(once[once.index("<Table>"):]).rows == [["1", ""]]


def test_line_endings_and_blank_runs():
    assert normalize_document(b"a\r\n\r\nb", "txt") == "a\n\nb"
    assert normalize_document("a\n\n\n\n b \t", "pdf-text") == "a\n\nb"


def test_empty_document_rejected():
    with pytest.raises(IngestError):
        normalize_document(b"  \n", "txt")
    with pytest.raises(ConfigError):
        normalize_document("text", "rtf")


def test_split_name():
    from pathlib import Path
    assert split_name(Path("2020-01-10.pdf.txt")) == ("2020-01-10", "pdf-text")
    assert split_name(Path("2020-01-10.htm")) == ("2020-01-10", "html")
    with pytest.raises(IngestError):
        split_name(Path("2020-01-10.doc"))


def test_ingest_archive(tmp_path):
    (tmp_path / "CPIReport").mkdir()
    (tmp_path / "FOMC").mkdir()
    (tmp_path / "Unknown").mkdir()
    (tmp_path / "CPIReport" / "2020-02-13.txt").write_text("Prices rose.")
    (tmp_path / "CPIReport" / "2020-02-13.html").write_text("<p>Prices rose again.</p>")
    (tmp_path / "FOMC" / "2020-01-29_1400.txt").write_text("Rates held.")
    (tmp_path / "FOMC" / "notes.doc").write_text("ignored")
    (tmp_path / "FOMC" / "2020-03-03.txt").write_text("   ")
    events, skipped = ingest_archive(tmp_path)
    assert [e.id for e in events] == [
        "FOMC-20200129T1900Z", "CPIReport-20200213T1330Z", "CPIReport-20200213T1330Z-2"]
    assert len(skipped) == 3
    write_events(events, tmp_path / "events.jsonl")
    assert read_events(tmp_path / "events.jsonl") == events
