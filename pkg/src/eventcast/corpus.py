"""Macroeconomic release ingestion and normalization to unified text."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, time, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable
from zoneinfo import ZoneInfo

from .errors import ConfigError, FormatError, IngestError

log = logging.getLogger(__name__)

EASTERN = ZoneInfo("America/New_York")
DEFAULT_RELEASE_TIME = time(8, 30)
MIN_TIMESTAMP = datetime(1993, 1, 1, tzinfo=timezone.utc)
MAX_TIMESTAMP = datetime(2025, 1, 1, tzinfo=timezone.utc)
RAW_FORMATS = ("html", "pdf-text", "txt")


class EventType(str, enum.Enum):
    FOMC = "FOMC"
    UnemploymentInsuranceClaims = "UnemploymentInsuranceClaims"
    EmploymentSituation = "EmploymentSituation"
    GDPAdvance = "GDPAdvance"
    CPIReport = "CPIReport"
    PPIReport = "PPIReport"

    @property
    def label(self) -> str:
        """Human-readable name used when filling prompt templates."""
        return _LABELS[self]

    @classmethod
    def parse(cls, value: str) -> "EventType":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown event type {value!r}") from None


_LABELS = {
    EventType.FOMC: "FOMC Minutes",
    EventType.UnemploymentInsuranceClaims: "Unemployment Insurance Claims",
    EventType.EmploymentSituation: "Employment Situation",
    EventType.GDPAdvance: "GDP Advance",
    EventType.CPIReport: "CPI",
    EventType.PPIReport: "PPI",
}


@dataclass(frozen=True)
class StructuredTable:
    headers: list[str]
    rows: list[list[str]] = field(default_factory=list)

    def validate(self) -> None:
        for i, row in enumerate(self.rows):
            if len(row) != len(self.headers):
                raise FormatError(
                    f"row {i} has {len(row)} cells, header has {len(self.headers)}"
                )


@dataclass
class EventScript:
    id: str
    type: EventType
    timestamp: datetime
    raw_format: str
    text: str
    sentiment: int | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise IngestError(f"event {self.id}: empty text")
        if self.timestamp.tzinfo is None:
            raise IngestError(f"event {self.id}: timestamp must be timezone-aware")
        self.timestamp = self.timestamp.astimezone(timezone.utc)
        if not (MIN_TIMESTAMP <= self.timestamp <= MAX_TIMESTAMP):
            raise IngestError(f"event {self.id}: timestamp {self.timestamp.isoformat()} outside 1993-2025")
        if self.raw_format not in RAW_FORMATS:
            raise ConfigError(f"unknown raw format {self.raw_format!r}")
        if self.sentiment is not None and not 0 <= self.sentiment <= 10:
            raise IngestError(f"event {self.id}: sentiment {self.sentiment} outside [0, 10]")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "type": self.type.value,
            "timestamp": format_timestamp(self.timestamp),
            "raw_format": self.raw_format,
            "text": self.text,
            "sentiment": self.sentiment,
        }

    @classmethod
    def from_json(cls, record: dict) -> "EventScript":
        return cls(
            id=record["id"],
            type=EventType.parse(record["type"]),
            timestamp=parse_timestamp(record["timestamp"]),
            raw_format=record["raw_format"],
            text=record["text"],
            sentiment=record.get("sentiment"),
        )


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 timestamp to an aware UTC datetime."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise FormatError(f"timestamp {text!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


# -- table serialization ----------------------------------------------------

TABLE_OPEN = "<Table>"
TABLE_CLOSE = "</Table>"
TABLE_RULE = "----"
CELL_SEP = " | "


def _escape_cell(cell: str) -> str:
    return cell.replace("\\", "\\\\").replace("|", "\\|")


def _split_cells(line: str) -> list[str]:
    cells, buf, i = [], [], 0
    while i < len(line):
        ch = line[i]
        if ch == "\\" and i + 1 < len(line):
            buf.append(line[i + 1])
            i += 2
            continue
        if line.startswith(CELL_SEP, i):
            cells.append("".join(buf))
            buf = []
            i += len(CELL_SEP)
            continue
        buf.append(ch)
        i += 1
    cells.append("".join(buf))
    return cells


def serialize_table(table: StructuredTable) -> str:
    table.validate()
    lines = [TABLE_OPEN, CELL_SEP.join(_escape_cell(h) for h in table.headers), TABLE_RULE]
    lines += [CELL_SEP.join(_escape_cell(c) for c in row) for row in table.rows]
    lines.append(TABLE_CLOSE)
    return "\n".join(lines)


def parse_table(block: str) -> StructuredTable:
    """Inverse of :func:`serialize_table`."""
    lines = block.split("\n")
    if len(lines) < 4 or lines[0] != TABLE_OPEN or lines[2] != TABLE_RULE or lines[-1] != TABLE_CLOSE:
        raise FormatError("not a serialized table block")
    return StructuredTable(_split_cells(lines[1]), [_split_cells(l) for l in lines[3:-1]])


# -- document normalization -------------------------------------------------

_BLOCK_TAGS = {
    "p", "div", "br", "li", "ul", "ol", "h1", "h2", "h3", "h4", "h5", "h6",
    "pre", "section", "article", "header", "footer", "blockquote", "tr", "hr",
    "title", "dl", "dt", "dd",
}
_SKIP_TAGS = {"script", "style", "head", "noscript"}


class _Extractor(HTMLParser):
    """Depth-first text extraction; tables become serialized blocks."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip = 0
        self._tables: list[dict] = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip += 1
        elif tag == "table":
            self._tables.append({"rows": [], "row": None, "cell": None, "header_row": False})
        elif self._tables:
            t = self._tables[-1]
            if tag == "tr":
                t["row"], t["header_row"] = [], False
            elif tag in ("td", "th"):
                if t["row"] is None:
                    t["row"] = []
                t["cell"] = []
                t["header_row"] = t["header_row"] or tag == "th"
            elif tag == "br" and t["cell"] is not None:
                t["cell"].append(" ")
        elif tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip = max(0, self._skip - 1)
        elif tag == "table" and self._tables:
            t = self._tables.pop()
            self._close_row(t)
            block = _table_from_rows(t["rows"])
            if block:
                self._emit("\n" + block + "\n")
        elif self._tables:
            t = self._tables[-1]
            if tag in ("td", "th"):
                self._close_cell(t)
            elif tag == "tr":
                self._close_row(t)
        elif tag in _BLOCK_TAGS:
            self.parts.append("\n")

    def handle_data(self, data):
        if self._skip:
            return
        if self._tables and self._tables[-1]["cell"] is not None:
            self._tables[-1]["cell"].append(data)
        elif not self._tables:
            self.parts.append(data)

    def _emit(self, text):
        if len(self._tables):
            # nested table: flatten into the enclosing cell
            t = self._tables[-1]
            if t["cell"] is not None:
                t["cell"].append(" ".join(text.split()))
        else:
            self.parts.append(text)

    @staticmethod
    def _close_cell(t):
        if t["cell"] is not None:
            t["row"].append(" ".join("".join(t["cell"]).split()))
            t["cell"] = None

    def _close_row(self, t):
        self._close_cell(t)
        if t["row"]:
            t["rows"].append((t["header_row"], t["row"]))
        t["row"] = None


def _table_from_rows(rows: list[tuple[bool, list[str]]]) -> str:
    if not rows:
        return ""
    headers = rows[0][1]
    width = max(len(r) for _, r in rows)
    headers = headers + [""] * (width - len(headers))
    body = [r + [""] * (width - len(r)) for _, r in rows[1:]]
    return serialize_table(StructuredTable(headers, body))


def _normalize_whitespace(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    out, in_table = [], False
    for line in text.split("\n"):
        bare = line.strip()
        if bare == TABLE_OPEN:
            in_table = True
            out.append(bare)
        elif bare == TABLE_CLOSE:
            in_table = False
            out.append(bare)
        elif in_table:
            # serialized rows carry meaningful blanks around empty cells
            out.append(line)
        else:
            out.append(_BLANKS.sub(" ", line).strip())
    text = re.sub(r"\n{3,}", "\n\n", "\n".join(out))
    return text.strip("\n")


_BLANKS = re.compile("[ \t\f\v\u00a0]+")


def normalize_document(blob: bytes | str, raw_format: str) -> str:
    """Convert a raw release document into the unified text format."""
    if raw_format not in RAW_FORMATS:
        raise ConfigError(f"unknown raw format {raw_format!r}")
    if isinstance(blob, bytes):
        blob = blob.decode("utf-8", errors="replace")
    if not blob or not blob.strip():
        raise IngestError("empty document")
    if raw_format == "html":
        parser = _Extractor()
        parser.feed(blob)
        parser.close()
        blob = "".join(parser.parts)
    out = _normalize_whitespace(blob)
    if not out:
        raise IngestError("document has no text content")
    return out


# -- events -----------------------------------------------------------------

_STAMP = re.compile(r"^(\d{4})-(\d{2})-(\d{2})(?:_(\d{2})(\d{2}))?$")
_EXTENSIONS = {".html": "html", ".htm": "html", ".txt": "txt", ".pdf.txt": "pdf-text"}


def release_timestamp(stem: str) -> datetime:
    """``YYYY-MM-DD[_HHMM]`` (US Eastern wall clock) to UTC.

    Date-only stems use the 08:30 ET release convention.
    """
    m = _STAMP.match(stem)
    if not m:
        raise IngestError(f"file stem {stem!r} is not YYYY-MM-DD[_HHMM]")
    y, mo, d, hh, mm = m.groups()
    clock = time(int(hh), int(mm)) if hh else DEFAULT_RELEASE_TIME
    try:
        local = datetime(int(y), int(mo), int(d), clock.hour, clock.minute, tzinfo=EASTERN)
    except ValueError as exc:
        raise IngestError(f"invalid date in {stem!r}: {exc}") from exc
    return local.astimezone(timezone.utc)


def event_id(event_type: EventType, timestamp: datetime) -> str:
    return f"{event_type.value}-{timestamp.astimezone(timezone.utc):%Y%m%dT%H%MZ}"


def parse_event(text: str, event_type: EventType | str, timestamp: datetime, id: str | None = None,
                raw_format: str = "txt") -> EventScript:
    if not text or not text.strip():
        raise IngestError("empty event text")
    if isinstance(event_type, str):
        event_type = EventType.parse(event_type)
    if id is None:
        id = event_id(event_type, timestamp)
    return EventScript(id=id, type=event_type, timestamp=timestamp, raw_format=raw_format, text=text)


def split_name(path: Path) -> tuple[str, str]:
    name = path.name
    for ext in sorted(_EXTENSIONS, key=len, reverse=True):
        if name.lower().endswith(ext):
            return name[: -len(ext)], _EXTENSIONS[ext]
    raise IngestError(f"unsupported extension: {name}")


def ingest_archive(archive: str | Path) -> tuple[list[EventScript], list[tuple[str, str]]]:
    """Ingest ``archive/<event-type>/<YYYY-MM-DD[_HHMM]>.<ext>``.

    Returns the events sorted by (timestamp, id) and a list of
    ``(path, reason)`` for files that were skipped.
    """
    archive = Path(archive)
    if not archive.is_dir():
        raise IngestError(f"archive directory {archive} does not exist")
    events: list[EventScript] = []
    skipped: list[tuple[str, str]] = []
    seen: set[str] = set()
    for type_dir in sorted(p for p in archive.iterdir() if p.is_dir()):
        try:
            etype = EventType.parse(type_dir.name)
        except ConfigError as exc:
            skipped.append((str(type_dir), str(exc)))
            continue
        for path in sorted(p for p in type_dir.iterdir() if p.is_file()):
            try:
                stem, fmt = split_name(path)
                ts = release_timestamp(stem)
                text = normalize_document(path.read_bytes(), fmt)
                eid = event_id(etype, ts)
                base, n = eid, 2
                while eid in seen:
                    eid, n = f"{base}-{n}", n + 1
                events.append(parse_event(text, etype, ts, eid, fmt))
                seen.add(eid)
            except (IngestError, ConfigError, OSError) as exc:
                log.warning("skipping %s: %s", path, exc)
                skipped.append((str(path), str(exc)))
    events.sort(key=lambda e: (e.timestamp, e.id))
    return events, skipped


def write_events(events: Iterable[EventScript], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_events(path: str | Path) -> list[EventScript]:
    with open(path, encoding="utf-8") as fh:
        return [EventScript.from_json(json.loads(line)) for line in fh if line.strip()]
