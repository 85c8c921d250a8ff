"""Source connectors, deduplication and the raw event store.

Three source kinds are supported: ``api-dump`` (a JSON document of event
records), ``feed`` (RSS 2.0 / Atom XML, from a file or over plain HTTP GET)
and ``scraped-page-set`` (a JSONL file of captured pages). Tests always run
against recorded fixtures; only the feed kind may touch the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .stores import append_records, read_records
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

SOURCE_KINDS = ("api-dump", "feed", "scraped-page-set")


class SourceError(Exception):
    """A source is unreachable or its payload is unparseable at top level."""


class SourceConfigError(Exception):
    """The source configuration file is invalid."""


@dataclass(frozen=True)
class SourceDescriptor:
    """One configured source plus its cheap-classification hints.

    ``trust`` marks a source whose events all belong to one category;
    ``venue_rules`` maps venue names to the single category that venue hosts.
    """

    source_id: str
    kind: str
    location: str
    trust: int | None = None
    venue_rules: dict[str, int] = field(default_factory=dict)
    locale_hint: str | None = None


@dataclass(eq=True)
class RawEvent:
    """An event exactly as collected: dirty strings, no typing yet."""

    source_id: str
    title_raw: str
    description_raw: str = ""
    external_id: str | None = None
    starts_raw: str | None = None
    ends_raw: str | None = None
    lat_raw: str | None = None
    lon_raw: str | None = None
    city_raw: str | None = None
    venue_raw: str | None = None
    fetched_at: datetime | None = None
    label: int | None = None

    def to_record(self) -> dict:
        return {
            "source_id": self.source_id,
            "external_id": self.external_id,
            "title_raw": self.title_raw,
            "description_raw": self.description_raw,
            "starts_raw": self.starts_raw,
            "ends_raw": self.ends_raw,
            "lat_raw": self.lat_raw,
            "lon_raw": self.lon_raw,
            "city_raw": self.city_raw,
            "venue_raw": self.venue_raw,
            "fetched_at": self.fetched_at.isoformat() if self.fetched_at else None,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RawEvent":
        fetched = record.get("fetched_at")
        return cls(
            source_id=record["source_id"],
            title_raw=record["title_raw"],
            description_raw=record.get("description_raw", ""),
            external_id=record.get("external_id"),
            starts_raw=record.get("starts_raw"),
            ends_raw=record.get("ends_raw"),
            lat_raw=record.get("lat_raw"),
            lon_raw=record.get("lon_raw"),
            city_raw=record.get("city_raw"),
            venue_raw=record.get("venue_raw"),
            fetched_at=datetime.fromisoformat(fetched) if fetched else None,
            label=record.get("label"),
        )


class RunClock:
    """Monotonic per-run timestamp source for ``fetched_at``.

    A fixed ``start`` makes a whole ingestion run reproducible byte for byte.
    """

    def __init__(self, start: datetime | None = None, step_seconds: int = 1):
        self._next = start or datetime.now(timezone.utc).replace(microsecond=0)
        self._step = timedelta(seconds=step_seconds)

    def next(self) -> datetime:
        value = self._next
        self._next = value + self._step
        return value


def load_sources(path: str | Path, taxonomy: Taxonomy | None = None) -> list[SourceDescriptor]:
    """Read the source configuration file (a JSON list of descriptors).

    When a taxonomy is given, trust and venue-rule categories are resolved
    through it (names are accepted and stored as ids).
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SourceConfigError(f"cannot read sources file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SourceConfigError(f"invalid sources file {path}: {exc}") from exc
    if not isinstance(payload, list):
        raise SourceConfigError("sources file must hold a list of source records")

    def resolve(category):
        if category is None:
            return None
        if taxonomy is None:
            if not isinstance(category, int):
                raise SourceConfigError(
                    f"category {category!r} needs a taxonomy to resolve names"
                )
            return category
        return taxonomy.resolve(category).id

    descriptors = []
    seen_ids = set()
    for record in payload:
        source_id = record.get("source_id")
        kind = record.get("kind")
        if not source_id or kind not in SOURCE_KINDS:
            raise SourceConfigError(f"bad source record {record!r}")
        if source_id in seen_ids:
            raise SourceConfigError(f"duplicate source_id {source_id!r}")
        seen_ids.add(source_id)
        venue_rules = {
            str(venue).lower(): resolve(category)
            for venue, category in (record.get("venue_rules") or {}).items()
        }
        descriptors.append(
            SourceDescriptor(
                source_id=source_id,
                kind=kind,
                location=record.get("location", ""),
                trust=resolve(record.get("trust")),
                venue_rules=venue_rules,
                locale_hint=record.get("locale_hint"),
            )
        )
    return descriptors


# --- payload readers -----------------------------------------------------------


def _read_location(desc: SourceDescriptor) -> bytes:
    location = desc.location
    if location.startswith(("http://", "https://")):
        if desc.kind != "feed":
            raise SourceError(f"{desc.source_id}: only feed sources may fetch over HTTP")
        import requests  # deferred: fixture-only runs never need it

        try:
            response = requests.get(location, timeout=30)
            response.raise_for_status()
            return response.content
        except Exception as exc:
            raise SourceError(f"{desc.source_id}: unreachable {location}: {exc}") from exc
    try:
        return Path(location).read_bytes()
    except OSError as exc:
        raise SourceError(f"{desc.source_id}: unreadable {location}: {exc}") from exc


def _text_of(element) -> str:
    return "".join(element.itertext()).strip() if element is not None else ""


def _parse_feed(payload: bytes) -> list[dict]:
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        raise SourceError(f"feed XML unparseable: {exc}") from exc
    items = []
    # RSS 2.0: <rss><channel><item>; Atom: <feed><entry>.
    for item in root.iter("item"):
        items.append(
            {
                "title": _text_of(item.find("title")),
                "description": _text_of(item.find("description")),
                "starts": _text_of(item.find("pubDate")) or None,
                "external_id": _text_of(item.find("guid")) or _text_of(item.find("link")) or None,
            }
        )
    atom = "{http://www.w3.org/2005/Atom}"
    for entry in root.iter(f"{atom}entry"):
        items.append(
            {
                "title": _text_of(entry.find(f"{atom}title")),
                "description": _text_of(entry.find(f"{atom}summary"))
                or _text_of(entry.find(f"{atom}content")),
                "starts": _text_of(entry.find(f"{atom}published"))
                or _text_of(entry.find(f"{atom}updated"))
                or None,
                "external_id": _text_of(entry.find(f"{atom}id")) or None,
            }
        )
    return items


def _parse_api_dump(payload: bytes) -> list[dict]:
    try:
        document = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SourceError(f"api dump unparseable: {exc}") from exc
    if isinstance(document, dict):
        document = document.get("events")
    if not isinstance(document, list):
        raise SourceError("api dump must be a list of events (or {'events': [...]})")
    items = []
    for record in document:
        if not isinstance(record, dict):
            continue
        items.append(
            {
                "title": str(record.get("title", "") or ""),
                "description": str(record.get("description", "") or ""),
                "starts": record.get("starts"),
                "ends": record.get("ends"),
                "lat": None if record.get("lat") is None else str(record["lat"]),
                "lon": None if record.get("lon") is None else str(record["lon"]),
                "city": record.get("city"),
                "venue": record.get("venue"),
                "external_id": None if record.get("id") is None else str(record["id"]),
                "label": record.get("label"),
            }
        )
    return items


def _extract_page_fields(html: str) -> dict:
    title_match = re.search(r"<title[^>]*>(.*?)</title>", html, re.IGNORECASE | re.DOTALL)
    if not title_match:
        title_match = re.search(r"<h1[^>]*>(.*?)</h1>", html, re.IGNORECASE | re.DOTALL)
    meta_match = re.search(
        r"<meta[^>]*name=[\"']description[\"'][^>]*content=[\"'](.*?)[\"']",
        html,
        re.IGNORECASE | re.DOTALL,
    ) or re.search(
        r"<meta[^>]*content=[\"'](.*?)[\"'][^>]*name=[\"']description[\"']",
        html,
        re.IGNORECASE | re.DOTALL,
    )
    if meta_match:
        description = meta_match.group(1)
    else:
        para = re.search(r"<p[^>]*>(.*?)</p>", html, re.IGNORECASE | re.DOTALL)
        description = para.group(1) if para else ""
    return {
        "title": title_match.group(1).strip() if title_match else "",
        "description": description.strip(),
    }


def _parse_page_set(payload: bytes) -> list[dict]:
    try:
        lines = payload.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise SourceError(f"page set not UTF-8: {exc}") from exc
    items = []
    parsed_any = False
    for line in lines:
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            continue
        parsed_any = True
        if not isinstance(record, dict) or "html" not in record:
            continue
        fields = _extract_page_fields(record["html"])
        fields["external_id"] = record.get("url")
        items.append(fields)
    if not parsed_any and any(line.strip() for line in lines):
        raise SourceError("page set unparseable: no valid JSON lines")
    return items


_PARSERS = {
    "api-dump": _parse_api_dump,
    "feed": _parse_feed,
    "scraped-page-set": _parse_page_set,
}


@dataclass
class FetchResult:
    source_id: str
    events: list[RawEvent] = field(default_factory=list)
    skipped_no_title: int = 0
    error: str | None = None


def _parse_source(desc: SourceDescriptor) -> list[dict]:
    payload = _read_location(desc)
    return _PARSERS[desc.kind](payload)


def _stamp(desc: SourceDescriptor, items: list[dict], clock: RunClock) -> FetchResult:
    result = FetchResult(source_id=desc.source_id)
    for item in items:
        title = (item.get("title") or "").strip()
        if not title:
            result.skipped_no_title += 1
            continue
        result.events.append(
            RawEvent(
                source_id=desc.source_id,
                title_raw=title,
                description_raw=item.get("description") or "",
                external_id=item.get("external_id"),
                starts_raw=item.get("starts"),
                ends_raw=item.get("ends"),
                lat_raw=item.get("lat"),
                lon_raw=item.get("lon"),
                city_raw=item.get("city"),
                venue_raw=item.get("venue"),
                fetched_at=clock.next(),
                label=item.get("label"),
            )
        )
    return result


def fetch_source(desc: SourceDescriptor, clock: RunClock | None = None) -> FetchResult:
    """Fetch one source; raises SourceError when the whole source is unusable."""
    if desc.kind not in _PARSERS:
        raise SourceError(f"{desc.source_id}: unknown source kind {desc.kind!r}")
    items = _parse_source(desc)
    return _stamp(desc, items, clock or RunClock())


def fetch_sources(
    descriptors: list[SourceDescriptor],
    parallel: int = 1,
    clock: RunClock | None = None,
) -> list[FetchResult]:
    """Fetch many sources, parsing up to ``parallel`` of them concurrently.

    Timestamps are assigned after the parse phase, in configuration order, so
    the result is independent of thread scheduling. A failing source yields a
    FetchResult with ``error`` set instead of aborting the run.
    """
    clock = clock or RunClock()
    parsed: list[list[dict] | Exception] = [None] * len(descriptors)  # type: ignore

    def parse_one(index: int):
        try:
            parsed[index] = _parse_source(descriptors[index])
        except SourceError as exc:
            parsed[index] = exc

    if parallel > 1 and len(descriptors) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(parse_one, range(len(descriptors))))
    else:
        for i in range(len(descriptors)):
            parse_one(i)

    results = []
    for desc, outcome in zip(descriptors, parsed):
        if isinstance(outcome, Exception):
            log.warning("source %s skipped: %s", desc.source_id, outcome)
            results.append(FetchResult(source_id=desc.source_id, error=str(outcome)))
        else:
            results.append(_stamp(desc, outcome, clock))
    return results


# --- deduplication ---------------------------------------------------------------


def content_hash(event: RawEvent) -> int:
    """64-bit stable hash over (title_raw, starts_raw, city_raw)."""
    digest = hashlib.blake2b(digest_size=8)
    for part in (event.title_raw, event.starts_raw or "", event.city_raw or ""):
        digest.update(part.encode("utf-8"))
        digest.update(b"\x1f")
    return int.from_bytes(digest.digest(), "big")


def dedupe_key(event: RawEvent):
    if event.external_id:
        return (event.source_id, event.external_id)
    return content_hash(event)


def dedupe(events: list[RawEvent]) -> list[RawEvent]:
    """Keep the first occurrence per duplicate key, preserving order."""
    seen = set()
    survivors = []
    for event in events:
        key = dedupe_key(event)
        if key in seen:
            continue
        seen.add(key)
        survivors.append(event)
    return survivors


# --- raw store -------------------------------------------------------------------


def append_raw(store: str | Path, events: list[RawEvent]) -> int:
    """Append events to the raw store; returns the count written."""
    return append_records(store, (e.to_record() for e in events))


def read_raw(
    store: str | Path,
    source_id: str | None = None,
    on_corrupt=None,
) -> list[RawEvent]:
    """Read raw events in append order, optionally filtered by source."""
    events = [RawEvent.from_record(r) for r in read_records(store, on_corrupt=on_corrupt)]
    if source_id is not None:
        events = [e for e in events if e.source_id == source_id]
    return events
