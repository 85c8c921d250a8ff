"""Normalized event catalog: assembly, filtering and import/export.

A catalog pairs classified events with resolved taxonomy names and supports
the consumer-side filters: include/exclude category subtrees, city, bounding
box and date-range overlap. Exports are byte-stable; the importer repairs
files whose latitude/longitude columns were written swapped.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace
from datetime import datetime, timezone

from .taxonomy import Taxonomy, TaxonomyError
from .textprep import CleanEvent, LAT_RANGE, LON_RANGE, coords_valid, parse_timestamp

log = logging.getLogger(__name__)

CSV_HEADER = ("title", "description", "taxonomy", "starts", "ends",
              "latitude", "longitude", "city")


class CatalogError(Exception):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    title: str
    description: str
    category: int
    category_path: tuple[str, ...]
    starts: datetime | None = None
    ends: datetime | None = None
    latitude: float | None = None
    longitude: float | None = None
    city: str | None = None
    source_id: str = ""
    method: str = ""

    def __post_init__(self):
        if self.latitude is not None and not LAT_RANGE[0] <= self.latitude <= LAT_RANGE[1]:
            raise CatalogError(f"latitude {self.latitude} out of range")
        if self.longitude is not None and not LON_RANGE[0] <= self.longitude <= LON_RANGE[1]:
            raise CatalogError(f"longitude {self.longitude} out of range")
        if self.starts and self.ends and self.starts > self.ends:
            raise CatalogError(f"starts {self.starts} after ends {self.ends}")

    @property
    def category_name(self) -> str:
        return self.category_path[-1] if self.category_path else ""


@dataclass
class Catalog:
    entries: list[CatalogEntry]
    taxonomy: Taxonomy

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _sort_key(entry: CatalogEntry):
    # Dated entries first in time order; undated ones trail, by title.
    anchor = entry.starts or datetime.max.replace(tzinfo=timezone.utc)
    return (entry.starts is None, anchor, entry.title)


def build_catalog(events: list[CleanEvent], predictions, taxonomy: Taxonomy) -> Catalog:
    """One entry per event, category names resolved, deterministically sorted."""
    predictions = list(predictions)
    if len(events) != len(predictions):
        raise CatalogError(
            f"prediction/event mismatch: {len(events)} events, {len(predictions)} predictions"
        )
    entries = []
    for event, prediction in zip(events, predictions):
        category = prediction.predicted
        entries.append(
            CatalogEntry(
                title=event.title,
                description=event.description,
                category=category,
                category_path=taxonomy.name_path(category),
                starts=event.starts,
                ends=event.ends,
                latitude=event.latitude,
                longitude=event.longitude,
                city=event.city,
                source_id=event.source_id,
                method=prediction.method,
            )
        )
    entries.sort(key=_sort_key)
    return Catalog(entries=entries, taxonomy=taxonomy)


@dataclass(frozen=True)
class CatalogQuery:
    """All present clauses must pass; absent clauses are ignored.

    Category clauses match whole subtrees; ``exclude`` is applied after
    ``include``. The date clause keeps entries whose [starts, ends] window
    intersects [date_from, date_to].
    """

    include_categories: frozenset[int] | None = None
    exclude_categories: frozenset[int] | None = None
    city: str | None = None
    bbox: tuple[float, float, float, float] | None = None  # lat_min, lat_max, lon_min, lon_max
    date_from: datetime | None = None
    date_to: datetime | None = None

    def __post_init__(self):
        if self.bbox is not None:
            lat_min, lat_max, lon_min, lon_max = self.bbox
            if lat_min > lat_max or lon_min > lon_max:
                raise CatalogError(f"bbox not well-ordered: {self.bbox}")
        if self.date_from and self.date_to and self.date_from > self.date_to:
            raise CatalogError("date_from after date_to")


def _expand_subtrees(ids: frozenset[int], taxonomy: Taxonomy) -> set[int]:
    expanded: set[int] = set()
    for node_id in ids:
        try:
            expanded |= taxonomy.subtree_ids(node_id)
        except TaxonomyError as exc:
            raise CatalogError(f"unknown category id in query: {exc}") from exc
    return expanded


def _passes(entry: CatalogEntry, query: CatalogQuery,
            include: set[int] | None, exclude: set[int] | None) -> bool:
    if include is not None and entry.category not in include:
        return False
    if exclude is not None and entry.category in exclude:
        return False
    if query.city is not None:
        if entry.city is None or entry.city.lower() != query.city.lower():
            return False
    if query.bbox is not None:
        if entry.latitude is None or entry.longitude is None:
            return False
        lat_min, lat_max, lon_min, lon_max = query.bbox
        if not (lat_min <= entry.latitude <= lat_max and lon_min <= entry.longitude <= lon_max):
            return False
    if query.date_from is not None or query.date_to is not None:
        starts = entry.starts
        if starts is None:
            return False
        ends = entry.ends or starts
        if query.date_to is not None and starts > query.date_to:
            return False
        if query.date_from is not None and ends < query.date_from:
            return False
    return True


def filter_catalog(catalog: Catalog, query: CatalogQuery) -> Catalog:
    """Keep entries passing every clause of the query."""
    include = exclude = None
    if query.include_categories is not None:
        include = _expand_subtrees(query.include_categories, catalog.taxonomy)
    if query.exclude_categories is not None:
        exclude = _expand_subtrees(query.exclude_categories, catalog.taxonomy)
    kept = [e for e in catalog.entries if _passes(e, query, include, exclude)]
    return Catalog(entries=kept, taxonomy=catalog.taxonomy)


# --- import / export ---------------------------------------------------------------


def _iso(value: datetime | None) -> str:
    return value.isoformat() if value else ""


def _num(value: float | None) -> str:
    return repr(value) if value is not None else ""


def export_catalog(catalog: Catalog, fmt: str = "jsonl") -> bytes:
    """Serialize to ``jsonl`` (full record) or ``csv`` (the 8 catalog columns)."""
    if fmt == "jsonl":
        lines = []
        for e in catalog.entries:
            lines.append(json.dumps(
                {
                    "title": e.title,
                    "description": e.description,
                    "category": e.category,
                    "category_path": list(e.category_path),
                    "starts": _iso(e.starts) or None,
                    "ends": _iso(e.ends) or None,
                    "latitude": e.latitude,
                    "longitude": e.longitude,
                    "city": e.city,
                    "source_id": e.source_id,
                    "method": e.method,
                },
                ensure_ascii=False,
                separators=(",", ":"),
            ))
        return ("".join(line + "\n" for line in lines)).encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for e in catalog.entries:
            writer.writerow([
                e.title, e.description, e.category_name,
                _iso(e.starts), _iso(e.ends),
                _num(e.latitude), _num(e.longitude), e.city or "",
            ])
        return buf.getvalue().encode("utf-8")
    raise CatalogError(f"unknown export format {fmt!r}")


def _parse_float_cell(value, row_number: int, column: str) -> float | None:
    if value is None or value == "":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise CatalogError(f"row {row_number}: bad {column} value {value!r}") from None


def _repair_coordinates(rows: list[dict]) -> None:
    """Fix latitude/longitude pairs that were written the wrong way round.

    Evidence is judged over the whole file: if at least one pair is only
    valid when swapped and none is only valid as given, the lat/lon columns
    themselves were swapped, so every pair is flipped (this also repairs
    rows that happen to be in range either way). With mixed evidence only
    the individually broken pairs are flipped. Every repair is logged.
    """
    as_given_only = swapped_only = 0
    for row in rows:
        lat, lon = row["latitude"], row["longitude"]
        if lat is None or lon is None:
            continue
        valid_here = coords_valid(lat, lon)
        valid_swapped = coords_valid(lon, lat)
        if valid_here and not valid_swapped:
            as_given_only += 1
        elif valid_swapped and not valid_here:
            swapped_only += 1

    def flip(row, reason):
        row["latitude"], row["longitude"] = row["longitude"], row["latitude"]
        log.warning(
            "row %d (%r): swapped latitude/longitude (%s); latitude now %s",
            row["_row"], row["title"], reason, row["latitude"],
        )

    if swapped_only > 0 and as_given_only == 0:
        for row in rows:
            if row["latitude"] is not None and row["longitude"] is not None:
                flip(row, "whole-file column swap")
    else:
        for row in rows:
            lat, lon = row["latitude"], row["longitude"]
            if lat is None or lon is None:
                continue
            if not coords_valid(lat, lon) and coords_valid(lon, lat):
                flip(row, "pair only valid swapped")


def import_catalog(data: bytes, taxonomy: Taxonomy, fmt: str = "jsonl") -> Catalog:
    """Parse exported bytes back into a catalog, preserving row order.

    Malformed rows raise with their 1-based row number. CSV rows resolve the
    taxonomy column by name; missing per-row provenance defaults to
    method="import".
    """
    text = data.decode("utf-8")
    rows: list[dict] = []
    if fmt == "jsonl":
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"row {number}: {exc}") from exc
            rows.append({
                "_row": number,
                "title": record.get("title", ""),
                "description": record.get("description", ""),
                "category": record.get("category"),
                "category_name": None,
                "starts": record.get("starts"),
                "ends": record.get("ends"),
                "latitude": record.get("latitude"),
                "longitude": record.get("longitude"),
                "city": record.get("city"),
                "source_id": record.get("source_id", ""),
                "method": record.get("method", "import"),
            })
    elif fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != list(CSV_HEADER):
            raise CatalogError(f"row 1: bad csv header {header!r}")
        for number, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(CSV_HEADER):
                raise CatalogError(f"row {number}: expected {len(CSV_HEADER)} cells, got {len(cells)}")
            record = dict(zip(CSV_HEADER, cells))
            rows.append({
                "_row": number,
                "title": record["title"],
                "description": record["description"],
                "category": None,
                "category_name": record["taxonomy"],
                "starts": record["starts"] or None,
                "ends": record["ends"] or None,
                "latitude": _parse_float_cell(record["latitude"], number, "latitude"),
                "longitude": _parse_float_cell(record["longitude"], number, "longitude"),
                "city": record["city"] or None,
                "source_id": "",
                "method": "import",
            })
    else:
        raise CatalogError(f"unknown import format {fmt!r}")

    for row in rows:
        if isinstance(row["latitude"], str):
            row["latitude"] = _parse_float_cell(row["latitude"], row["_row"], "latitude")
        if isinstance(row["longitude"], str):
            row["longitude"] = _parse_float_cell(row["longitude"], row["_row"], "longitude")
    _repair_coordinates(rows)

    entries = []
    for row in rows:
        number = row["_row"]
        if row["category"] is not None:
            category = row["category"]
            if category not in taxonomy:
                raise CatalogError(f"row {number}: unknown category id {category}")
        else:
            try:
                category = taxonomy.resolve(row["category_name"]).id
            except TaxonomyError as exc:
                raise CatalogError(f"row {number}: {exc}") from exc
        starts = parse_timestamp(row["starts"])
        ends = parse_timestamp(row["ends"])
        if row["starts"] and starts is None:
            raise CatalogError(f"row {number}: bad starts timestamp {row['starts']!r}")
        if row["ends"] and ends is None:
            raise CatalogError(f"row {number}: bad ends timestamp {row['ends']!r}")
        try:
            entries.append(
                CatalogEntry(
                    title=row["title"],
                    description=row["description"],
                    category=category,
                    category_path=taxonomy.name_path(category),
                    starts=starts,
                    ends=ends,
                    latitude=row["latitude"],
                    longitude=row["longitude"],
                    city=row["city"],
                    source_id=row["source_id"],
                    method=row["method"],
                )
            )
        except CatalogError as exc:
            raise CatalogError(f"row {number}: {exc}") from exc
    return Catalog(entries=entries, taxonomy=taxonomy)
