import json
import logging
from datetime import datetime, timezone

import numpy as np
import pytest

from eventcat.catalog import (
    Catalog,
    CatalogEntry,
    CatalogError,
    CatalogQuery,
    build_catalog,
    export_catalog,
    filter_catalog,
    import_catalog,
)
from eventcat.classifier import Prediction
from eventcat.taxonomy import parse_taxonomy
from eventcat.textprep import CleanEvent


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


# The five-event sample catalog: titles, categories, windows and coordinates.
SAMPLE_ROWS = [
    ("London Dungeon LATES with Cocktail", "Lates mashes up theatre and scares",
     4, utc(2017, 3, 29, 19), utc(2019, 11, 22, 22), 51.502820, -0.119252, "London"),
    ("Drumchapel & West Winterfest Fireworks", "Annual fireworks extravaganza",
     4, utc(2019, 11, 5, 0), utc(2019, 11, 5, 20, 59, 59), 55.901126, -4.373647, "Glasgow"),
    ("MEGALAND 2019", "Live music in the park all day",
     0, utc(2019, 11, 30, 13, 0, 18), utc(2019, 12, 1, 2, 0, 18), 4.659293, -74.093524, "Bogotá"),
    ("Extravaganza", "Extravaganza time at the heritage park",
     4, utc(2019, 10, 26, 0), utc(2019, 10, 27, 23), -43.567162, 172.702541, "Christchurch"),
    ("A Nightmare on Duddell's Street", "Disco with a freaky twist",
     0, utc(2019, 10, 26, 22), utc(2019, 10, 26, 23, 59, 59), 22.280244, 114.157230, "Hong Kong"),
]


def sample_events():
    return [
        CleanEvent(title=t, description=d, text=f"{t} {d}", source_id="sample",
                   starts=s, ends=e, latitude=lat, longitude=lon, city=city, label=cat)
        for t, d, cat, s, e, lat, lon, city in SAMPLE_ROWS
    ]


def sample_predictions():
    return [Prediction(predicted=row[2], method="model", actual=row[2]) for row in SAMPLE_ROWS]


def extended_taxonomy():
    records = [
        {"id": 0, "name": "music", "parent": None},
        {"id": 1, "name": "performing arts", "parent": None},
        {"id": 4, "name": "other events", "parent": None,
         "aliases": ["other interesting events"]},
        {"id": 5, "name": "trade fairs and conferences", "parent": None},
        {"id": 51, "name": "alcohol and beverages", "parent": 5},
    ]
    return parse_taxonomy("\n".join(json.dumps(r) for r in records))


@pytest.fixture
def sample_catalog(taxonomy):
    return build_catalog(sample_events(), sample_predictions(), taxonomy)


# --- build ------------------------------------------------------------------------


def test_build_resolves_names_and_sorts_by_start(sample_catalog, taxonomy):
    titles = [e.title for e in sample_catalog.entries]
    assert titles == [
        "London Dungeon LATES with Cocktail",
        "Extravaganza",
        "A Nightmare on Duddell's Street",
        "Drumchapel & West Winterfest Fireworks",
        "MEGALAND 2019",
    ]
    by_title = {e.title: e for e in sample_catalog.entries}
    assert by_title["MEGALAND 2019"].category_name == "music"
    london = by_title["London Dungeon LATES with Cocktail"]
    assert london.category == 4
    # the category resolves through the alias used in older exports
    assert taxonomy.resolve("other interesting events").id == london.category


def test_build_tiebreaks_equal_starts_by_title(taxonomy):
    stamp = utc(2024, 1, 1, 10)
    events = [
        CleanEvent(title=t, description="", text=t, source_id="s", starts=stamp, label=0)
        for t in ("zeta", "alpha", "ميم")
    ]
    preds = [Prediction(predicted=0, method="model")] * 3
    catalog = build_catalog(events, preds, taxonomy)
    assert [e.title for e in catalog.entries] == sorted(["zeta", "alpha", "ميم"])


def test_build_empty_input(taxonomy):
    assert len(build_catalog([], [], taxonomy)) == 0


def test_build_rejects_count_mismatch(taxonomy):
    with pytest.raises(CatalogError, match="mismatch"):
        build_catalog(sample_events(), sample_predictions()[:-1], taxonomy)


def test_entries_without_dates_sort_last(taxonomy):
    events = [
        CleanEvent(title="dated", description="", text="d", source_id="s",
                   starts=utc(2024, 5, 1), label=0),
        CleanEvent(title="undated", description="", text="u", source_id="s", label=0),
    ]
    preds = [Prediction(predicted=0, method="model")] * 2
    catalog = build_catalog(list(reversed(events)), preds, taxonomy)
    assert [e.title for e in catalog.entries] == ["dated", "undated"]


# --- entry validation ----------------------------------------------------------------


def test_entry_rejects_bad_ranges():
    with pytest.raises(CatalogError, match="latitude"):
        CatalogEntry(title="t", description="", category=0, category_path=("music",),
                     latitude=120.0)
    with pytest.raises(CatalogError, match="starts .* after ends"):
        CatalogEntry(title="t", description="", category=0, category_path=("music",),
                     starts=utc(2024, 2, 1), ends=utc(2024, 1, 1))


# --- filter ---------------------------------------------------------------------------


def test_exclude_removes_whole_subtree():
    tax = extended_taxonomy()
    entries = [
        CatalogEntry(title="beer fest", description="", category=51,
                     category_path=tax.name_path(51)),
        CatalogEntry(title="expo", description="", category=5,
                     category_path=tax.name_path(5)),
        CatalogEntry(title="concert", description="", category=0,
                     category_path=tax.name_path(0)),
    ]
    catalog = Catalog(entries=entries, taxonomy=tax)
    out = filter_catalog(catalog, CatalogQuery(
        exclude_categories=frozenset({tax.resolve("alcohol and beverages").id})
    ))
    assert [e.title for e in out.entries] == ["expo", "concert"]
    # excluding the parent removes the child too
    out = filter_catalog(catalog, CatalogQuery(exclude_categories=frozenset({5})))
    assert [e.title for e in out.entries] == ["concert"]


def test_empty_query_is_identity(sample_catalog):
    out = filter_catalog(sample_catalog, CatalogQuery())
    assert out.entries == sample_catalog.entries


def test_include_all_ids_is_identity(sample_catalog, taxonomy):
    everything = frozenset(n.id for n in taxonomy.nodes)
    out = filter_catalog(sample_catalog, CatalogQuery(include_categories=everything))
    assert out.entries == sample_catalog.entries


def test_filter_idempotent(sample_catalog):
    query = CatalogQuery(include_categories=frozenset({0, 4}), city="london")
    once = filter_catalog(sample_catalog, query)
    twice = filter_catalog(once, query)
    assert once.entries == twice.entries


def test_filter_matches_linear_scan_oracle(taxonomy):
    rng = np.random.default_rng(10)
    cities = ["Rome", "Lima", None]
    entries = []
    for i in range(100):
        has_geo = rng.random() < 0.8
        has_date = rng.random() < 0.8
        starts = utc(2024, 1, 1 + int(rng.integers(0, 20))) if has_date else None
        entries.append(CatalogEntry(
            title=f"e{i:03d}", description="", category=int(rng.integers(0, 7)),
            category_path=("x",),
            starts=starts,
            ends=None,
            latitude=float(rng.uniform(-60, 60)) if has_geo else None,
            longitude=float(rng.uniform(-120, 120)) if has_geo else None,
            city=cities[int(rng.integers(3))],
        ))
    catalog = Catalog(entries=entries, taxonomy=taxonomy)
    query = CatalogQuery(
        include_categories=frozenset({0}),
        city="rome",
        bbox=(-30.0, 50.0, -100.0, 100.0),
        date_from=utc(2024, 1, 5),
        date_to=utc(2024, 1, 15),
    )
    got = filter_catalog(catalog, query).entries

    expected = []
    for e in entries:
        if e.category != 0 or e.city is None or e.city.lower() != "rome":
            continue
        if e.latitude is None or not (-30 <= e.latitude <= 50):
            continue
        if e.longitude is None or not (-100 <= e.longitude <= 100):
            continue
        if e.starts is None or not (utc(2024, 1, 5) <= e.starts <= utc(2024, 1, 15)):
            continue
        expected.append(e)
    assert got == expected


def test_filtered_entries_violate_no_clause(sample_catalog):
    query = CatalogQuery(
        include_categories=frozenset({0, 4}),
        exclude_categories=frozenset({4}),
        bbox=(-90.0, 90.0, -180.0, 180.0),
        date_from=utc(2019, 1, 1),
        date_to=utc(2019, 12, 31),
    )
    for e in filter_catalog(sample_catalog, query).entries:
        assert e.category == 0
        assert -90 <= e.latitude <= 90 and -180 <= e.longitude <= 180
        assert e.starts <= utc(2019, 12, 31) and (e.ends or e.starts) >= utc(2019, 1, 1)


def test_date_filter_uses_interval_intersection(taxonomy):
    entry = CatalogEntry(title="long run", description="", category=0,
                         category_path=("music",),
                         starts=utc(2024, 1, 1), ends=utc(2024, 3, 1))
    catalog = Catalog(entries=[entry], taxonomy=taxonomy)
    # window inside the event's own span still matches
    out = filter_catalog(catalog, CatalogQuery(date_from=utc(2024, 2, 1),
                                               date_to=utc(2024, 2, 2)))
    assert len(out) == 1
    out = filter_catalog(catalog, CatalogQuery(date_from=utc(2024, 4, 1),
                                               date_to=utc(2024, 5, 1)))
    assert len(out) == 0


def test_unknown_category_in_query_rejected(sample_catalog):
    with pytest.raises(CatalogError, match="unknown category"):
        filter_catalog(sample_catalog, CatalogQuery(include_categories=frozenset({99})))


def test_bad_query_rejected():
    with pytest.raises(CatalogError, match="bbox"):
        CatalogQuery(bbox=(10.0, -10.0, 0.0, 0.0))
    with pytest.raises(CatalogError, match="date_from"):
        CatalogQuery(date_from=utc(2024, 2, 1), date_to=utc(2024, 1, 1))


# --- export / import -------------------------------------------------------------------


def test_jsonl_round_trip_is_byte_identical(sample_catalog, taxonomy):
    first = export_catalog(sample_catalog, "jsonl")
    imported = import_catalog(first, taxonomy, "jsonl")
    assert export_catalog(imported, "jsonl") == first


def test_csv_round_trip_is_byte_identical(sample_catalog, taxonomy):
    first = export_catalog(sample_catalog, "csv")
    imported = import_catalog(first, taxonomy, "csv")
    assert export_catalog(imported, "csv") == first


def test_exported_timestamps_carry_utc_offset(sample_catalog):
    text = export_catalog(sample_catalog, "csv").decode()
    assert "2019-11-30T13:00:18+00:00" in text


def test_timestamps_parse_back_to_equal_instants(sample_catalog, taxonomy):
    imported = import_catalog(export_catalog(sample_catalog, "jsonl"), taxonomy, "jsonl")
    for original, back in zip(sample_catalog.entries, imported.entries):
        assert original.starts == back.starts
        assert original.ends == back.ends


def test_empty_catalog_exports(taxonomy):
    empty = Catalog(entries=[], taxonomy=taxonomy)
    assert export_catalog(empty, "jsonl") == b""
    csv_bytes = export_catalog(empty, "csv")
    assert csv_bytes == b"title,description,taxonomy,starts,ends,latitude,longitude,city\n"


def test_csv_escapes_commas_and_quotes(taxonomy):
    entry = CatalogEntry(title='Fête, or "party"', description="a, b and \"c\"",
                         category=0, category_path=("music",), city="Val, d'Or")
    catalog = Catalog(entries=[entry], taxonomy=taxonomy)
    data = export_catalog(catalog, "csv")
    imported = import_catalog(data, taxonomy, "csv")
    assert imported.entries[0].title == entry.title
    assert imported.entries[0].description == entry.description
    assert imported.entries[0].city == entry.city
    assert export_catalog(imported, "csv") == data


def test_import_reports_malformed_rows(taxonomy):
    bad_json = b'{"title": "x", "category": 0}\nnot json\n'
    with pytest.raises(CatalogError, match="row 2"):
        import_catalog(bad_json, taxonomy, "jsonl")
    bad_csv = b"title,description,taxonomy,starts,ends,latitude,longitude,city\na,b,music,,,bad,1.0,c\n"
    with pytest.raises(CatalogError, match="row 2.*latitude"):
        import_catalog(bad_csv, taxonomy, "csv")
    with pytest.raises(CatalogError, match="bad csv header"):
        import_catalog(b"wrong,header\n", taxonomy, "csv")


def test_import_unknown_category_name(taxonomy):
    data = b"title,description,taxonomy,starts,ends,latitude,longitude,city\na,b,juggling,,,,,c\n"
    with pytest.raises(CatalogError, match="row 2.*unknown"):
        import_catalog(data, taxonomy, "csv")


# --- coordinate repair -------------------------------------------------------------------


def transcribed_sample_csv() -> bytes:
    """The sample catalog as older exports carried it: the latitude column
    holds longitudes and vice versa."""
    lines = ["title,description,taxonomy,starts,ends,latitude,longitude,city"]
    for title, desc, cat, starts, ends, lat, lon, city in SAMPLE_ROWS:
        name = {0: "music", 4: "other interesting events"}[cat]
        lines.append(
            f'"{title}",{desc},{name},{starts.isoformat()},{ends.isoformat()},'
            f"{lon},{lat},{city}"
        )
    return ("\n".join(lines) + "\n").encode()


def test_importer_repairs_whole_file_column_swap(taxonomy, caplog):
    with caplog.at_level(logging.WARNING, logger="eventcat.catalog"):
        imported = import_catalog(transcribed_sample_csv(), taxonomy, "csv")
    by_title = {e.title: e for e in imported.entries}
    london = by_title["London Dungeon LATES with Cocktail"]
    # in-range-either-way rows are repaired too, driven by file-level evidence
    assert london.latitude == pytest.approx(51.502820)
    assert london.longitude == pytest.approx(-0.119252)
    christchurch = by_title["Extravaganza"]
    assert christchurch.latitude == pytest.approx(-43.567162)
    assert any("swapped latitude/longitude" in r.message for r in caplog.records)


def test_importer_repairs_single_bad_pair_with_mixed_evidence(taxonomy, caplog):
    entries = [
        # clearly correct as given: latitude 80 could not be a longitude swap target
        CatalogEntry(title="far north", description="", category=0,
                     category_path=("music",), latitude=80.0, longitude=120.0),
    ]
    data = export_catalog(Catalog(entries=entries, taxonomy=taxonomy), "csv")
    # append one row whose pair is only valid swapped
    data += b"bad pair,,music,,,172.702541,-43.567162,Christchurch\n"
    with caplog.at_level(logging.WARNING, logger="eventcat.catalog"):
        imported = import_catalog(data, taxonomy, "csv")
    assert imported.entries[0].latitude == 80.0  # untouched
    assert imported.entries[1].latitude == pytest.approx(-43.567162)
    assert imported.entries[1].longitude == pytest.approx(172.702541)


def test_import_rejects_pair_invalid_both_ways(taxonomy):
    data = b"title,description,taxonomy,starts,ends,latitude,longitude,city\na,b,music,,,95.0,181.0,c\n"
    with pytest.raises(CatalogError, match="row 2"):
        import_catalog(data, taxonomy, "csv")
