import pytest

from eventcat.stores import StoreError, append_records, read_records


def test_round_trip_preserves_order(tmp_path):
    store = tmp_path / "a.jsonl"
    records = [{"n": i, "title": f"event {i}"} for i in range(10)]
    assert append_records(store, records) == 10
    assert read_records(store) == records


def test_appends_accumulate(tmp_path):
    store = tmp_path / "a.jsonl"
    append_records(store, [{"n": 1}, {"n": 2}])
    append_records(store, [{"n": 3}])
    assert [r["n"] for r in read_records(store)] == [1, 2, 3]


def test_corrupt_line_reported_and_skipped(tmp_path):
    store = tmp_path / "a.jsonl"
    store.write_text('{"n": 1}\nnot json at all\n{"n": 2}\n{"n": 3}\n')
    skips = []
    records = read_records(store, on_corrupt=lambda n, msg: skips.append(n))
    assert [r["n"] for r in records] == [1, 2, 3]
    assert skips == [2]


def test_non_object_line_reported(tmp_path):
    store = tmp_path / "a.jsonl"
    store.write_text('{"n": 1}\n[1, 2]\n')
    skips = []
    assert read_records(store, on_corrupt=lambda n, msg: skips.append((n, msg))) == [{"n": 1}]
    assert skips[0][0] == 2


def test_missing_file_raises(tmp_path):
    with pytest.raises(StoreError):
        read_records(tmp_path / "missing.jsonl")
