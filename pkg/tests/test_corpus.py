import numpy as np
import pytest

from eventcat.corpus import (
    DEFAULT_SPEC,
    CorpusSpecError,
    SyntheticCorpusSpec,
    default_spec,
    generate_corpus,
    spec_from_dict,
)
from eventcat.textprep import clean_event


def small_spec(**kw):
    defaults = dict(
        events_per_class={0: 20, 1: 10},
        keyword_pools={0: ("drum", "bass", "synth"), 1: ("vault", "fresco", "mosaic")},
        noise_words=("evening", "tickets", "free"),
        noise_ratio=0.3,
        accent_rate=0.1,
        contamination_rate=0.1,
        seed=1,
    )
    defaults.update(kw)
    return SyntheticCorpusSpec(**defaults)


def test_counts_per_class_are_exact():
    events = generate_corpus(small_spec(events_per_class={0: 200, 1: 100}))
    assert len(events) == 300
    labels = [e.label for e in events]
    assert labels.count(0) == 200
    assert labels.count(1) == 100


def test_zero_noise_draws_only_pool_words():
    spec = small_spec(noise_ratio=0.0, accent_rate=0.0, contamination_rate=0.0)
    events = generate_corpus(spec)
    for event in events:
        pool = set(spec.keyword_pools[event.label])
        words = (event.title_raw + " " + event.description_raw).lower().split()
        for word in words:
            assert word.strip(".") in pool


def test_contamination_count_within_binomial_five_sigma():
    spec = small_spec(events_per_class={0: 500, 1: 500}, contamination_rate=0.1,
                      accent_rate=0.0, seed=9)
    events = generate_corpus(spec)
    markers = ("<", "\\u003c", "&", "@", "http://")
    dirty = sum(
        1 for e in events
        if any(m in e.title_raw or m in e.description_raw for m in markers)
    )
    sigma = np.sqrt(1000 * 0.1 * 0.9)
    assert abs(dirty - 100) <= 5 * sigma


def test_generation_is_deterministic_per_seed():
    a = generate_corpus(small_spec(seed=4))
    b = generate_corpus(small_spec(seed=4))
    assert a == b
    c = generate_corpus(small_spec(seed=5))
    assert a != c


def test_fetched_at_is_monotonic():
    events = generate_corpus(small_spec())
    stamps = [e.fetched_at for e in events]
    assert all(x < y for x, y in zip(stamps, stamps[1:]))


def test_external_ids_are_unique():
    events = generate_corpus(small_spec())
    keys = {(e.source_id, e.external_id) for e in events}
    assert len(keys) == len(events)


def test_contaminated_events_clean_back_to_words():
    spec = small_spec(contamination_rate=1.0, accent_rate=1.0, seed=2)
    for raw in generate_corpus(spec)[:20]:
        event = clean_event(raw)
        assert "<" not in event.text and "@" not in event.text
        assert all(ord(ch) < 128 for ch in event.text)


def test_overlapping_pools_rejected():
    with pytest.raises(CorpusSpecError, match="share words"):
        small_spec(keyword_pools={0: ("drum",), 1: ("drum", "vault")})


def test_bad_rates_rejected():
    with pytest.raises(CorpusSpecError, match="noise_ratio"):
        small_spec(noise_ratio=1.0)
    with pytest.raises(CorpusSpecError, match="contamination_rate"):
        small_spec(contamination_rate=1.5)


def test_missing_pool_rejected():
    with pytest.raises(CorpusSpecError, match="no keyword pool"):
        small_spec(events_per_class={0: 5, 1: 5, 2: 5})


def test_default_spec_shape():
    assert DEFAULT_SPEC.total_events() >= 2000
    counts = DEFAULT_SPEC.events_per_class
    # the music class carries twice the volume of every other class
    for label, count in counts.items():
        if label != 0:
            assert counts[0] == 2 * count
    assert default_spec(seed=9).seed == 9


def test_spec_from_dict_coerces_keys():
    spec = spec_from_dict({
        "events_per_class": {"0": 4, "1": 4},
        "keyword_pools": {"0": ["a"], "1": ["b"]},
        "noise_words": ["x"],
        "seed": 3,
    })
    assert spec.events_per_class == {0: 4, 1: 4}
    assert spec.keyword_pools[1] == ("b",)
