"""Seeded synthetic corpus of labeled raw events.

Stands in for a production-scale labeled dataset: each class owns a disjoint
keyword pool, every document mixes pool words with shared noise words, and a
configurable fraction of events is contaminated with HTML, escape sequences,
entities and e-mail addresses so the cleaning stage has real work to do.
Identical spec (including seed) always yields identical events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .ingestion import RawEvent


class CorpusSpecError(Exception):
    pass


_CITIES = (
    ("London", "51.5074", "-0.1278"),
    ("Glasgow", "55.8642", "-4.2518"),
    ("Bogota", "4.7110", "-74.0721"),
    ("Christchurch", "-43.5321", "172.6362"),
    ("Hong Kong", "22.3193", "114.1694"),
    ("Madrid", "40.4168", "-3.7038"),
    ("Toledo", "39.8628", "-4.0273"),
)

_ACCENTS = str.maketrans("aeiou", "áéíóú")

_BASE_TIME = datetime(2024, 3, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    events_per_class: dict[int, int]
    keyword_pools: dict[int, tuple[str, ...]]
    noise_words: tuple[str, ...]
    noise_ratio: float = 0.3
    accent_rate: float = 0.15
    contamination_rate: float = 0.1
    seed: int = 0
    source_id: str = "synthetic"

    def __post_init__(self):
        if not 0 <= self.noise_ratio < 1:
            raise CorpusSpecError("noise_ratio must be in [0, 1)")
        for name, rate in (("accent_rate", self.accent_rate),
                           ("contamination_rate", self.contamination_rate)):
            if not 0 <= rate <= 1:
                raise CorpusSpecError(f"{name} must be in [0, 1]")
        pools = list(self.keyword_pools.items())
        for i, (label_a, pool_a) in enumerate(pools):
            for label_b, pool_b in pools[i + 1:]:
                overlap = set(pool_a) & set(pool_b)
                if overlap:
                    raise CorpusSpecError(
                        f"keyword pools for classes {label_a} and {label_b} "
                        f"share words {sorted(overlap)}"
                    )
        missing = set(self.events_per_class) - set(self.keyword_pools)
        if missing:
            raise CorpusSpecError(f"no keyword pool for classes {sorted(missing)}")

    def total_events(self) -> int:
        return sum(self.events_per_class.values())


# Pools are pairwise disjoint by construction; the noise words are shared and
# carry no class signal. Music gets twice the volume of every other class.
DEFAULT_SPEC = SyntheticCorpusSpec(
    events_per_class={0: 500, 1: 250, 2: 250, 3: 250, 4: 250, 5: 250, 6: 250},
    keyword_pools={
        0: ("concert", "gig", "symphony", "orchestra", "choir", "album",
            "rock", "jazz", "techno", "singer"),
        1: ("theatre", "ballet", "opera", "drama", "stage", "mime",
            "puppetry", "improv", "monologue", "playwright"),
        2: ("museum", "gallery", "exhibition", "sculpture", "painting",
            "heritage", "mural", "archive", "curator", "fresco"),
        3: ("marathon", "tournament", "match", "league", "stadium",
            "sprint", "derby", "goalkeeper", "biathlon", "relay"),
        4: ("fireworks", "parade", "carnival", "picnic", "flashmob",
            "bonfire", "masquerade", "fundraiser", "cosplay", "raffle"),
        5: ("expo", "congress", "summit", "keynote", "webinar",
            "booth", "symposium", "networking", "startup", "briefing"),
        6: ("storytime", "toddler", "sandbox", "kindergarten", "teddy",
            "cartoon", "crayon", "lullaby", "playdate", "facepainting"),
    },
    noise_words=(
        "event", "evening", "tickets", "free", "entry", "doors", "open",
        "guest", "annual", "weekend", "local", "program", "special",
        "night", "joinus", "welcome", "city", "center", "popular", "grand",
    ),
    noise_ratio=0.3,
    accent_rate=0.15,
    contamination_rate=0.1,
    seed=0,
)


def _pick(rng: np.random.Generator, pool) -> str:
    return pool[int(rng.integers(len(pool)))]


def _content_words(rng, spec, label: int, count: int) -> list[str]:
    pool = spec.keyword_pools[label]
    words = []
    for _ in range(count):
        if spec.noise_ratio > 0 and rng.random() < spec.noise_ratio:
            words.append(_pick(rng, spec.noise_words))
        else:
            words.append(_pick(rng, pool))
    return words


def _accent(rng, spec, words: list[str]) -> list[str]:
    if spec.accent_rate > 0 and rng.random() < spec.accent_rate and words:
        i = int(rng.integers(len(words)))
        words[i] = words[i].translate(_ACCENTS)
    return words


def _contaminate(rng, title: str, description: str) -> tuple[str, str]:
    """Inject one of the dirt patterns the cleaner must remove."""
    style = int(rng.integers(4))
    if style == 0:
        title = f"<b>{title}</b>"
        description = f"<p style=\"text-align:center\">{description}<br></p>"
    elif style == 1:
        description = description + " \\u003cbr /\\u003e"
    elif style == 2:
        description = description + " &amp; more &nbsp; see &#8220;program&#8221;"
    else:
        description = description + " contact press@example.com http://tickets.example.com/buy"
    return title, description


def generate_corpus(spec: SyntheticCorpusSpec) -> list[RawEvent]:
    """Produce the labeled raw events described by the spec."""
    rng = np.random.default_rng(spec.seed)
    events = []
    counter = 0
    for label in sorted(spec.events_per_class):
        for i in range(spec.events_per_class[label]):
            title_words = _accent(rng, spec, _content_words(rng, spec, label, 3))
            body_words = _accent(rng, spec, _content_words(rng, spec, label, int(rng.integers(8, 16))))
            title = " ".join(title_words).capitalize()
            description = " ".join(body_words).capitalize() + "."
            contaminated = spec.contamination_rate > 0 and rng.random() < spec.contamination_rate
            if contaminated:
                title, description = _contaminate(rng, title, description)
            city, lat, lon = _CITIES[int(rng.integers(len(_CITIES)))]
            starts = _BASE_TIME + timedelta(days=int(rng.integers(0, 120)),
                                            hours=int(rng.integers(8, 22)))
            ends = starts + timedelta(hours=int(rng.integers(1, 6)))
            events.append(
                RawEvent(
                    source_id=spec.source_id,
                    external_id=f"syn-{label}-{i}",
                    title_raw=title,
                    description_raw=description,
                    starts_raw=starts.isoformat(),
                    ends_raw=ends.isoformat(),
                    lat_raw=lat,
                    lon_raw=lon,
                    city_raw=city,
                    venue_raw=None,
                    fetched_at=_BASE_TIME + timedelta(seconds=counter),
                    label=label,
                )
            )
            counter += 1
    order = np.random.default_rng(spec.seed + 1).permutation(len(events))
    shuffled = [events[i] for i in order]
    for stamp, event in enumerate(shuffled):
        event.fetched_at = _BASE_TIME + timedelta(seconds=stamp)
    return shuffled


def spec_from_dict(data: dict) -> SyntheticCorpusSpec:
    """Build a spec from parsed JSON (string keys become class ids)."""
    fields = dict(data)
    fields["events_per_class"] = {int(k): int(v) for k, v in fields["events_per_class"].items()}
    fields["keyword_pools"] = {int(k): tuple(v) for k, v in fields["keyword_pools"].items()}
    fields["noise_words"] = tuple(fields.get("noise_words", ()))
    return SyntheticCorpusSpec(**fields)


def load_spec(path: str | Path) -> SyntheticCorpusSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusSpecError(f"cannot load corpus spec {path}: {exc}") from exc
    return spec_from_dict(data)


def default_spec(seed: int | None = None) -> SyntheticCorpusSpec:
    return DEFAULT_SPEC if seed is None else replace(DEFAULT_SPEC, seed=seed)
