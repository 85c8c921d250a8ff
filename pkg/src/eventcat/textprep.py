"""Text cleaning, model-input construction and tokenization.

Raw listings arrive with HTML fragments, backslash-u escape sequences,
embedded JSON payloads, e-mail addresses and mixed-script punctuation.
``clean_text`` reduces all of that to plain ASCII words (keeping ``. , -``
and word-internal apostrophes), ``build_text`` concatenates title and
description into the classifier input, and ``tokenize`` maps it onto
fixed-length id sequences with a prefix mask.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# Special token ids; ids for real words start at 4.
PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
UNK_TOKEN = "<unk>"

DEFAULT_MAX_CHARS = 1000
DEFAULT_MAX_LEN = 128

_ESCAPE_RE = re.compile(r"\\u([0-9a-fA-F]{4})")
_TAG_RE = re.compile(r"<[^>]*>")
_EMAIL_RE = re.compile(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)

_NAMED_ENTITIES = {
    "amp": "&",
    "lt": "<",
    "gt": ">",
    "quot": '"',
    "nbsp": " ",
}
_ENTITY_RE = re.compile(r"&(amp|lt|gt|quot|nbsp|#\d+);")


def _decode_escapes(text: str) -> str:
    return _ESCAPE_RE.sub(lambda m: chr(int(m.group(1), 16)), text)


def _decode_one_entity(match: re.Match) -> str:
    body = match.group(1)
    if body.startswith("#"):
        return chr(int(body[1:]))
    return _NAMED_ENTITIES[body]


def _decode_entities(text: str) -> str:
    # Single pass: "&amp;lt;" decodes to "&lt;", never onward to "<".
    return _ENTITY_RE.sub(_decode_one_entity, text)


def _find_json_fields(obj) -> tuple[str | None, str | None]:
    """Depth-first search for the first "title" and "description" strings."""
    title = description = None
    stack = [obj]
    while stack and (title is None or description is None):
        node = stack.pop(0)
        if isinstance(node, dict):
            if title is None and isinstance(node.get("title"), str):
                title = node["title"]
            if description is None and isinstance(node.get("description"), str):
                description = node["description"]
            stack.extend(v for v in node.values() if isinstance(v, (dict, list)))
        elif isinstance(node, list):
            stack.extend(v for v in node if isinstance(v, (dict, list)))
    return title, description


def _map_punctuation(text: str) -> str:
    # Keep . , - unconditionally and ' only between word characters. Letters,
    # numbers, combining marks and whitespace pass through; everything else
    # (punctuation, symbols, stray control characters) becomes a space.
    out = []
    for i, ch in enumerate(text):
        if ch in ".,-":
            out.append(ch)
            continue
        if ch == "'":
            prev_ok = i > 0 and text[i - 1].isalnum()
            next_ok = i + 1 < len(text) and text[i + 1].isalnum()
            out.append(ch if prev_ok and next_ok else " ")
            continue
        if unicodedata.category(ch)[0] in ("L", "N", "M") or ch.isspace():
            out.append(ch)
            continue
        out.append(" ")
    return "".join(out)


def _strip_accents(text: str) -> str:
    decomposed = unicodedata.normalize("NFD", text)
    return "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn")


def clean_text(raw: str) -> str:
    """Normalize one dirty string to plain ASCII words.

    Applied in order: decode ``\\uXXXX`` escapes; unwrap JSON payloads that
    carry their own title/description; strip HTML tags and decode the common
    entities; remove e-mail addresses and URLs; map punctuation (except
    ``. , -`` and word-internal apostrophes) to spaces; decompose accents and
    drop combining marks; drop remaining non-ASCII; collapse whitespace.

    Total function: any input yields a (possibly empty) cleaned string, and
    cleaning an already-clean string is a no-op.
    """
    text = _decode_escapes(raw)

    stripped = text.strip()
    if stripped.startswith("{"):
        # Some scraped payloads are whole JSON documents; pull the actual
        # title/description out instead of shredding the syntax to spaces.
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError:
            payload = None
        if isinstance(payload, dict):
            title, description = _find_json_fields(payload)
            if title is not None or description is not None:
                return clean_text(" ".join(p for p in (title, description) if p))

    text = _TAG_RE.sub(" ", text)
    text = _decode_entities(text)
    text = re.sub(r"\s", " ", text)
    text = _EMAIL_RE.sub(" ", text)
    text = _URL_RE.sub(" ", text)
    text = _map_punctuation(text)
    text = _strip_accents(text)
    text = "".join(ch for ch in text if ord(ch) < 128)
    return " ".join(text.split())


def build_text(title: str, description: str, max_chars: int = DEFAULT_MAX_CHARS) -> str:
    """Concatenate cleaned title and description, truncating at a word boundary."""
    text = f"{title} {description}" if description else title
    if len(text) <= max_chars:
        return text
    cut = text.rfind(" ", 0, max_chars + 1)
    if cut <= 0:
        return text[:max_chars]
    return text[:cut].rstrip()


@dataclass(frozen=True)
class Vocabulary:
    """Word-token vocabulary with four reserved special ids."""

    token_to_id: dict[str, int]
    size: int

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def tokens_in_rank_order(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.get)

    def token_of(self, token_id: int) -> str:
        if token_id == UNK_ID:
            return UNK_TOKEN
        ranked = self.tokens_in_rank_order()
        index = token_id - 4
        if 0 <= index < len(ranked):
            return ranked[index]
        raise KeyError(f"id {token_id} out of vocabulary")

    def save(self, path: str | Path) -> None:
        # Token per line; line k holds the token with id k + 4.
        Path(path).write_text(
            "".join(t + "\n" for t in self.tokens_in_rank_order()), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(
            token_to_id={t: i + 4 for i, t in enumerate(tokens)},
            size=len(tokens) + 4,
        )


def build_vocab(corpus, max_size: int, min_freq: int = 1) -> Vocabulary:
    """Frequency-ranked vocabulary over lowercased whitespace tokens.

    Ties at equal frequency rank lexicographically, so the result is a pure
    function of the corpus and the parameters.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    if max_size < 4:
        raise ValueError("max_size must leave room for the 4 special ids")
    counts: dict[str, int] = {}
    for doc in corpus:
        for token in doc.lower().split():
            counts[token] = counts.get(token, 0) + 1
    eligible = [t for t, c in counts.items() if c >= min_freq]
    eligible.sort(key=lambda t: (-counts[t], t))
    kept = eligible[: max_size - 4]
    return Vocabulary(token_to_id={t: i + 4 for i, t in enumerate(kept)}, size=len(kept) + 4)


@dataclass(eq=False)
class TokenSequence:
    """Fixed-length id sequence: [CLS] words... [SEP] PAD..., with prefix mask."""

    ids: np.ndarray
    mask: np.ndarray

    def real_token_count(self) -> int:
        return int(self.mask.sum())


def tokenize(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Map text onto ids: CLS, word ids (UNK when unknown), SEP, then PAD."""
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    words = text.lower().split()[: max_len - 2]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    for i, word in enumerate(words, start=1):
        ids[i] = vocab.id_of(word)
    ids[len(words) + 1] = SEP_ID
    mask = np.zeros(max_len, dtype=np.int64)
    mask[: len(words) + 2] = 1
    return TokenSequence(ids=ids, mask=mask)


def detokenize(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    """Recover word tokens (specials dropped, unknown ids as the UNK token)."""
    out = []
    for token_id, flag in zip(seq.ids.tolist(), seq.mask.tolist()):
        if not flag or token_id in (PAD_ID, CLS_ID, SEP_ID):
            continue
        out.append(vocab.token_of(token_id))
    return out


# --- raw-record normalization -------------------------------------------------

LAT_RANGE = (-90.0, 90.0)
LON_RANGE = (-180.0, 180.0)


def _in_range(value: float, bounds: tuple[float, float]) -> bool:
    return bounds[0] <= value <= bounds[1]


def coords_valid(lat: float, lon: float) -> bool:
    return _in_range(lat, LAT_RANGE) and _in_range(lon, LON_RANGE)


def normalize_coords(lat: float | None, lon: float | None):
    """Validate a coordinate pair, swapping when only the swap is in range.

    Returns (lat, lon, swapped) with Nones when the pair is unusable.
    """
    if lat is None or lon is None:
        return None, None, False
    if coords_valid(lat, lon):
        return lat, lon, False
    if coords_valid(lon, lat):
        return lon, lat, True
    return None, None, False


def parse_timestamp(value: str | None) -> datetime | None:
    """Parse an ISO-8601 or RFC-822 timestamp; naive values are taken as UTC."""
    if not value:
        return None
    text = value.strip()
    parsed = None
    try:
        parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        try:
            parsed = parsedate_to_datetime(text)
        except (TypeError, ValueError):
            return None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed


def _parse_float(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


@dataclass(eq=True)
class CleanEvent:
    """Normalized event record: cleaned text plus typed time/geo fields."""

    title: str
    description: str
    text: str
    source_id: str
    language: str | None = None
    starts: datetime | None = None
    ends: datetime | None = None
    latitude: float | None = None
    longitude: float | None = None
    city: str | None = None
    venue: str | None = None
    label: int | None = None

    def __post_init__(self):
        if self.latitude is not None and not _in_range(self.latitude, LAT_RANGE):
            raise ValueError(f"latitude {self.latitude} out of range")
        if self.longitude is not None and not _in_range(self.longitude, LON_RANGE):
            raise ValueError(f"longitude {self.longitude} out of range")

    def to_record(self) -> dict:
        return {
            "title": self.title,
            "description": self.description,
            "text": self.text,
            "source_id": self.source_id,
            "language": self.language,
            "starts": self.starts.isoformat() if self.starts else None,
            "ends": self.ends.isoformat() if self.ends else None,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "city": self.city,
            "venue": self.venue,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CleanEvent":
        return cls(
            title=record["title"],
            description=record.get("description", ""),
            text=record.get("text", record["title"]),
            source_id=record.get("source_id", ""),
            language=record.get("language"),
            starts=parse_timestamp(record.get("starts")),
            ends=parse_timestamp(record.get("ends")),
            latitude=record.get("latitude"),
            longitude=record.get("longitude"),
            city=record.get("city"),
            venue=record.get("venue"),
            label=record.get("label"),
        )


def clean_event(raw, max_chars: int = DEFAULT_MAX_CHARS, language: str | None = None) -> CleanEvent:
    """Turn a RawEvent into a CleanEvent (cleaning is pure per record)."""
    title = clean_text(raw.title_raw)
    description = clean_text(raw.description_raw)
    lat, lon, swapped = normalize_coords(
        _parse_float(raw.lat_raw), _parse_float(raw.lon_raw)
    )
    if swapped:
        log.info("swapped out-of-range coordinates for %r", title)
    city = raw.city_raw.strip() if raw.city_raw else None
    venue = raw.venue_raw.strip() if raw.venue_raw else None
    return CleanEvent(
        title=title,
        description=description,
        text=build_text(title, description, max_chars),
        source_id=raw.source_id,
        language=language,
        starts=parse_timestamp(raw.starts_raw),
        ends=parse_timestamp(raw.ends_raw),
        latitude=lat,
        longitude=lon,
        city=city or None,
        venue=venue or None,
        label=raw.label,
    )
