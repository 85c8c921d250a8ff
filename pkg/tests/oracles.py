"""Independent reference implementations used as test oracles.

Everything here re-derives expected values through a different code path
than the package: character scanners instead of regexes, O(n^2) pairwise
comparison instead of hash sets, per-pair tallies instead of matrix algebra,
exact Fractions instead of floats. Keep these slow and obvious.
"""

from __future__ import annotations

import json
import string
import unicodedata
from fractions import Fraction

import numpy as np

# --- text cleaning, rule by rule ----------------------------------------------

_HEX = set(string.hexdigits)


def _ref_unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if (
            text[i] == "\\"
            and i + 6 <= len(text)
            and text[i + 1] == "u"
            and all(c in _HEX for c in text[i + 2 : i + 6])
        ):
            out.append(chr(int(text[i + 2 : i + 6], 16)))
            i += 6
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def _ref_json_extract(text: str):
    stripped = text.strip()
    if not stripped.startswith("{"):
        return None
    try:
        payload = json.loads(stripped)
    except json.JSONDecodeError:
        return None
    if not isinstance(payload, dict):
        return None

    found = {"title": None, "description": None}
    queue = [payload]
    while queue:
        node = queue.pop(0)
        if isinstance(node, dict):
            for key in ("title", "description"):
                if found[key] is None and isinstance(node.get(key), str):
                    found[key] = node[key]
            queue.extend(v for v in node.values() if isinstance(v, (dict, list)))
        elif isinstance(node, list):
            queue.extend(v for v in node if isinstance(v, (dict, list)))
    if found["title"] is None and found["description"] is None:
        return None
    return " ".join(v for v in (found["title"], found["description"]) if v)


def _ref_strip_tags(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "<":
            close = text.find(">", i + 1)
            if close != -1:
                out.append(" ")
                i = close + 1
                continue
        out.append(text[i])
        i += 1
    return "".join(out)


_REF_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "nbsp": " "}


def _ref_entities(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "&":
            close = text.find(";", i + 1)
            body = text[i + 1 : close] if close != -1 else ""
            if body in _REF_ENTITIES:
                out.append(_REF_ENTITIES[body])
                i = close + 1
                continue
            if body.startswith("#") and body[1:].isdigit():
                out.append(chr(int(body[1:])))
                i = close + 1
                continue
        out.append(text[i])
        i += 1
    return "".join(out)


def _ref_whitespace(text: str) -> str:
    return "".join(" " if ch.isspace() else ch for ch in text)


_LOCAL = set(string.ascii_letters + string.digits + "._%+-")
_DOMAIN = set(string.ascii_letters + string.digits + ".-")


def _ref_remove_emails(text: str) -> str:
    chars = list(text)
    i = 0
    while i < len(chars):
        if chars[i] != "@":
            i += 1
            continue
        left = i
        while left > 0 and chars[left - 1] in _LOCAL:
            left -= 1
        right = i + 1
        while right < len(chars) and chars[right] in _DOMAIN:
            right += 1
        while right > i + 1 and chars[right - 1] in ".-":
            right -= 1
        local = "".join(chars[left:i])
        domain = "".join(chars[i + 1 : right])
        labels = domain.split(".")
        if local and len(labels) >= 2 and len(labels[-1]) >= 2 and labels[-1].isalpha():
            del chars[left:right]
            chars.insert(left, " ")
            i = left + 1
        else:
            i += 1
    return "".join(chars)


def _ref_remove_urls(text: str) -> str:
    out = []
    for token in text.split(" "):
        lowered = token.lower()
        cut = len(token)
        for marker in ("http://", "https://", "www."):
            pos = lowered.find(marker)
            if pos != -1 and pos + len(marker) < len(token):
                cut = min(cut, pos)
        out.append(token[:cut])
    return " ".join(out)


def _ref_punctuation(text: str) -> str:
    out = []
    for i, ch in enumerate(text):
        if ch in ".,-":
            out.append(ch)
        elif ch == "'":
            internal = (
                0 < i < len(text) - 1
                and text[i - 1].isalnum()
                and text[i + 1].isalnum()
            )
            out.append(ch if internal else " ")
        elif ch.isalnum() or ch.isspace() or unicodedata.combining(ch):
            out.append(ch)
        else:
            out.append(" ")
    return "".join(out)


def _ref_accents(text: str) -> str:
    return "".join(
        ch for ch in unicodedata.normalize("NFD", text) if not unicodedata.combining(ch)
    )


def _ref_ascii(text: str) -> str:
    return "".join(ch for ch in text if ord(ch) < 128)


def reference_clean(raw: str) -> str:
    text = _ref_unescape(raw)
    extracted = _ref_json_extract(text)
    if extracted is not None:
        return reference_clean(extracted)
    text = _ref_strip_tags(text)
    text = _ref_entities(text)
    text = _ref_whitespace(text)
    text = _ref_remove_emails(text)
    text = _ref_remove_urls(text)
    text = _ref_punctuation(text)
    text = _ref_accents(text)
    text = _ref_ascii(text)
    return " ".join(text.split())


# --- deduplication ---------------------------------------------------------------


def brute_force_dedupe(events):
    """O(n^2): keep an event unless an earlier one duplicates it."""

    def duplicates(a, b):
        if a.external_id and b.external_id:
            return a.source_id == b.source_id and a.external_id == b.external_id
        if a.external_id or b.external_id:
            return False
        return (
            a.title_raw == b.title_raw
            and (a.starts_raw or "") == (b.starts_raw or "")
            and (a.city_raw or "") == (b.city_raw or "")
        )

    survivors = []
    for event in events:
        if not any(duplicates(event, kept) for kept in survivors):
            survivors.append(event)
    return survivors


# --- counting --------------------------------------------------------------------


def count_tokens(corpus) -> dict[str, int]:
    counts: dict[str, int] = {}
    for doc in corpus:
        for token in doc.lower().split():
            counts[token] = counts.get(token, 0) + 1
    return counts


def enumerate_ngrams(text: str, orders) -> list[str]:
    tokens = text.lower().split()
    grams = []
    for order in orders:
        for i in range(len(tokens)):
            if i + order <= len(tokens):
                grams.append(" ".join(tokens[i : i + order]))
    return grams


# --- metrics ---------------------------------------------------------------------


def pair_scan_metrics(pairs, classes):
    """Per-class TP/FP/FN by scanning every (actual, predicted) pair."""
    out = {}
    for c in classes:
        tp = sum(1 for a, p in pairs if a == c and p == c)
        fp = sum(1 for a, p in pairs if a != c and p == c)
        fn = sum(1 for a, p in pairs if a == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[c] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": tp + fn,
        }
    return out


def tally_confusion(pairs, classes):
    index = {c: i for i, c in enumerate(classes)}
    counts = [[0] * len(classes) for _ in classes]
    for actual, predicted in pairs:
        counts[index[actual]][index[predicted]] += 1
    return np.asarray(counts)


# --- split allocation --------------------------------------------------------------


def exact_allocation(class_sizes: dict[int, int], test_fraction: float) -> dict[int, int]:
    """Largest-remainder quotas recomputed with exact rational arithmetic."""
    fraction = Fraction(test_fraction).limit_denominator(10**9)
    total = sum(class_sizes.values())
    target = round(total * test_fraction)
    quotas = {c: n * fraction for c, n in class_sizes.items()}
    base = {c: int(q) for c, q in quotas.items()}
    leftover = target - sum(base.values())
    order = sorted(class_sizes, key=lambda c: (-(quotas[c] - base[c]), c))
    for c in order[:leftover]:
        base[c] += 1
    return base


# --- gradients ---------------------------------------------------------------------


def central_difference_gradient(loss_fn, coef: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(coef)
    for i in range(coef.shape[0]):
        for j in range(coef.shape[1]):
            bumped = coef.copy()
            bumped[i, j] += step
            plus = loss_fn(bumped)
            bumped[i, j] -= 2 * step
            minus = loss_fn(bumped)
            grad[i, j] = (plus - minus) / (2 * step)
    return grad
