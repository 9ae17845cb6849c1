"""String normalization shared by validators and answer matching."""

from __future__ import annotations

import json
import re
import unicodedata

_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Case-fold and collapse whitespace."""
    return _WS.sub(" ", unicodedata.normalize("NFKC", text).casefold()).strip()


def strip_punctuation(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def contains(haystack: str, needle: str) -> bool:
    """Case-insensitive, whitespace-insensitive substring test."""
    n = normalize(needle)
    return bool(n) and n in normalize(haystack)


def find_span(text: str, needle: str) -> tuple[int, int] | None:
    """Character span of needle in text, ignoring case and whitespace runs."""
    words = needle.split()
    if not words:
        return None
    pattern = r"\s+".join(re.escape(w) for w in words)
    m = re.search(pattern, text, flags=re.IGNORECASE)
    return (m.start(), m.end()) if m else None


def extract_json(text: str) -> object | None:
    """Pull the first JSON object or array out of a model reply."""
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```\w*\n?|```$", "", text).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                obj, _ = decoder.raw_decode(text[i:])
                return obj
            except json.JSONDecodeError:
                continue
    return None
