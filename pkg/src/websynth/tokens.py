"""Heuristic token estimation and budget-aware truncation.

The default counter splits text into word runs, single CJK characters and
punctuation marks. A word run costs one token per four characters (rounded
up); every CJK character and punctuation mark costs one token. This tracks
common BPE tokenizers closely enough for budgeting without depending on one.
"""

from __future__ import annotations

import re
from functools import lru_cache
from typing import Callable, Protocol

_CJK = r"぀-ヿ㐀-䶿一-鿿가-힯豈-﫿"
_PIECE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+|[^\w\s]", re.UNICODE)
_CJK_CHAR = re.compile(rf"[{_CJK}]")

TRUNCATION_MARKER = "\n[... truncated ...]"


class TokenCounter(Protocol):
    def __call__(self, text: str) -> int: ...


def _piece_cost(piece: str) -> int:
    if len(piece) == 1:
        return 1
    return -(-len(piece) // 4)


@lru_cache(maxsize=1 << 16)
def count_tokens(text: str) -> int:
    # cached: context building recounts the same turn strings at every step
    if not text:
        return 0
    return sum(1 if len(p) == 1 else -(-len(p) // 4) for p in _PIECE.findall(text))


def has_cjk(text: str) -> bool:
    return bool(_CJK_CHAR.search(text))


def _head_cut(text: str, budget: int) -> int:
    """Character offset at which the first `budget` tokens of text end."""
    used = 0
    end = 0
    for m in _PIECE.finditer(text):
        cost = _piece_cost(m.group())
        if used + cost > budget:
            return end
        used += cost
        end = m.end()
    return len(text)


def truncate_head(
    text: str,
    budget: int,
    counter: Callable[[str], int] = count_tokens,
    marker: str = TRUNCATION_MARKER,
) -> tuple[str, bool]:
    """Keep the leading part of text so that the result fits in budget tokens.

    Returns (text, truncated). When truncated the marker is appended and
    its cost is charged against the budget; a budget too small for the
    marker gets a bare cut.
    """
    if counter(text) <= budget:
        return text, False
    if counter(marker) > budget:
        marker = ""
    room = max(0, budget - counter(marker))
    cut = _head_cut(text, room)
    out = text[:cut] + marker
    # custom counters may disagree with the piece walk; shrink until it fits
    while cut > 0 and counter(out) > budget:
        cut = _head_cut(text[:cut], max(0, counter(text[:cut]) - 1))
        out = text[:cut] + marker
    return out, True


def truncate_middle(
    text: str,
    budget: int,
    counter: Callable[[str], int] = count_tokens,
    marker: str = "\n[... truncated ...]\n",
) -> tuple[str, bool]:
    """Keep head and tail halves of text around a marker, within budget tokens."""
    if counter(text) <= budget:
        return text, False
    if counter(marker) > budget:
        return truncate_head(text, budget, counter, "")
    room = max(0, budget - counter(marker))
    head_budget = room // 2
    tail_budget = room - head_budget
    head = text[: _head_cut(text, head_budget)]
    rev = text[::-1]
    tail = rev[: _head_cut(rev, tail_budget)][::-1]
    out = head + marker + tail
    while counter(out) > budget and (head or tail):
        if len(tail) >= len(head):
            tail = tail[1:]
        else:
            head = head[:-1]
        out = head + marker + tail
    return out, True
