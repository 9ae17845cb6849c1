"""Agent tools: a local BM25 index over the corpus, a page fetcher, and
clients for external search/fetch services sharing the same tool schemas."""

from __future__ import annotations

import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Any, Callable, Mapping

import httpx

from .corpus_graph import WebGraph
from .errors import ExternalUnavailable, MalformedAction, NotFound, UnknownTool
from .tokens import TRUNCATION_MARKER, count_tokens, truncate_head

K1 = 1.2
B = 0.75
DEFAULT_OBS_CAP = 16_000
SNIPPET_RADIUS = 120

_CJK_RUN = re.compile(r"[぀-ヿ㐀-䶿一-鿿가-힯豈-﫿]+")
_ALNUM_RUN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs; CJK runs become overlapping character bigrams."""
    out: list[str] = []
    for run in _ALNUM_RUN.findall(text.lower()):
        pos = 0
        for m in _CJK_RUN.finditer(run):
            if m.start() > pos:
                out.append(run[pos : m.start()])
            cjk = m.group()
            if len(cjk) == 1:
                out.append(cjk)
            else:
                out.extend(cjk[i : i + 2] for i in range(len(cjk) - 1))
            pos = m.end()
        if pos < len(run):
            out.append(run[pos:])
    return out


@dataclass(frozen=True)
class SearchResult:
    node_id: str
    title: str
    url: str
    snippet: str
    score: float


@dataclass
class SearchIndex:
    postings: dict[str, dict[str, int]]  # term -> {node id: term frequency}
    doc_lengths: dict[str, int]
    avg_length: float
    graph: WebGraph

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1 + (self.doc_count - df + 0.5) / (df + 0.5))


def build_index(graph: WebGraph) -> SearchIndex:
    postings: dict[str, dict[str, int]] = {}
    lengths: dict[str, int] = {}
    for nid in sorted(graph.nodes):
        page = graph.nodes[nid]
        terms = tokenize(f"{page.title}\n{page.content}")
        lengths[nid] = len(terms)
        for term, tf in Counter(terms).items():
            postings.setdefault(term, {})[nid] = tf
    avg = sum(lengths.values()) / len(lengths) if lengths else 0.0
    return SearchIndex(postings=postings, doc_lengths=lengths, avg_length=avg, graph=graph)


def _snippet(content: str, terms: list[str], index: SearchIndex) -> str:
    best = max(terms, key=lambda t: (index.idf(t), t), default=None)
    pos = content.lower().find(best) if best else -1
    if pos < 0:
        return " ".join(content[: 2 * SNIPPET_RADIUS].split())
    start = max(0, pos - SNIPPET_RADIUS)
    end = min(len(content), pos + len(best) + SNIPPET_RADIUS)
    text = " ".join(content[start:end].split())
    return ("..." if start else "") + text + ("..." if end < len(content) else "")


def search(index: SearchIndex, query: str, top_n: int = 10) -> list[SearchResult]:
    """BM25 ranking (k1=1.2, b=0.75) over unique query terms; ties by node id."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    terms = sorted(set(t for t in tokenize(query) if t in index.postings))
    scores: dict[str, float] = {}
    for term in terms:
        idf = index.idf(term)
        for nid, tf in index.postings[term].items():
            norm = K1 * (1 - B + B * index.doc_lengths[nid] / (index.avg_length or 1.0))
            scores[nid] = scores.get(nid, 0.0) + idf * tf * (K1 + 1) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    results = []
    for nid, score in ranked:
        page = index.graph.nodes[nid]
        matched = [t for t in terms if nid in index.postings[t]]
        results.append(SearchResult(nid, page.title, page.url, _snippet(page.content, matched, index), score))
    return results


def format_results(results: list[SearchResult]) -> str:
    if not results:
        return "No results found."
    blocks = []
    for i, r in enumerate(results, 1):
        blocks.append(f"[{i}] {r.title}\nURL: {r.url}\n{r.snippet}")
    return "\n\n".join(blocks)


def cap_observation(text: str, cap: int = DEFAULT_OBS_CAP, counter: Callable[[str], int] = count_tokens) -> str:
    return truncate_head(text, cap, counter, TRUNCATION_MARKER)[0]


class _TextExtractor(HTMLParser):
    _SKIP = {"script", "style", "noscript", "head"}
    _BLOCK = {"p", "div", "br", "li", "tr", "h1", "h2", "h3", "h4", "h5", "h6", "section", "article",
              "header", "footer", "table", "ul", "ol", "blockquote", "pre", "title"}

    def __init__(self) -> None:
        super().__init__()
        self.lines: list[str] = []
        self._current: list[str] = []
        self._depth = 0

    def _break(self) -> None:
        line = " ".join(" ".join(self._current).split())
        if line:
            self.lines.append(line)
        self._current = []

    def handle_starttag(self, tag: str, attrs: Any) -> None:
        if tag in self._SKIP:
            self._depth += 1
        elif tag in self._BLOCK:
            self._break()

    def handle_endtag(self, tag: str) -> None:
        if tag in self._SKIP and self._depth:
            self._depth -= 1
        elif tag in self._BLOCK:
            self._break()

    def handle_data(self, data: str) -> None:
        if not self._depth:
            self._current.append(data)


def html_to_text(html: str) -> str:
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    parser._break()
    return "\n".join(parser.lines)


@dataclass
class ExternalConfig:
    search_endpoint: str | None = None
    fetch_endpoint: str | None = None  # None fetches the target URL directly
    api_key_env: str | None = None
    timeout: float = 30.0


class ExternalClient:
    """Live search and fetch. Search expects JSON ``{"results": [{title, url, snippet}]}``."""

    def __init__(self, config: ExternalConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(follow_redirects=True)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env) if self.config.api_key_env else None
        return {"Authorization": f"Bearer {key}"} if key else {}

    def search(self, query: str, top_n: int = 10) -> list[SearchResult]:
        if not self.config.search_endpoint:
            raise ExternalUnavailable("no search endpoint configured")
        try:
            resp = self._client.post(
                self.config.search_endpoint,
                json={"query": query, "top_n": top_n},
                headers=self._headers(),
                timeout=self.config.timeout,
            )
            resp.raise_for_status()
            rows = resp.json().get("results", [])
        except (httpx.HTTPError, ValueError, AttributeError) as exc:
            raise ExternalUnavailable(f"search failed: {exc}") from exc
        return [
            SearchResult(r.get("url", ""), r.get("title", ""), r.get("url", ""), r.get("snippet", ""), float(r.get("score", 0.0)))
            for r in rows[:top_n]
        ]

    def fetch(self, url: str) -> str:
        try:
            if self.config.fetch_endpoint:
                resp = self._client.post(
                    self.config.fetch_endpoint, json={"url": url}, headers=self._headers(), timeout=self.config.timeout
                )
            else:
                resp = self._client.get(url, timeout=self.config.timeout)
        except httpx.HTTPError as exc:
            raise ExternalUnavailable(f"fetch failed: {exc}") from exc
        if resp.status_code == 404:
            raise NotFound(url)
        if resp.status_code >= 400:
            raise ExternalUnavailable(f"fetch failed: HTTP {resp.status_code}")
        if "html" in resp.headers.get("content-type", ""):
            return html_to_text(resp.text)
        return resp.text


def fetch_page(source: WebGraph | ExternalClient, target: str, cap: int = DEFAULT_OBS_CAP,
               counter: Callable[[str], int] = count_tokens) -> str:
    """Page text for a node id or URL, capped at `cap` tokens."""
    if isinstance(source, WebGraph):
        page = source.resolve(target)
        if page is None:
            raise NotFound(target)
        text = page.content
    else:
        text = source.fetch(target)
    return cap_observation(text, cap, counter)


@dataclass(frozen=True)
class ToolSchema:
    name: str
    parameters: Mapping[str, Mapping[str, Any]]  # JSON-schema style properties
    required: tuple[str, ...]
    description: str

    def as_function(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": {k: dict(v) for k, v in self.parameters.items()},
                "required": list(self.required),
            },
        }


SEARCH_SCHEMA = ToolSchema(
    name="search",
    parameters={
        "query": {"type": "string", "description": "keywords to search for"},
        "top_n": {"type": "integer", "description": "number of results (default 5)"},
    },
    required=("query",),
    description="Search the web and return ranked results with titles, URLs and snippets.",
)
FETCH_SCHEMA = ToolSchema(
    name="fetch",
    parameters={"url": {"type": "string", "description": "URL of the page to read"}},
    required=("url",),
    description="Fetch a web page and return its text.",
)

_JSON_TYPES = {"string": str, "integer": int, "number": (int, float), "boolean": bool, "object": dict, "array": list}


@dataclass
class ToolRegistry:
    schemas: dict[str, ToolSchema] = field(default_factory=dict)
    handlers: dict[str, Callable[..., str]] = field(default_factory=dict)

    def register(self, schema: ToolSchema, handler: Callable[..., str]) -> None:
        if schema.name in self.schemas:
            raise ValueError(f"tool {schema.name!r} already registered")
        self.schemas[schema.name] = schema
        self.handlers[schema.name] = handler

    def validate(self, name: str, arguments: Mapping[str, Any]) -> None:
        schema = self.schemas.get(name)
        if schema is None:
            raise MalformedAction(f"unknown tool {name!r}")
        for req in schema.required:
            if req not in arguments:
                raise MalformedAction(f"tool {name!r} is missing argument {req!r}")
        for key, value in arguments.items():
            spec = schema.parameters.get(key)
            if spec is None:
                raise MalformedAction(f"tool {name!r} has no argument {key!r}")
            expected = _JSON_TYPES.get(spec.get("type", ""), object)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise MalformedAction(f"argument {key!r} of {name!r} should be {spec.get('type')}")

    def execute(self, name: str, arguments: Mapping[str, Any]) -> str:
        if name not in self.handlers:
            raise UnknownTool(name)
        return self.handlers[name](**arguments)

    def function_specs(self) -> list[dict]:
        return [self.schemas[n].as_function() for n in sorted(self.schemas)]

    def describe(self) -> str:
        lines = []
        for name in sorted(self.schemas):
            s = self.schemas[name]
            params = ", ".join(f"{k}: {v.get('type')}" for k, v in s.parameters.items())
            lines.append(f"- {name}({params}): {s.description}")
        return "\n".join(lines)


def local_registry(graph: WebGraph, index: SearchIndex | None = None, obs_cap: int = DEFAULT_OBS_CAP,
                   counter: Callable[[str], int] = count_tokens, default_top_n: int = 5) -> ToolRegistry:
    """search + fetch served entirely from the ingested corpus (no network)."""
    index = index or build_index(graph)
    reg = ToolRegistry()

    def do_search(query: str, top_n: int = default_top_n) -> str:
        return cap_observation(format_results(search(index, query, max(1, top_n))), obs_cap, counter)

    def do_fetch(url: str) -> str:
        try:
            return fetch_page(graph, url, obs_cap, counter)
        except NotFound:
            return f"Error: page not found: {url}"

    reg.register(SEARCH_SCHEMA, do_search)
    reg.register(FETCH_SCHEMA, do_fetch)
    return reg


def external_registry(client: ExternalClient, obs_cap: int = DEFAULT_OBS_CAP,
                      counter: Callable[[str], int] = count_tokens, default_top_n: int = 5) -> ToolRegistry:
    reg = ToolRegistry()

    def do_search(query: str, top_n: int = default_top_n) -> str:
        try:
            return cap_observation(format_results(client.search(query, max(1, top_n))), obs_cap, counter)
        except ExternalUnavailable as exc:
            return f"Error: {exc}"

    def do_fetch(url: str) -> str:
        try:
            return fetch_page(client, url, obs_cap, counter)
        except (NotFound, ExternalUnavailable) as exc:
            return f"Error: {type(exc).__name__}: {exc}"

    reg.register(SEARCH_SCHEMA, do_search)
    reg.register(FETCH_SCHEMA, do_fetch)
    return reg
