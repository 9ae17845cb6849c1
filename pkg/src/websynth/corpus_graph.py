"""Load a line-delimited page archive into an immutable directed web graph."""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping
from urllib.parse import urljoin, urlsplit, urlunsplit

from .errors import EmptyArchive, MalformedRecord, UnknownNode, UnreadableArchive

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = ("jsonl", "jsonl.gz")


def canonicalize_url(url: str, base: str | None = None) -> str:
    """Lowercase scheme and host, drop the fragment, normalize the trailing slash.

    The root path is always "/"; any other path loses its trailing slash.
    """
    url = url.strip()
    if base is not None:
        url = urljoin(base, url)
    parts = urlsplit(url)
    path = parts.path
    if not path or path == "/":
        path = "/"
    else:
        path = path.rstrip("/") or "/"
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), path, parts.query, ""))


def node_id_for(canonical_url: str) -> str:
    return hashlib.sha1(canonical_url.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class PageNode:
    id: str
    url: str
    title: str
    content: str
    outlinks: tuple[str, ...] = ()


@dataclass(frozen=True)
class IngestReport:
    pages_read: int = 0
    nodes_kept: int = 0
    duplicates_dropped: int = 0
    malformed_skipped: int = 0
    dangling_links_dropped: int = 0
    repeated_links_dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "pages_read": self.pages_read,
            "nodes_kept": self.nodes_kept,
            "duplicates_dropped": self.duplicates_dropped,
            "malformed_skipped": self.malformed_skipped,
            "dangling_links_dropped": self.dangling_links_dropped,
            "repeated_links_dropped": self.repeated_links_dropped,
        }


@dataclass(frozen=True)
class WebGraph:
    nodes: Mapping[str, PageNode]
    edge_count: int
    ingest_report: IngestReport = field(default_factory=IngestReport)
    url_index: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> PageNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def resolve(self, target: str) -> PageNode | None:
        """Look a page up by node id or by (any spelling of) its URL."""
        if target in self.nodes:
            return self.nodes[target]
        try:
            nid = self.url_index.get(canonicalize_url(target))
        except ValueError:
            return None
        return self.nodes.get(nid) if nid else None

    def edges(self) -> Iterator[tuple[str, str]]:
        for nid in sorted(self.nodes):
            for dst in self.nodes[nid].outlinks:
                yield nid, dst

    def outdegree(self, node_id: str) -> int:
        return len(self.node(node_id).outlinks)


def build_graph(records: list[dict]) -> WebGraph:
    """Materialize a WebGraph from already-parsed page records.

    Records lacking a url or content are skipped; if every record is bad
    MalformedRecord is raised, and EmptyArchive if there were none at all.
    """
    pages_read = len(records)
    malformed = 0
    duplicates = 0
    kept: dict[str, tuple[str, str, str, list[str]]] = {}  # canonical url -> fields
    for rec in records:
        if not isinstance(rec, dict):
            malformed += 1
            continue
        url, content = rec.get("url"), rec.get("content")
        if not isinstance(url, str) or not url.strip() or not isinstance(content, str) or not content.strip():
            malformed += 1
            continue
        try:
            canon = canonicalize_url(url)
        except ValueError:
            malformed += 1
            continue
        if canon in kept:
            duplicates += 1
            continue
        title = rec.get("title") if isinstance(rec.get("title"), str) else ""
        raw_links = rec.get("outlinks") or []
        links = [l for l in raw_links if isinstance(l, str)] if isinstance(raw_links, list) else []
        kept[canon] = (canon, title, content, links)

    if not kept:
        if pages_read and malformed == pages_read:
            raise MalformedRecord(f"all {pages_read} records are malformed")
        raise EmptyArchive("archive contains no valid pages")

    url_index = {canon: node_id_for(canon) for canon in kept}
    nodes: dict[str, PageNode] = {}
    dangling = 0
    repeated = 0
    edge_count = 0
    # single sequential pass resolving links now that every url is known
    for canon, (url, title, content, links) in kept.items():
        resolved: list[str] = []
        seen: set[str] = set()
        for link in links:
            try:
                target = url_index.get(canonicalize_url(link, base=url))
            except ValueError:
                target = None
            if target is None:
                dangling += 1
                continue
            if target in seen:
                repeated += 1
                continue
            seen.add(target)
            resolved.append(target)
        nid = url_index[canon]
        nodes[nid] = PageNode(id=nid, url=url, title=title, content=content, outlinks=tuple(resolved))
        edge_count += len(resolved)

    report = IngestReport(
        pages_read=pages_read,
        nodes_kept=len(nodes),
        duplicates_dropped=duplicates,
        malformed_skipped=malformed,
        dangling_links_dropped=dangling,
        repeated_links_dropped=repeated,
    )
    return WebGraph(
        nodes=MappingProxyType(nodes),
        edge_count=edge_count,
        ingest_report=report,
        url_index=MappingProxyType(url_index),
    )


def _read_lines(path: Path, fmt: str) -> list[str]:
    try:
        if fmt == "jsonl.gz":
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                return fh.read().splitlines()
        return path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError, EOFError) as exc:
        raise UnreadableArchive(f"cannot read {path}: {exc}") from exc


def load_archive(path: str | Path, format: str = "jsonl") -> WebGraph:
    """Read a page archive (one JSON record per line) and build its graph."""
    if format not in SUPPORTED_FORMATS:
        raise UnreadableArchive(f"unsupported archive format {format!r}")
    path = Path(path)
    if not path.exists():
        raise UnreadableArchive(f"no such archive: {path}")
    records: list[object] = []
    for lineno, line in enumerate(_read_lines(path, format), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            logger.warning("%s:%d: not valid JSON, skipped", path, lineno)
            records.append(None)
    graph = build_graph(records)  # type: ignore[arg-type]
    logger.info("ingested %s: %s", path, graph.ingest_report.to_dict())
    return graph


def out_neighbors(graph: WebGraph, node: str) -> list[str]:
    return list(graph.node(node).outlinks)


def graph_to_records(graph: WebGraph) -> list[dict]:
    """Snapshot a graph as archive records whose links are already resolved."""
    rows = []
    for nid in sorted(graph.nodes):
        page = graph.nodes[nid]
        rows.append(
            {
                "url": page.url,
                "title": page.title,
                "content": page.content,
                "outlinks": [graph.nodes[d].url for d in page.outlinks],
            }
        )
    return rows
