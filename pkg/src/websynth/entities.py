"""Theme identification and distillation of a page subgraph into an entity subgraph."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .corpus_graph import WebGraph
from .errors import EmptySubgraph, NoContent, UngroundedTheme
from .sampler import DependencySubgraph
from .templates import prompt
from .textnorm import extract_json, find_span, normalize

logger = logging.getLogger(__name__)

PAGE_LINK_LABEL = "linked page"
DEFAULT_COMPRESSION = 0.2


def entity_id(surface: str) -> str:
    return "e" + hashlib.sha1(normalize(surface).encode("utf-8")).hexdigest()[:10]


@dataclass(frozen=True)
class Theme:
    label: str
    source_node: str
    evidence_span: tuple[int, int]


@dataclass(frozen=True)
class Entity:
    id: str
    surface: str
    source_nodes: tuple[str, ...]
    relation_to_theme: str = ""


@dataclass(frozen=True)
class EntitySubgraph:
    theme: Theme
    entities: dict[str, Entity]
    edges: tuple[tuple[str, str, str], ...]
    provenance: DependencySubgraph
    theme_entity_id: str
    dropped_edges: int = 0

    def non_theme_ids(self) -> list[str]:
        return sorted(e for e in self.entities if e != self.theme_entity_id)

    def edge_pairs(self) -> set[tuple[str, str]]:
        return {(a, b) for a, b, _ in self.edges}

    def connected_to_theme(self) -> set[str]:
        """Non-theme entities in the theme's (undirected) component."""
        adj: dict[str, set[str]] = {e: set() for e in self.entities}
        for a, b, _ in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen = {self.theme_entity_id}
        stack = [self.theme_entity_id]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        seen.discard(self.theme_entity_id)
        return seen

    def serialize(self) -> str:
        lines = ["Entities:"]
        for eid in sorted(self.entities, key=lambda e: (e != self.theme_entity_id, e)):
            ent = self.entities[eid]
            lines.append(f"- {ent.surface}" + (f" ({ent.relation_to_theme})" if ent.relation_to_theme else ""))
        lines.append("Relations:")
        for a, b, label in self.edges:
            lines.append(f"- {self.entities[a].surface} -> {self.entities[b].surface}: {label}")
        return "\n".join(lines)

    def compression_ratio(self, graph: WebGraph) -> float:
        total = sum(len(graph.node(m).content) for m in self.provenance.members)
        return len(self.serialize()) / total if total else float("inf")

    def with_surfaces(self, surfaces: dict[str, str]) -> "EntitySubgraph":
        """Same ids and edges, some surfaces replaced."""
        ents = {eid: replace(e, surface=surfaces.get(eid, e.surface)) for eid, e in self.entities.items()}
        return replace(self, entities=ents)

    def to_dict(self) -> dict:
        return {
            "theme": {
                "label": self.theme.label,
                "source_node": self.theme.source_node,
                "evidence_span": list(self.theme.evidence_span),
            },
            "theme_entity_id": self.theme_entity_id,
            "entities": [
                {
                    "id": e.id,
                    "surface": e.surface,
                    "source_nodes": list(e.source_nodes),
                    "relation_to_theme": e.relation_to_theme,
                }
                for e in (self.entities[k] for k in sorted(self.entities))
            ],
            "edges": [list(e) for e in self.edges],
            "dropped_edges": self.dropped_edges,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntitySubgraph":
        th = d["theme"]
        return cls(
            theme=Theme(th["label"], th["source_node"], tuple(th["evidence_span"])),
            entities={
                e["id"]: Entity(e["id"], e["surface"], tuple(e["source_nodes"]), e.get("relation_to_theme", ""))
                for e in d["entities"]
            },
            edges=tuple((a, b, label) for a, b, label in d["edges"]),
            provenance=DependencySubgraph.from_dict(d["provenance"]),
            theme_entity_id=d["theme_entity_id"],
            dropped_edges=d.get("dropped_edges", 0),
        )


def _parse_theme(text: str) -> str:
    obj = extract_json(text)
    if isinstance(obj, dict) and isinstance(obj.get("theme"), str):
        return " ".join(obj["theme"].split())
    for line in text.splitlines():
        line = line.strip().strip("\"'").strip()
        if line:
            return " ".join(line.split())
    return ""


def identify_theme(
    subgraph: DependencySubgraph, graph: WebGraph, llm, prompts_dir: str | None = None
) -> Theme:
    page = graph.node(subgraph.seed)
    if not page.content.strip():
        raise NoContent(subgraph.seed)
    reply = llm.ask(
        prompt("theme", prompts_dir, url=page.url, title=page.title, page_content=page.content)
    )
    label = _parse_theme(reply)
    if not label:
        raise UngroundedTheme("model returned an empty theme")
    span = find_span(page.content, label)
    if span is None:
        raise UngroundedTheme(f"{label!r} does not occur in the seed page")
    return Theme(label=label, source_node=subgraph.seed, evidence_span=span)


@dataclass
class _PageExtraction:
    page: str
    entities: list[tuple[str, str]] = field(default_factory=list)  # (surface, relation)
    relations: list[tuple[str, str, str]] = field(default_factory=list)


def _parse_extraction(page: str, text: str, max_entities: int) -> _PageExtraction:
    out = _PageExtraction(page)
    obj = extract_json(text)
    if isinstance(obj, list):
        obj = {"entities": obj}
    if not isinstance(obj, dict):
        logger.warning("page %s: extraction reply is not JSON", page)
        return out
    for item in obj.get("entities") or []:
        if isinstance(item, str):
            item = {"surface": item}
        if not isinstance(item, dict):
            continue
        surface = " ".join(str(item.get("surface", "")).split())
        if surface:
            out.entities.append((surface, " ".join(str(item.get("relation", "")).split())))
        if len(out.entities) >= max_entities:
            break
    for rel in obj.get("relations") or []:
        if isinstance(rel, dict) and rel.get("source") and rel.get("target"):
            out.relations.append((str(rel["source"]), str(rel["target"]), str(rel.get("label", "related to"))))
    return out


def extract_entity_subgraph(
    subgraph: DependencySubgraph,
    theme: Theme,
    graph: WebGraph,
    llm,
    *,
    max_entities: int = 6,
    max_workers: int = 1,
    prompts_dir: str | None = None,
) -> EntitySubgraph:
    """Ask for entities page by page, merge them, and keep only sound edges.

    An edge (a, b) is sound when some page of a and some page of b are the
    same page or are joined by an edge of the dependency subgraph. Page links
    are projected onto the pages' main subjects (first entity listed; the
    theme for the seed page).
    """
    def run(page_id: str) -> _PageExtraction:
        page = graph.node(page_id)
        reply = llm.ask(
            prompt(
                "extract",
                prompts_dir,
                theme=theme.label,
                url=page.url,
                title=page.title,
                page_content=page.content,
                max_entities=max_entities,
            )
        )
        return _parse_extraction(page_id, reply, max_entities)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            extractions = list(pool.map(run, subgraph.members))
    else:
        extractions = [run(m) for m in subgraph.members]

    theme_id = entity_id(theme.label)
    surfaces: dict[str, str] = {theme_id: theme.label}
    relations: dict[str, str] = {theme_id: ""}
    sources: dict[str, list[str]] = {theme_id: [subgraph.seed]}
    order = [theme_id]
    subject: dict[str, str] = {subgraph.seed: theme_id}

    for ex in extractions:
        for i, (surface, relation) in enumerate(ex.entities):
            eid = entity_id(surface)
            if eid not in surfaces:
                surfaces[eid] = surface
                relations[eid] = relation
                sources[eid] = []
                order.append(eid)
            if ex.page not in sources[eid]:
                sources[eid].append(ex.page)
            if i == 0 and ex.page not in subject:
                subject[ex.page] = eid

    if len(order) == 1:
        raise EmptySubgraph(f"no entities extracted for seed {subgraph.seed}")

    entities = {
        eid: Entity(eid, surfaces[eid], tuple(sorted(sources[eid])), relations[eid]) for eid in order
    }

    def sound(a: str, b: str) -> bool:
        return any(subgraph.connected(pa, pb) for pa in sources[a] for pb in sources[b])

    edges: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str]] = set()
    dropped = 0
    for ex in extractions:
        for src, dst, label in ex.relations:
            a, b = entity_id(src), entity_id(dst)
            if a not in entities or b not in entities or a == b or not sound(a, b):
                dropped += 1
                continue
            if (a, b) not in seen:
                seen.add((a, b))
                edges.append((a, b, label))
    for p, q in subgraph.induced_edges:
        a, b = subject.get(p), subject.get(q)
        if a and b and a != b and (a, b) not in seen:
            seen.add((a, b))
            edges.append((a, b, PAGE_LINK_LABEL))

    if dropped:
        logger.debug("seed %s: dropped %d unsound edges", subgraph.seed, dropped)
    return EntitySubgraph(
        theme=theme,
        entities=entities,
        edges=tuple(edges),
        provenance=subgraph,
        theme_entity_id=theme_id,
        dropped_edges=dropped,
    )
