"""Seed sampling and breadth-first expansion into dependency subgraphs."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from functools import cached_property

from .corpus_graph import WebGraph
from .errors import NoEligibleSeed, UnknownNode

SEED_MODES = ("uniform", "min-outdegree")
EXPANSION_POLICIES = ("bfs", "one-hop")
DEFAULT_K = 8


@dataclass(frozen=True)
class SeedPolicy:
    mode: str = "uniform"
    min_outdegree: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in SEED_MODES:
            raise ValueError(f"unknown seed mode {self.mode!r}")
        if self.min_outdegree < 0:
            raise ValueError("min_outdegree must be >= 0")


@dataclass(frozen=True)
class DependencySubgraph:
    seed: str
    members: tuple[str, ...]
    induced_edges: tuple[tuple[str, str], ...]
    k_requested: int
    expansion_policy: str = "bfs"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "members": list(self.members),
            "induced_edges": [list(e) for e in self.induced_edges],
            "k_requested": self.k_requested,
            "expansion_policy": self.expansion_policy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DependencySubgraph":
        return cls(
            seed=d["seed"],
            members=tuple(d["members"]),
            induced_edges=tuple((a, b) for a, b in d["induced_edges"]),
            k_requested=d["k_requested"],
            expansion_policy=d.get("expansion_policy", "bfs"),
        )

    def connected(self, a: str, b: str) -> bool:
        """True when a == b or an induced edge joins them in either direction."""
        if a == b:
            return True
        return (a, b) in self._edge_set or (b, a) in self._edge_set

    @cached_property
    def _edge_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.induced_edges)


def eligible_seeds(graph: WebGraph, policy: SeedPolicy) -> list[str]:
    ids = sorted(graph.nodes)
    if policy.mode == "min-outdegree":
        ids = [n for n in ids if len(graph.nodes[n].outlinks) >= policy.min_outdegree]
    return [n for n in ids if graph.nodes[n].content.strip()]


def sample_seed(graph: WebGraph, policy: SeedPolicy) -> str:
    pool = eligible_seeds(graph, policy)
    if not pool:
        raise NoEligibleSeed(f"no node satisfies {policy}")
    return random.Random(policy.rng_seed).choice(pool)


def sample_seeds(graph: WebGraph, policy: SeedPolicy, n: int) -> list[str]:
    """Draw up to n distinct seeds in draw order.

    The draw is a seeded shuffle of the eligible pool, so a larger n only
    appends seeds to a smaller n's result.
    """
    pool = eligible_seeds(graph, policy)
    if not pool:
        raise NoEligibleSeed(f"no node satisfies {policy}")
    random.Random(policy.rng_seed).shuffle(pool)
    return pool[:n]


def expand(graph: WebGraph, seed: str, k: int = DEFAULT_K, policy: str = "bfs") -> DependencySubgraph:
    """Collect up to k non-seed nodes reachable from seed.

    Neighbours are taken in stored outlink order and the frontier is
    processed first-in first-out, so the result is fully deterministic.
    """
    if seed not in graph.nodes:
        raise UnknownNode(seed)
    if k < 0:
        raise ValueError("k must be >= 0")
    if policy not in EXPANSION_POLICIES:
        raise ValueError(f"unknown expansion policy {policy!r}")

    members = [seed]
    seen = {seed}
    frontier = deque([seed])
    while frontier and len(members) - 1 < k:
        current = frontier.popleft()
        for nxt in graph.nodes[current].outlinks:
            if len(members) - 1 >= k:
                break
            if nxt in seen:
                continue
            seen.add(nxt)
            members.append(nxt)
            frontier.append(nxt)
        if policy == "one-hop":
            break

    induced = tuple(
        (src, dst) for src in members for dst in graph.nodes[src].outlinks if dst in seen
    )
    return DependencySubgraph(
        seed=seed,
        members=tuple(members),
        induced_edges=induced,
        k_requested=k,
        expansion_policy=policy,
    )
