"""Question generation, entity obfuscation and question rewriting."""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field

from .entities import EntitySubgraph
from .errors import AnswerLeak, HopConstraintViolation, ParaphraseLeak, SurfaceLeak
from .templates import prompt
from .textnorm import contains
from .tokens import has_cjk

DEFAULT_MIN_HOPS = 2
DEFAULT_RATIO = 0.7
DEFAULT_PARAPHRASE_ATTEMPTS = 3


@dataclass(frozen=True)
class ObfuscationEntry:
    original_surface: str
    fuzzy_description: str


@dataclass(frozen=True)
class ObfuscationMap:
    entries: dict[str, ObfuscationEntry]
    ratio: float

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "entries": {
                k: {"original_surface": v.original_surface, "fuzzy_description": v.fuzzy_description}
                for k, v in sorted(self.entries.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObfuscationMap":
        return cls(
            entries={
                k: ObfuscationEntry(v["original_surface"], v["fuzzy_description"])
                for k, v in d["entries"].items()
            },
            ratio=d["ratio"],
        )


@dataclass
class QARecord:
    id: str
    seed: str
    question_initial: str
    question_final: str
    answer: str
    entity_subgraph: EntitySubgraph
    fuzzy_subgraph: EntitySubgraph
    obfuscation: ObfuscationMap
    language: str = "en"
    verdicts: dict | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed": self.seed,
            "language": self.language,
            "answer": self.answer,
            "question_initial": self.question_initial,
            "question_final": self.question_final,
            "obfuscation": self.obfuscation.to_dict(),
            "entity_subgraph": self.entity_subgraph.to_dict(),
            "fuzzy_subgraph": self.fuzzy_subgraph.to_dict(),
            "verdicts": self.verdicts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QARecord":
        return cls(
            id=d["id"],
            seed=d["seed"],
            question_initial=d["question_initial"],
            question_final=d["question_final"],
            answer=d["answer"],
            entity_subgraph=EntitySubgraph.from_dict(d["entity_subgraph"]),
            fuzzy_subgraph=EntitySubgraph.from_dict(d["fuzzy_subgraph"]),
            obfuscation=ObfuscationMap.from_dict(d["obfuscation"]),
            language=d.get("language", "en"),
            verdicts=d.get("verdicts"),
        )


def record_id(seed: str, answer: str, question: str) -> str:
    return "qa-" + hashlib.sha1(f"{seed}\x00{answer}\x00{question}".encode("utf-8")).hexdigest()[:12]


def language_of(*texts: str) -> str:
    return "zh" if any(has_cjk(t) for t in texts) else "en"


def mentioned_entities(question: str, es: EntitySubgraph) -> list[str]:
    return [eid for eid in es.non_theme_ids() if contains(question, es.entities[eid].surface)]


def _clean(reply: str) -> str:
    return " ".join(reply.strip().strip("\"'“”").split())


def generate_initial_question(
    es: EntitySubgraph, llm, min_hops: int = DEFAULT_MIN_HOPS, prompts_dir: str | None = None
) -> str:
    reachable = es.connected_to_theme()
    if len(reachable) < min_hops:
        raise HopConstraintViolation(
            f"only {len(reachable)} entities connect to the theme, need {min_hops}"
        )
    question = _clean(
        llm.ask(
            prompt(
                "generate",
                prompts_dir,
                theme=es.theme.label,
                entity_graph=es.serialize(),
                min_hops=min_hops,
            )
        )
    )
    if contains(question, es.theme.label):
        raise AnswerLeak(f"question names the answer {es.theme.label!r}")
    mentions = mentioned_entities(question, es)
    if len(mentions) < min_hops:
        raise HopConstraintViolation(f"question mentions {len(mentions)} entities, need {min_hops}")
    return question


def obfuscate_entities(
    es: EntitySubgraph,
    ratio: float,
    llm,
    rng_seed: int | str,
    attempts: int = DEFAULT_PARAPHRASE_ATTEMPTS,
    prompts_dir: str | None = None,
) -> tuple[EntitySubgraph, ObfuscationMap]:
    """Replace ceil(ratio * n) randomly chosen non-theme entities by vague descriptions.

    n counts non-theme entities only; the theme is the answer and is never
    obfuscated.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    candidates = es.non_theme_ids()
    count = math.ceil(ratio * len(candidates))
    chosen = sorted(random.Random(rng_seed).sample(candidates, count))
    entries: dict[str, ObfuscationEntry] = {}
    for eid in chosen:
        ent = es.entities[eid]
        for _ in range(attempts):
            desc = _clean(
                llm.ask(prompt("obfuscate", prompts_dir, entity=ent.surface, relation=ent.relation_to_theme or "related to the topic"))
            )
            if desc and not contains(desc, ent.surface):
                entries[eid] = ObfuscationEntry(ent.surface, desc)
                break
        else:
            raise ParaphraseLeak(f"no leak-free description of {ent.surface!r} after {attempts} attempts")
    fuzzy = es.with_surfaces({eid: e.fuzzy_description for eid, e in entries.items()})
    return fuzzy, ObfuscationMap(entries, len(entries) / len(candidates) if candidates else 0.0)


def obfuscate_question(
    question_initial: str,
    fuzzy: EntitySubgraph,
    obfuscation: ObfuscationMap,
    llm,
    prompts_dir: str | None = None,
) -> str:
    replacements = "\n".join(
        f"- {e.original_surface} -> {e.fuzzy_description}" for _, e in sorted(obfuscation.entries.items())
    )
    question = _clean(
        llm.ask(
            prompt(
                "rewrite",
                prompts_dir,
                question=question_initial,
                replacements=replacements,
                fuzzy_graph=fuzzy.serialize(),
                theme=fuzzy.theme.label,
            )
        )
    )
    if contains(question, fuzzy.theme.label):
        raise AnswerLeak(f"rewritten question names the answer {fuzzy.theme.label!r}")
    leaked = [e.original_surface for e in obfuscation.entries.values() if contains(question, e.original_surface)]
    if leaked:
        raise SurfaceLeak(f"rewritten question still names {leaked}")
    return question


@dataclass
class LeakReport:
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def leakage_check(record: QARecord) -> LeakReport:
    """Final containment gate over a fully built record; never raises."""
    report = LeakReport()
    if contains(record.question_final, record.answer):
        report.violations.append("answer-leak")
    for eid, entry in sorted(record.obfuscation.entries.items()):
        if contains(record.question_final, entry.original_surface):
            report.violations.append(f"surface-leak:{eid}")
    if record.answer != record.entity_subgraph.theme.label:
        report.violations.append("answer-mismatch")
    if (
        record.fuzzy_subgraph.edges != record.entity_subgraph.edges
        or set(record.fuzzy_subgraph.entities) != set(record.entity_subgraph.entities)
    ):
        report.violations.append("structure-mismatch")
    return report
