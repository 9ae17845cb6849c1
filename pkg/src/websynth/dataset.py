"""Training-data export from trajectories, dataset manifests, and difficulty statistics.

Exported samples condition on the raw observations only. Summaries exist to
keep the teacher's context clean during synthesis and never reach the
student's training context.
"""

from __future__ import annotations

import hashlib
import json
import os
import statistics
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .errors import EmptySet, IncompleteTrajectory, WriteFailure
from .templates import prompt
from .tokens import count_tokens
from .tools import FETCH_SCHEMA, SEARCH_SCHEMA, ToolRegistry
from .trajectory import ANSWERED, ToolCall, Trajectory

SCHEMES = ("full-sequence", "per-turn")
TOOL_CALL_BUCKETS = (0, 5, 10, 20, 50, 100, 200)
TOKEN_BUCKETS = (0, 1_000, 4_000, 16_000, 64_000, 256_000)


def default_system_prompt() -> str:
    reg = ToolRegistry()
    reg.register(SEARCH_SCHEMA, lambda **_: "")
    reg.register(FETCH_SCHEMA, lambda **_: "")
    return prompt("teacher_system", tools=reg.describe())


@dataclass(frozen=True)
class RawTurn:
    reasoning: str
    tool_call: ToolCall
    observation: str


@dataclass(frozen=True)
class TrainingSample:
    sample_id: str
    qa_id: str
    trajectory_id: str
    question: str
    answer: str
    language: str
    scheme: str
    turn_index: int
    context: tuple[RawTurn, ...]
    target_reasoning: str
    target_tool_call: ToolCall | None = None
    target_answer: str | None = None

    def to_record(self, system_prompt: str) -> dict:
        messages: list[dict] = [
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": self.question},
        ]
        for turn in self.context:
            messages.append({"role": "assistant", "content": "", "reasoning": turn.reasoning,
                             "tool_call": turn.tool_call.to_dict()})
            messages.append({"role": "tool", "content": turn.observation})
        if self.target_tool_call is not None:
            messages.append({"role": "assistant", "content": "", "reasoning": self.target_reasoning,
                             "tool_call": self.target_tool_call.to_dict()})
        else:
            messages.append({"role": "assistant", "content": self.target_answer, "reasoning": self.target_reasoning})
        return {
            "id": self.sample_id,
            "qa_id": self.qa_id,
            "trajectory_id": self.trajectory_id,
            "language": self.language,
            "scheme": self.scheme,
            "turn": self.turn_index,
            "answer": self.answer,
            "messages": messages,
        }


def parse_record(record: dict) -> tuple[str, list[RawTurn], dict]:
    """Inverse of ``to_record``: (question, raw context turns, target message)."""
    msgs = record["messages"]
    question = msgs[1]["content"]
    body, target = msgs[2:-1], msgs[-1]
    turns = []
    for call_msg, tool_msg in zip(body[0::2], body[1::2]):
        tc = call_msg["tool_call"]
        turns.append(RawTurn(call_msg["reasoning"], ToolCall(tc["name"], tc["arguments"]), tool_msg["content"]))
    return question, turns, target


def export_training_samples(
    trajectory: Trajectory,
    scheme: str = "full-sequence",
    answer: str | None = None,
    include_unfinished: bool = False,
) -> list[TrainingSample]:
    """One sample per trajectory (full-sequence) or one per turn (per-turn).

    Trajectories that did not end with an answer yield nothing unless
    include_unfinished is set.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if trajectory.termination != ANSWERED and not include_unfinished:
        return []
    if not trajectory.turns:
        return []
    raw: list[RawTurn] = []
    for turn in trajectory.turns:
        if turn.tool_call is not None:
            if turn.observation is None:
                raise IncompleteTrajectory(f"{trajectory.id} turn {turn.index} has no observation")
            raw.append(RawTurn(turn.reasoning, turn.tool_call, turn.observation))
    gold = answer if answer is not None else (trajectory.final_answer or "")

    def sample(t: int) -> TrainingSample:
        target = trajectory.turns[t - 1]
        return TrainingSample(
            sample_id=f"{trajectory.id}:{scheme}:{t}",
            qa_id=trajectory.qa_id,
            trajectory_id=trajectory.id,
            question=trajectory.question,
            answer=gold,
            language=trajectory.language,
            scheme=scheme,
            turn_index=t,
            context=tuple(raw[: t - 1]),
            target_reasoning=target.reasoning,
            target_tool_call=target.tool_call,
            target_answer=target.answer,
        )

    if scheme == "per-turn":
        return [sample(t) for t in range(1, len(trajectory.turns) + 1)]
    return [sample(len(trajectory.turns))]


@dataclass
class DatasetManifest:
    file: str
    sample_count: int
    languages: dict[str, int]
    source_trajectories: list[str]
    config_hash: str
    created_at: str
    schemes: list[str] = field(default_factory=list)
    sha256: str = ""

    def to_dict(self) -> dict:
        return {
            "file": self.file,
            "sample_count": self.sample_count,
            "languages": dict(sorted(self.languages.items())),
            "schemes": self.schemes,
            "source_trajectories": self.source_trajectories,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
            "sha256": self.sha256,
        }


def creation_timestamp() -> str:
    """UTC now, or SOURCE_DATE_EPOCH when set (reproducible builds)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.manifest.json")


def write_dataset(
    samples: list[TrainingSample],
    path: str | Path,
    language: str | None = None,
    *,
    config_hash: str = "",
    created_at: str | None = None,
    system_prompt: str | None = None,
) -> DatasetManifest:
    """Write one JSON conversation per line plus ``<stem>.manifest.json``.

    If language is given only samples in that language are written.
    """
    if language is not None:
        samples = [s for s in samples if s.language == language]
    if not samples:
        raise ValueError("no samples to write")
    path = Path(path)
    system_prompt = system_prompt if system_prompt is not None else default_system_prompt()
    lines = [json.dumps(s.to_record(system_prompt), ensure_ascii=False) for s in samples]
    payload = "".join(line + "\n" for line in lines)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(payload, encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc
    manifest = DatasetManifest(
        file=path.name,
        sample_count=len(lines),
        languages=dict(Counter(s.language for s in samples)),
        source_trajectories=sorted({s.trajectory_id for s in samples}),
        config_hash=config_hash,
        created_at=created_at or creation_timestamp(),
        schemes=sorted({s.scheme for s in samples}),
        sha256=hashlib.sha256(payload.encode("utf-8")).hexdigest(),
    )
    try:
        manifest_path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(f"cannot write manifest for {path}: {exc}") from exc
    return manifest


def _percentile90(values: list[float]) -> float:
    if len(values) == 1:
        return float(values[0])
    return statistics.quantiles(values, n=10, method="inclusive")[8]


def _aggregate(values: list[float]) -> dict[str, float]:
    return {
        "mean": statistics.fmean(values),
        "median": float(statistics.median(values)),
        "p90": _percentile90(values),
        "min": float(min(values)),
        "max": float(max(values)),
    }


def _histogram(values: Iterable[float], edges: tuple[int, ...]) -> list[dict]:
    values = list(values)
    buckets = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        n = sum(1 for v in values if v >= lo and (hi is None or v < hi))
        buckets.append({"lo": lo, "hi": hi, "count": n})
    return buckets


@dataclass
class StatsRow:
    trajectory_id: str
    qa_id: str
    language: str
    termination: str
    tool_calls: int
    tokens: int


@dataclass
class DatasetStats:
    rows: list[StatsRow]
    tool_calls: dict[str, float]
    tokens: dict[str, float]
    tool_call_histogram: list[dict]
    token_histogram: list[dict]

    def to_tsv(self) -> str:
        out = ["trajectory_id\tqa_id\tlanguage\ttermination\ttool_calls\ttokens"]
        for r in self.rows:
            out.append(f"{r.trajectory_id}\t{r.qa_id}\t{r.language}\t{r.termination}\t{r.tool_calls}\t{r.tokens}")
        return "\n".join(out) + "\n"

    def summary(self) -> dict:
        return {
            "trajectories": len(self.rows),
            "tool_calls": self.tool_calls,
            "tokens": self.tokens,
            "tool_call_histogram": self.tool_call_histogram,
            "token_histogram": self.token_histogram,
        }


def compute_stats(trajectories: list[Trajectory], counter: Callable[[str], int] = count_tokens) -> DatasetStats:
    """Per-trajectory tool calls and raw token totals, with mean/median/p90.

    p90 interpolates linearly between order statistics (the "inclusive"
    quantile definition).
    """
    if not trajectories:
        raise EmptySet("no trajectories")
    rows = [
        StatsRow(t.id, t.qa_id, t.language, t.termination or "", t.tool_call_count, t.total_tokens(counter))
        for t in trajectories
    ]
    calls = [r.tool_calls for r in rows]
    toks = [r.tokens for r in rows]
    return DatasetStats(
        rows=rows,
        tool_calls=_aggregate(calls),
        tokens=_aggregate(toks),
        tool_call_histogram=_histogram(calls, TOOL_CALL_BUCKETS),
        token_histogram=_histogram(toks, TOKEN_BUCKETS),
    )
