"""ReAct loop with retrospective summarization.

At turn t the teacher sees the question, turns 1..t-2 with their observations
replaced by summaries, and turn t-1 with its raw observation. Once o_t is in,
o_{t-1} is summarized. The stored trajectory keeps every raw observation next
to its summary; summaries only ever replace observations inside a ContextView.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable

from .errors import GatewayError, MalformedAction, MissingSummary, ToolParseError
from .templates import prompt
from .tokens import count_tokens, truncate_head, truncate_middle
from .tools import ToolRegistry

logger = logging.getLogger(__name__)

ANSWERED = "answered"
FORCED_CAP = "forced-cap"
CONTEXT_OVERFLOW = "context-overflow"
ERROR = "error"
TERMINATIONS = (ANSWERED, FORCED_CAP, CONTEXT_OVERFLOW, ERROR)

SUMMARY_MARKER = "[Summary of earlier tool response]"


@dataclass(frozen=True)
class Limits:
    max_tool_calls: int = 200
    context_budget: int = 256_000
    summary_budget: int = 512
    obs_cap: int = 16_000
    malformed_retries: int = 2
    summary_retries: int = 1


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict

    def render(self) -> str:
        return self._rendered

    @cached_property
    def _rendered(self) -> str:
        body = json.dumps({"name": self.name, "arguments": self.arguments}, ensure_ascii=False)
        return f"<tool_call>{body}</tool_call>"

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": self.arguments}


@dataclass
class Turn:
    index: int
    reasoning: str
    tool_call: ToolCall | None = None
    answer: str | None = None
    observation: str | None = None
    summary: str | None = None
    summary_flag: str | None = None  # "truncated" or "fallback"

    def action_text(self) -> str:
        if self.tool_call is not None:
            return self.tool_call.render()
        return f"<answer>{self.answer}</answer>"

    def to_dict(self) -> dict:
        d: dict = {"index": self.index, "reasoning": self.reasoning}
        if self.tool_call is not None:
            d["tool_call"] = self.tool_call.to_dict()
            d["observation"] = self.observation
            d["summary"] = self.summary
            d["summary_flag"] = self.summary_flag
        else:
            d["answer"] = self.answer
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        tc = d.get("tool_call")
        return cls(
            index=d["index"],
            reasoning=d["reasoning"],
            tool_call=ToolCall(tc["name"], tc["arguments"]) if tc else None,
            answer=d.get("answer"),
            observation=d.get("observation"),
            summary=d.get("summary"),
            summary_flag=d.get("summary_flag"),
        )


@dataclass
class Trajectory:
    id: str
    qa_id: str
    question: str
    language: str = "en"
    turns: list[Turn] = field(default_factory=list)
    final_answer: str | None = None
    termination: str | None = None
    tool_call_count: int = 0
    error: str | None = None

    def turn_tokens(self, counter: Callable[[str], int] = count_tokens) -> list[int]:
        return [
            counter(t.reasoning) + counter(t.action_text()) + counter(t.observation or "") for t in self.turns
        ]

    def total_tokens(self, counter: Callable[[str], int] = count_tokens) -> int:
        """Size of the raw, unsummarized trajectory including the question."""
        return counter(self.question) + sum(self.turn_tokens(counter))

    def to_dict(self, counter: Callable[[str], int] = count_tokens) -> dict:
        per_turn = self.turn_tokens(counter)
        return {
            "id": self.id,
            "qa_id": self.qa_id,
            "language": self.language,
            "question": self.question,
            "termination": self.termination,
            "final_answer": self.final_answer,
            "tool_call_count": self.tool_call_count,
            "error": self.error,
            "token_counts": {"per_turn": per_turn, "total": counter(self.question) + sum(per_turn)},
            "turns": [t.to_dict() for t in self.turns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            id=d["id"],
            qa_id=d["qa_id"],
            question=d["question"],
            language=d.get("language", "en"),
            turns=[Turn.from_dict(t) for t in d["turns"]],
            final_answer=d.get("final_answer"),
            termination=d.get("termination"),
            tool_call_count=d.get("tool_call_count", 0),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class ContextEntry:
    index: int
    reasoning: str
    action: str
    text: str
    kind: str  # "summary" or "raw"


@dataclass(frozen=True)
class ContextView:
    question: str
    entries: tuple[ContextEntry, ...]
    budget_used: int

    @property
    def raw_entries(self) -> list[ContextEntry]:
        return [e for e in self.entries if e.kind == "raw"]

    @property
    def summarized_entries(self) -> list[ContextEntry]:
        return [e for e in self.entries if e.kind == "summary"]


def build_context(traj: Trajectory, t: int, counter: Callable[[str], int] = count_tokens) -> ContextView:
    """Context for deciding turn t: summaries for turns < t-1, raw turn t-1."""
    if not 1 <= t <= len(traj.turns) + 1:
        raise ValueError(f"turn {t} outside 1..{len(traj.turns) + 1}")
    entries = []
    used = counter(traj.question)
    for turn in traj.turns[: max(0, t - 2)]:
        if turn.summary is None:
            raise MissingSummary(f"turn {turn.index} has no summary")
        entry = ContextEntry(turn.index, turn.reasoning, turn.action_text(), f"{SUMMARY_MARKER}\n{turn.summary}", "summary")
        entries.append(entry)
    if t >= 2:
        turn = traj.turns[t - 2]
        entries.append(ContextEntry(turn.index, turn.reasoning, turn.action_text(), turn.observation or "", "raw"))
    for e in entries:
        used += counter(e.reasoning) + counter(e.action) + counter(e.text)
    return ContextView(traj.question, tuple(entries), used)


def render_messages(context: ContextView, tools: ToolRegistry, prompts_dir: str | None = None) -> list[dict]:
    messages = [
        {"role": "system", "content": prompt("teacher_system", prompts_dir, tools=tools.describe())},
        {"role": "user", "content": context.question},
    ]
    for e in context.entries:
        messages.append({"role": "assistant", "content": f"<think>{e.reasoning}</think>\n{e.action}"})
        messages.append({"role": "user", "content": f"<tool_response>\n{e.text}\n</tool_response>"})
    return messages


@dataclass(frozen=True)
class Decision:
    reasoning: str
    tool_call: ToolCall | None = None
    answer: str | None = None


_THINK = re.compile(r"<think>(.*?)</think>", re.S)
_TOOL = re.compile(r"<tool_call>(.*?)</tool_call>", re.S)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.S)


def parse_decision(text: str, structured: dict | None, tools: ToolRegistry) -> Decision:
    think = _THINK.search(text)
    tool_m = _TOOL.search(text)
    ans_m = _ANSWER.search(text)
    if think:
        reasoning = think.group(1).strip()
    else:
        first = min((m.start() for m in (tool_m, ans_m) if m), default=len(text))
        reasoning = text[:first].strip()
    if structured is not None:
        call = structured
    elif tool_m and ans_m:
        raise MalformedAction("reply contains both a tool call and an answer")
    elif ans_m:
        answer = ans_m.group(1).strip()
        if not answer:
            raise MalformedAction("empty final answer")
        return Decision(reasoning, answer=answer)
    elif tool_m:
        try:
            call = json.loads(tool_m.group(1))
        except json.JSONDecodeError as exc:
            raise MalformedAction(f"tool call is not JSON: {exc}") from exc
    else:
        raise MalformedAction("reply has neither a tool call nor an answer")
    if not isinstance(call, dict) or not isinstance(call.get("name"), str):
        raise MalformedAction(f"bad tool call {call!r}")
    args = call.get("arguments") or {}
    if not isinstance(args, dict):
        raise MalformedAction(f"tool arguments must be an object: {args!r}")
    tools.validate(call["name"], args)
    return Decision(reasoning, tool_call=ToolCall(call["name"], args))


def decide(context: ContextView, llm, tools: ToolRegistry, prompts_dir: str | None = None) -> Decision:
    """One teacher call, parsed into reasoning plus a tool call or a final answer."""
    try:
        completion = llm.complete(render_messages(context, tools, prompts_dir), tools.function_specs())
    except ToolParseError as exc:
        raise MalformedAction(str(exc)) from exc
    return parse_decision(completion.text, completion.tool_call, tools)


def compress_turn(
    traj: Trajectory,
    index: int,
    summarizer,
    budget: int = 512,
    counter: Callable[[str], int] = count_tokens,
    retries: int = 1,
    prompts_dir: str | None = None,
) -> str:
    """Summarize the observation of turn `index` (1-based) and store it on the turn."""
    turn = traj.turns[index - 1]
    if turn.observation is None:
        raise ValueError(f"turn {index} has no observation to summarize")
    if turn.summary is not None:
        raise ValueError(f"turn {index} is already summarized")
    text = prompt(
        "summarize", prompts_dir, question=traj.question, action=turn.action_text(), observation=turn.observation
    )
    reply = None
    for attempt in range(1 + retries):
        try:
            reply = summarizer.ask(text).strip()
            break
        except GatewayError as exc:
            logger.warning("summary of turn %d failed (attempt %d): %s", index, attempt + 1, exc)
    if reply is None:
        summary, _ = truncate_head(turn.observation, budget, counter)
        flag = "fallback"
    else:
        summary, cut = truncate_head(reply, budget, counter)
        flag = "truncated" if cut else None
    turn.summary = summary
    turn.summary_flag = flag
    return summary


def compress_previous(traj: Trajectory, t: int, summarizer, **kwargs) -> str:
    """Summarize o_{t-1}; call once o_t has been recorded."""
    if t < 2:
        raise ValueError("turn 1 has no predecessor")
    return compress_turn(traj, t - 1, summarizer, **kwargs)


class EventLog:
    """Append-only JSONL sink; each event is flushed as soon as it is written."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def __call__(self, event: dict) -> None:
        self._fh.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def run_trajectory(
    record,
    tools: ToolRegistry,
    teacher,
    summarizer,
    limits: Limits = Limits(),
    *,
    counter: Callable[[str], int] = count_tokens,
    sink: Callable[[dict], None] | None = None,
    trajectory_id: str | None = None,
    require_verified: bool = True,
    prompts_dir: str | None = None,
) -> Trajectory:
    """Solve one QA record with the teacher; never raises for in-loop failures."""
    verdicts = getattr(record, "verdicts", None)
    if require_verified and not (verdicts and verdicts.get("accepted")):
        raise ValueError(f"record {record.id} has not been accepted by verification")
    emit = sink or (lambda e: None)
    traj = Trajectory(
        id=trajectory_id or f"traj-{record.id}",
        qa_id=record.id,
        question=record.question_final,
        language=getattr(record, "language", "en"),
    )
    emit({"event": "start", "trajectory_id": traj.id, "qa_id": traj.qa_id, "question": traj.question,
          "language": traj.language})

    def summarize(index: int) -> None:
        summary = compress_turn(traj, index, summarizer, limits.summary_budget, counter,
                                limits.summary_retries, prompts_dir)
        emit({"event": "compress", "t": index, "summary": summary, "flag": traj.turns[index - 1].summary_flag})

    t = 1
    while True:
        if traj.tool_call_count >= limits.max_tool_calls:
            traj.termination = FORCED_CAP
            break
        ctx = build_context(traj, t, counter)
        if ctx.budget_used > limits.context_budget:
            traj.termination = CONTEXT_OVERFLOW
            break
        decision = None
        for attempt in range(1 + limits.malformed_retries):
            try:
                decision = decide(ctx, teacher, tools, prompts_dir)
                break
            except MalformedAction as exc:
                traj.error = f"malformed action: {exc}"
                logger.info("%s turn %d: %s", traj.id, t, exc)
            except GatewayError as exc:
                traj.error = f"gateway: {exc}"
                break
        if decision is None:
            traj.termination = ERROR
            break
        traj.error = None

        if decision.answer is not None:
            traj.turns.append(Turn(t, decision.reasoning, answer=decision.answer))
            emit({"event": "decide", "t": t, "reasoning": decision.reasoning, "answer": decision.answer})
            traj.final_answer = decision.answer
            traj.termination = ANSWERED
            break

        call = decision.tool_call
        emit({"event": "decide", "t": t, "reasoning": decision.reasoning, "tool_call": call.to_dict()})
        try:
            raw = tools.execute(call.name, call.arguments)
        except Exception as exc:  # a failing tool is an observation, not a crash
            raw = f"Error: {type(exc).__name__}: {exc}"
        observation, _ = truncate_middle(raw, limits.obs_cap, counter)
        traj.turns.append(Turn(t, decision.reasoning, tool_call=call, observation=observation))
        traj.tool_call_count += 1
        emit({"event": "execute", "t": t, "observation": observation})
        if t >= 2:
            summarize(t - 1)
        t += 1

    # every non-final turn keeps both its raw observation and a summary
    for turn in traj.turns[:-1]:
        if turn.observation is not None and turn.summary is None:
            summarize(turn.index)
    emit({"event": "terminate", "termination": traj.termination, "final_answer": traj.final_answer,
          "tool_call_count": traj.tool_call_count, "error": traj.error})
    return traj


def replay_events(events: Iterable[dict]) -> Trajectory:
    """Rebuild a trajectory from its event log (partial logs give partial trajectories)."""
    traj: Trajectory | None = None
    pending: dict[int, Turn] = {}
    for ev in events:
        kind = ev["event"]
        if kind == "start":
            traj = Trajectory(ev["trajectory_id"], ev["qa_id"], ev["question"], ev.get("language", "en"))
        elif traj is None:
            raise ValueError("event log does not begin with a start event")
        elif kind == "decide":
            if "answer" in ev:
                traj.turns.append(Turn(ev["t"], ev["reasoning"], answer=ev["answer"]))
                traj.final_answer = ev["answer"]
            else:
                tc = ev["tool_call"]
                pending[ev["t"]] = Turn(ev["t"], ev["reasoning"], tool_call=ToolCall(tc["name"], tc["arguments"]))
        elif kind == "execute":
            turn = pending.pop(ev["t"])
            turn.observation = ev["observation"]
            traj.turns.append(turn)
            traj.tool_call_count += 1
        elif kind == "compress":
            turn = traj.turns[ev["t"] - 1]
            turn.summary = ev["summary"]
            turn.summary_flag = ev.get("flag")
        elif kind == "terminate":
            traj.termination = ev["termination"]
            traj.error = ev.get("error")
    if traj is None:
        raise ValueError("empty event log")
    return traj


def read_events(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
