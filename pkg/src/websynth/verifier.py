"""Rejection sampling on two criteria: closed-book difficulty and oracle solvability."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import GatewayError
from .qa import QARecord
from .templates import prompt
from .textnorm import normalize, strip_punctuation

logger = logging.getLogger(__name__)

MATCH_MODES = ("normalized-exact", "judge")

TOO_EASY = "too-easy"
UNSOLVABLE = "unsolvable"


@dataclass(frozen=True)
class MatchConfig:
    mode: str = "normalized-exact"
    judge: object | None = None  # gateway handle, judge mode only
    prompts_dir: str | None = None


@dataclass
class Verdict:
    difficulty_pass: bool
    solvability_pass: bool
    closed_book_answers: list[tuple[int, str, bool]] = field(default_factory=list)
    oracle_answers: list[tuple[int, str, bool]] = field(default_factory=list)
    judge_mode: str = "normalized-exact"

    @property
    def accepted(self) -> bool:
        return self.difficulty_pass and self.solvability_pass

    @property
    def reasons(self) -> list[str]:
        out = []
        if not self.difficulty_pass:
            out.append(TOO_EASY)
        if not self.solvability_pass:
            out.append(UNSOLVABLE)
        return out

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "difficulty_pass": self.difficulty_pass,
            "solvability_pass": self.solvability_pass,
            "closed_book_answers": [list(a) for a in self.closed_book_answers],
            "oracle_answers": [list(a) for a in self.oracle_answers],
            "judge_mode": self.judge_mode,
        }


def _norm_answer(text: str) -> str:
    return normalize(strip_punctuation(text))


def match_answer(prediction: str, gold: str, mode: str = "normalized-exact", judge=None,
                 question: str = "", prompts_dir: str | None = None) -> bool:
    if mode == "normalized-exact":
        return _norm_answer(prediction) == _norm_answer(gold) and bool(_norm_answer(gold))
    if mode == "judge":
        if judge is None:
            raise ValueError("judge mode needs a judge handle")
        reply = judge.ask(prompt("judge", prompts_dir, question=question, gold=gold, prediction=prediction))
        return normalize(reply).lstrip("\"'*").startswith("yes")
    raise ValueError(f"unknown match mode {mode!r}")


def _attempt(record: QARecord, base, text: str, match: MatchConfig, i: int) -> tuple[int, str, bool]:
    pred = base.ask(text).strip()
    ok = match_answer(pred, record.answer, match.mode, match.judge, record.question_final, match.prompts_dir)
    return (i, pred, ok)


def _closed_book(record: QARecord, base, match: MatchConfig, attempts: int) -> list[tuple[int, str, bool]]:
    text = prompt("closed_book", match.prompts_dir, question=record.question_final)
    return [_attempt(record, base, text, match, i) for i in range(1, attempts + 1)]


def _oracle(record: QARecord, base, match: MatchConfig, attempts: int) -> list[tuple[int, str, bool]]:
    text = prompt(
        "oracle",
        match.prompts_dir,
        question=record.question_final,
        entity_graph=record.entity_subgraph.serialize(),
    )
    return [_attempt(record, base, text, match, i) for i in range(1, attempts + 1)]


def check_difficulty(record: QARecord, base, judge: MatchConfig = MatchConfig(), attempts: int = 1) -> bool:
    """True when no closed-book attempt reproduces the answer."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    return not any(ok for _, _, ok in _closed_book(record, base, judge, attempts))


def check_solvability(record: QARecord, base, judge: MatchConfig = MatchConfig(), attempts: int = 1) -> bool:
    """True when at least one attempt given the entity subgraph finds the answer."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    return any(ok for _, _, ok in _oracle(record, base, judge, attempts))


def verify(record: QARecord, closed_book, oracle, match: MatchConfig = MatchConfig(), attempts: int = 1) -> Verdict:
    """Run both criteria; both always run so every verdict is complete."""
    cb = _closed_book(record, closed_book, match, attempts)
    orc = _oracle(record, oracle, match, attempts)
    return Verdict(
        difficulty_pass=not any(ok for _, _, ok in cb),
        solvability_pass=any(ok for _, _, ok in orc),
        closed_book_answers=cb,
        oracle_answers=orc,
        judge_mode=match.mode,
    )


@dataclass
class BatchResult:
    accepted: list[QARecord] = field(default_factory=list)
    rejected: list[tuple[QARecord, list[str]]] = field(default_factory=list)
    held: list[tuple[QARecord, str]] = field(default_factory=list)


def filter_batch(
    candidates: list[QARecord],
    closed_book,
    oracle=None,
    match: MatchConfig = MatchConfig(),
    attempts: int = 1,
    max_workers: int = 1,
) -> BatchResult:
    """Split candidates into accepted, rejected (with reasons) and held.

    A record whose verification hit a gateway failure is held: it appears in
    neither list and can be verified again later.
    """
    oracle = oracle or closed_book

    def one(rec: QARecord):
        try:
            return verify(rec, closed_book, oracle, match, attempts)
        except GatewayError as exc:
            logger.warning("record %s held: %s", rec.id, exc)
            return exc

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            outcomes = list(pool.map(one, candidates))
    else:
        outcomes = [one(r) for r in candidates]

    result = BatchResult()
    for rec, out in zip(candidates, outcomes):
        if isinstance(out, GatewayError):
            result.held.append((rec, str(out)))
            continue
        rec.verdicts = out.to_dict()
        if out.accepted:
            result.accepted.append(rec)
        else:
            result.rejected.append((rec, out.reasons))
    return result
