import random

import pytest

from conftest import toy_record
from websynth.gateway import mock_gateway
from websynth.verifier import (
    TOO_EASY,
    UNSOLVABLE,
    MatchConfig,
    check_difficulty,
    check_solvability,
    filter_batch,
    match_answer,
    verify,
)


def test_match_normalized_exact():
    assert match_answer("  the answer. ", "The Answer")
    assert match_answer("Ada-Quill", "AdaQuill")
    assert not match_answer("Ada", "Ada Quill")
    assert not match_answer("", "")


def test_match_judge_mode():
    gw = mock_gateway([{"role": "judge", "match": "Candidate answer: A.Q.", "response": "Yes, same person."},
                       {"role": "judge", "response": "no"}])
    judge = gw.handle("judge")
    assert match_answer("A.Q.", "Ada Quill", "judge", judge, "who?")
    assert not match_answer("Bob", "Ada Quill", "judge", judge, "who?")
    with pytest.raises(ValueError):
        match_answer("x", "y", "judge")
    with pytest.raises(ValueError):
        match_answer("x", "y", "fuzzy")


def script(rec, closed_correct, oracle_correct):
    return [
        {"role": "closed_book", "match": rec.question_final, "sticky": True,
         "response": rec.answer if closed_correct else "No idea"},
        {"role": "oracle", "match": rec.question_final, "sticky": True,
         "response": rec.answer if oracle_correct else "Unknown"},
    ]


@pytest.mark.parametrize("cb, orc", [(False, True), (True, True), (False, False), (True, False)])
def test_quadrants(cb, orc):
    rec = toy_record(random.Random(1), "Which one is meant here?")
    gw = mock_gateway(script(rec, cb, orc))
    v = verify(rec, gw.handle("closed_book"), gw.handle("oracle"))
    assert v.accepted == (not cb and orc)
    assert v.difficulty_pass == (not cb) and v.solvability_pass == orc
    assert v.reasons == ([TOO_EASY] if cb else []) + ([] if orc else [UNSOLVABLE])
    # both criteria always run
    assert gw.calls_by_role() == {"closed_book": 1, "oracle": 1}


def test_attempt_semantics():
    rec = toy_record(random.Random(2), "Which one?")
    cb = mock_gateway([{"role": "closed_book", "response": "nope"}, {"role": "closed_book", "response": rec.answer},
                       {"role": "closed_book", "response": "nope"}])
    assert not check_difficulty(rec, cb.handle("closed_book"), attempts=3)
    orc = mock_gateway([{"role": "oracle", "response": "nope"}, {"role": "oracle", "response": rec.answer}])
    assert check_solvability(rec, orc.handle("oracle"), attempts=2)
    with pytest.raises(ValueError):
        check_difficulty(rec, cb.handle("closed_book"), attempts=0)


def test_oracle_sees_entity_graph():
    rec = toy_record(random.Random(3), "Which one?")
    first_surface = rec.entity_subgraph.entities[rec.entity_subgraph.non_theme_ids()[0]].surface
    gw = mock_gateway([{"role": "oracle", "match": ["Entity graph:", first_surface], "response": rec.answer}])
    assert check_solvability(rec, gw.handle("oracle"), MatchConfig())


def test_filter_batch_holds_gateway_failures():
    rng = random.Random(4)
    recs = [toy_record(rng, f"Question number {i}?") for i in range(6)]
    records = []
    for i, r in enumerate(recs[:5]):
        records += script(r, closed_correct=(i == 1), oracle_correct=(i != 2))
    records.append({"role": "closed_book", "match": recs[5].question_final, "response": {"raise": "transport"},
                    "sticky": True})
    gw = mock_gateway(records)
    for workers in (1, 3):
        res = filter_batch(recs, gw.handle("closed_book"), gw.handle("oracle"), max_workers=workers)
        assert [r.question_final for r in res.accepted] == [recs[i].question_final for i in (0, 3, 4)]
        assert [(r.question_final, why) for r, why in res.rejected] == [
            (recs[1].question_final, [TOO_EASY]), (recs[2].question_final, [UNSOLVABLE])]
        assert [r for r, _ in res.held] == [recs[5]]
        assert all(r.verdicts["accepted"] for r in res.accepted)
