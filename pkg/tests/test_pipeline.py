import filecmp
import json
import shutil
from pathlib import Path

import pytest
import yaml

from websynth.cli import main
from websynth.config import load_config
from websynth.fixture import build_fixture, write_fixture
from websynth.gateway import MockBackend
from websynth.pipeline import STAGES, Pipeline, read_jsonl

BUNDLED = Path(__file__).resolve().parent.parent / "fixtures"


def outputs(out_dir):
    """Every produced file except the stage reports, which carry wall-clock timings."""
    return sorted(p.relative_to(out_dir) for p in Path(out_dir).rglob("*") if p.is_file() and p.parent.name != "reports")


def same_tree(a, b):
    fa, fb = outputs(a), outputs(b)
    return fa == fb and all(filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False) for f in fa)


@pytest.fixture
def fx(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    write_fixture(tmp_path)
    return tmp_path


def test_bundled_fixture_matches_generator(tmp_path):
    write_fixture(tmp_path)
    for name in ("corpus.jsonl", "mock_script.jsonl", "pipeline.yaml"):
        assert (BUNDLED / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_fixture_questions_are_distinct():
    _, script, _ = build_fixture()
    finals = [r["match"][0] for r in script if r["role"] == "teacher"]
    uniq = sorted(set(finals))
    for a in uniq:
        assert not any(a != b and a in b for b in uniq)


def test_stage_by_stage_equals_all(fx, tmp_path_factory):
    assert main(["all", "--config", str(fx / "pipeline.yaml")]) == 0
    other = tmp_path_factory.mktemp("staged")
    for stage in STAGES:
        assert main([stage, "--config", str(fx / "pipeline.yaml"), "--output-dir", str(other / "out")]) == 0
    assert same_tree(fx / "out", other / "out")


def test_parallel_output_identical(fx, tmp_path_factory):
    assert main(["all", "--config", str(fx / "pipeline.yaml")]) == 0
    other = tmp_path_factory.mktemp("par")
    assert main(["all", "--config", str(fx / "pipeline.yaml"), "--parallel", "4", "--output-dir", str(other / "out")]) == 0
    assert same_tree(fx / "out", other / "out")


def test_reports_and_reject_funnel(fx):
    cfg = load_config(fx / "pipeline.yaml")
    pipe = Pipeline(cfg)
    results = pipe.run("all")
    assert [r.stage for r in results] == list(STAGES)
    h = cfg.config_hash()
    for stage in STAGES:
        rep = json.loads((cfg.out / "reports" / f"{stage}.json").read_text())
        assert rep["config_hash"] == h and rep["wall_time_s"] >= 0
        for art in rep["artifacts"]:
            assert (cfg.out / art).exists()
    qa = json.loads((cfg.out / "reports" / "synth-qa.json").read_text())
    assert qa["rejects"] == {"answer-leak": 1, "hop-constraint": 2, "ungrounded-theme": 1}
    ver = json.loads((cfg.out / "reports" / "verify.json").read_text())
    assert ver["rejects"] == {"too-easy": 4, "unsolvable": 3}
    rejected = read_jsonl(cfg.out / "verify" / "rejected.jsonl")
    assert all(r["reasons"] and not r["verdicts"]["accepted"] for r in rejected)
    accepted = read_jsonl(cfg.out / "verify" / "accepted.jsonl")
    assert not {r["id"] for r in accepted} & {r["id"] for r in rejected}
    for r in accepted:
        assert r["answer"] == r["entity_subgraph"]["theme"]["label"]
    manifest = json.loads((cfg.out / "dataset" / "train.manifest.json").read_text())
    assert manifest["config_hash"] == h and manifest["created_at"] == "2023-11-14T22:13:20Z"
    # accounting: every logged call belongs to a stage invocation
    calls = pipe.gateway.calls_by_role()
    assert calls["closed_book"] == calls["oracle"] == 36
    assert calls["theme"] == 40


def test_idempotent_rerun_makes_no_calls(fx):
    cfg = load_config(fx / "pipeline.yaml")
    Pipeline(cfg).run("all")
    before = {f: (cfg.out / f).read_bytes() for f in outputs(cfg.out)}
    again = Pipeline(cfg)
    results = again.run("all")
    assert again.gateway.calls == []
    assert all(r.report["items_in"] == r.report["skipped"] for r in results)
    assert {f: (cfg.out / f).read_bytes() for f in outputs(cfg.out)} == before


def test_force_redoes_stage(fx):
    cfg = load_config(fx / "pipeline.yaml")
    Pipeline(cfg).run("all")
    pipe = Pipeline(cfg, force=True)
    rep = pipe.run("verify")[0].report
    assert rep["skipped"] == 0 and pipe.gateway.calls_by_role()["closed_book"] == 36


def test_held_items_retried_later(fx):
    cfg = load_config(fx / "pipeline.yaml")
    script = MockBackend.from_file(fx / "mock_script.jsonl")._records
    target = next(r for r in script if r["role"] == "closed_book")
    flaky = [{"role": "closed_book", "match": target["match"], "response": {"raise": "transport"}}] * 3 + script
    (fx / "flaky.jsonl").write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in flaky))
    raw = yaml.safe_load((fx / "pipeline.yaml").read_text())
    raw["roles"]["default"]["retry"] = {"attempts": 3, "backoff": 0}
    raw["roles"]["default"]["script"] = "flaky.jsonl"
    (fx / "flaky.yaml").write_text(yaml.safe_dump(raw))
    cfg = load_config(fx / "flaky.yaml")
    pipe = Pipeline(cfg)
    pipe.run("ingest"), pipe.run("synth-qa")
    rep = pipe.run("verify")[0].report
    assert rep["held"] == 1 and rep["items_in"] == 36
    assert len(read_jsonl(cfg.out / "verify" / "held.jsonl")) == 1
    # the transport failures were consumed; a second pass verifies the held record
    rep2 = pipe.run("verify")[0].report
    assert rep2["held"] == 0 and rep2["skipped"] == 35
    assert read_jsonl(cfg.out / "verify" / "held.jsonl") == []


def test_cli_exit_codes(fx, capsys):
    cfg = str(fx / "pipeline.yaml")
    assert main(["verify", "--config", cfg]) == 3
    assert main(["ingest", "--config", cfg, "--k", "-1"]) == 2
    assert main(["ingest", "--config", str(fx / "nope.yaml")]) == 2
    assert main(["ingest", "--config", cfg, "--corpus", "missing.jsonl"]) == 1
    capsys.readouterr()
    assert main(["ingest", "--config", cfg]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["ingest"]["duplicates_dropped"] == 1 and line["ingest"]["malformed_skipped"] == 1


def test_cli_overrides_change_hash(fx):
    cfg = str(fx / "pipeline.yaml")
    out = fx / "out"
    assert main(["ingest", "--config", cfg]) == 0
    base_hash = json.loads((out / "reports" / "ingest.json").read_text())["config_hash"]
    assert main(["synth-qa", "--config", cfg, "--num-seeds", "5"]) == 0
    report = json.loads((out / "reports" / "synth-qa.json").read_text())
    assert report["items_in"] == 5 and report["config_hash"] != base_hash
    assert len(read_jsonl(out / "qa" / "candidates.jsonl")) + len(read_jsonl(out / "qa" / "rejected.jsonl")) == 5


def test_make_fixture_command(tmp_path, capsys):
    assert main(["make-fixture", str(tmp_path / "fx")]) == 0
    assert (tmp_path / "fx" / "corpus.jsonl").exists()
    shutil.rmtree(tmp_path / "fx")
