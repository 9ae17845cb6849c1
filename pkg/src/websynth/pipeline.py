"""Stage runner. Every stage reads its upstream artifacts from disk and writes
its own, so stages can be re-run independently; finished items are skipped
by id unless ``force`` is set."""

from __future__ import annotations

import json
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .config import PipelineConfig
from .corpus_graph import WebGraph, build_graph, graph_to_records, load_archive
from .dataset import compute_stats, creation_timestamp, export_training_samples, manifest_path, write_dataset
from .entities import extract_entity_subgraph, identify_theme
from .errors import (
    AnswerLeak,
    EmptySubgraph,
    GatewayError,
    HopConstraintViolation,
    MissingUpstream,
    NoContent,
    ParaphraseLeak,
    SurfaceLeak,
    UngroundedTheme,
)
from .gateway import Gateway, RoleConfig
from .qa import (
    QARecord,
    generate_initial_question,
    language_of,
    leakage_check,
    obfuscate_entities,
    obfuscate_question,
    record_id,
)
from .sampler import SeedPolicy, expand, sample_seeds
from .tools import ExternalClient, ExternalConfig, external_registry, local_registry
from .trajectory import EventLog, Limits, Trajectory, run_trajectory
from .verifier import MatchConfig, filter_batch

logger = logging.getLogger(__name__)

STAGES = ("ingest", "synth-qa", "verify", "synth-traj", "export", "stats")
ROLES = ("theme", "extract", "generate", "obfuscate", "rewrite", "closed_book", "oracle", "judge", "teacher", "summarizer")


class RejectReason(str, Enum):
    NO_CONTENT = "no-content"
    UNGROUNDED_THEME = "ungrounded-theme"
    EMPTY_SUBGRAPH = "empty-subgraph"
    NOT_COMPRESSED = "not-compressed"
    HOP_CONSTRAINT = "hop-constraint"
    ANSWER_LEAK = "answer-leak"
    PARAPHRASE_LEAK = "paraphrase-leak"
    SURFACE_LEAK = "surface-leak"
    LEAKAGE_CHECK = "leakage-check"
    TOO_EASY = "too-easy"
    UNSOLVABLE = "unsolvable"
    NOT_ANSWERED = "not-answered"


_QA_ERRORS: Sequence[tuple[type[Exception], RejectReason]] = (
    (NoContent, RejectReason.NO_CONTENT),
    (UngroundedTheme, RejectReason.UNGROUNDED_THEME),
    (EmptySubgraph, RejectReason.EMPTY_SUBGRAPH),
    (HopConstraintViolation, RejectReason.HOP_CONSTRAINT),
    (AnswerLeak, RejectReason.ANSWER_LEAK),
    (ParaphraseLeak, RejectReason.PARAPHRASE_LEAK),
    (SurfaceLeak, RejectReason.SURFACE_LEAK),
)


class QARejected(Exception):
    def __init__(self, reason: RejectReason, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


@dataclass
class StageResult:
    stage: str
    artifacts: list[str]
    report: dict
    ok: bool = True


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    tmp.replace(path)


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def gateway_from_config(cfg: PipelineConfig) -> Gateway:
    roles = {name: RoleConfig.from_dict(name, rc) for name, rc in cfg.roles.items()}
    return Gateway(roles, base_dir=cfg.base_dir)


class Pipeline:
    def __init__(self, cfg: PipelineConfig, gateway: Gateway | None = None, force: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.gateway = gateway or gateway_from_config(cfg)
        self.force = force
        self.config_hash = cfg.config_hash()
        self.out = cfg.out
        self._graph: WebGraph | None = None

    # -- layout ---------------------------------------------------------
    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    @property
    def graph_path(self) -> Path:
        return self.path("ingest", "graph.jsonl")

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.cfg.parallel > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.cfg.parallel) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def _finish(self, stage: str, started: float, artifacts: list[Path], **counts: Any) -> StageResult:
        report = {
            "stage": stage,
            "config_hash": self.config_hash,
            **counts,
            "wall_time_s": round(time.perf_counter() - started, 3),
            "artifacts": [str(p.relative_to(self.out)) for p in artifacts],
        }
        write_json(self.path("reports", f"{stage}.json"), report)
        logger.info("%s: %s", stage, {k: v for k, v in report.items() if k != "artifacts"})
        return StageResult(stage, [str(p) for p in artifacts], report)

    def _clear(self, *parts: str) -> None:
        target = self.path(*parts)
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()

    def _require(self, path: Path, stage: str) -> None:
        if not path.exists():
            raise MissingUpstream(f"{path} not found; run the {stage!r} stage first")

    # -- stages ---------------------------------------------------------
    def ingest(self) -> StageResult:
        started = time.perf_counter()
        report_path = self.path("ingest", "ingest_report.json")
        if self.graph_path.exists() and not self.force:
            return self._finish("ingest", started, [self.graph_path, report_path], items_in=1, items_out=0, skipped=1)
        graph = load_archive(self.cfg.resolve(self.cfg.corpus.path), self.cfg.corpus.format)
        write_jsonl(self.graph_path, graph_to_records(graph))
        write_json(report_path, {**graph.ingest_report.to_dict(), "edge_count": graph.edge_count,
                                 "config_hash": self.config_hash})
        self._graph = graph
        return self._finish("ingest", started, [self.graph_path, report_path], items_in=1, items_out=1, skipped=0,
                            ingest=graph.ingest_report.to_dict())

    def graph(self) -> WebGraph:
        if self._graph is None:
            self._require(self.graph_path, "ingest")
            self._graph = build_graph(read_jsonl(self.graph_path))
        return self._graph

    def seeds(self) -> list[str]:
        s = self.cfg.sampler
        policy = SeedPolicy(s.seed_policy, s.min_outdegree, self.cfg.rng_seed)
        return sample_seeds(self.graph(), policy, s.num_seeds)

    def synthesize_one(self, seed: str) -> QARecord:
        """Seed page to leakage-checked QA record; raises QARejected or GatewayError."""
        cfg, gw, graph = self.cfg, self.gateway, self.graph()
        pd = str(cfg.resolve(cfg.prompts_dir)) if cfg.prompts_dir else None
        try:
            sub = expand(graph, seed, cfg.sampler.k, cfg.sampler.expansion)
            theme = identify_theme(sub, graph, gw.handle("theme"), pd)
            es = extract_entity_subgraph(sub, theme, graph, gw.handle("extract"),
                                         max_entities=cfg.qa.max_entities, prompts_dir=pd)
            ratio = es.compression_ratio(graph)
            if ratio > cfg.qa.compression_fraction:
                raise QARejected(RejectReason.NOT_COMPRESSED, f"entity subgraph is {ratio:.1%} of page text")
            q_init = generate_initial_question(es, gw.handle("generate"), cfg.qa.min_hops, pd)
            fuzzy, omap = obfuscate_entities(es, cfg.qa.obfuscation_ratio, gw.handle("obfuscate"),
                                             f"{cfg.rng_seed}:{seed}", cfg.qa.paraphrase_attempts, pd)
            q_final = obfuscate_question(q_init, fuzzy, omap, gw.handle("rewrite"), pd)
        except tuple(e for e, _ in _QA_ERRORS) as exc:
            reason = next(r for e, r in _QA_ERRORS if isinstance(exc, e))
            raise QARejected(reason, str(exc)) from exc
        record = QARecord(
            id=record_id(seed, theme.label, q_final),
            seed=seed,
            question_initial=q_init,
            question_final=q_final,
            answer=theme.label,
            entity_subgraph=es,
            fuzzy_subgraph=fuzzy,
            obfuscation=omap,
            language=language_of(theme.label, q_final),
        )
        leaks = leakage_check(record)
        if not leaks.passed:
            raise QARejected(RejectReason.LEAKAGE_CHECK, ",".join(leaks.violations))
        return record

    def synth_qa(self) -> StageResult:
        started = time.perf_counter()
        cand_path, rej_path = self.path("qa", "candidates.jsonl"), self.path("qa", "rejected.jsonl")
        if self.force:
            self._clear("qa")
        seeds = self.seeds()
        done: dict[str, tuple[str, dict]] = {}
        for row in read_jsonl(cand_path):
            done[row["seed"]] = ("ok", row)
        for row in read_jsonl(rej_path):
            done[row["seed"]] = ("rejected", row)
        todo = [s for s in seeds if s not in done]

        def one(seed: str):
            try:
                return ("ok", self.synthesize_one(seed).to_dict())
            except QARejected as exc:
                return ("rejected", {"seed": seed, "reason": exc.reason.value, "detail": exc.detail})
            except GatewayError as exc:
                logger.warning("seed %s held: %s", seed, exc)
                return ("held", {"seed": seed, "detail": str(exc)})

        held = 0
        for seed, (status, row) in zip(todo, self._map(one, todo)):
            if status == "held":
                held += 1
            else:
                done[seed] = (status, row)
        if todo:
            order = seeds + [s for s in done if s not in seeds]
            write_jsonl(cand_path, (done[s][1] for s in order if s in done and done[s][0] == "ok"))
            write_jsonl(rej_path, (done[s][1] for s in order if s in done and done[s][0] == "rejected"))
        rejects: dict[str, int] = {}
        for status, row in done.values():
            if status == "rejected":
                rejects[row["reason"]] = rejects.get(row["reason"], 0) + 1
        return self._finish(
            "synth-qa", started, [cand_path, rej_path],
            items_in=len(seeds), items_out=sum(1 for s, _ in done.values() if s == "ok"),
            skipped=len(seeds) - len(todo), held=held, rejects=dict(sorted(rejects.items())),
        )

    def verify(self) -> StageResult:
        started = time.perf_counter()
        cand_path = self.path("qa", "candidates.jsonl")
        self._require(cand_path, "synth-qa")
        acc_path, rej_path, held_path = (self.path("verify", n) for n in ("accepted.jsonl", "rejected.jsonl", "held.jsonl"))
        if self.force:
            self._clear("verify")
        candidates = [QARecord.from_dict(r) for r in read_jsonl(cand_path)]
        done: dict[str, dict] = {r["id"]: r for r in read_jsonl(acc_path) + read_jsonl(rej_path)}
        todo = [c for c in candidates if c.id not in done]
        pd = str(self.cfg.resolve(self.cfg.prompts_dir)) if self.cfg.prompts_dir else None
        match = MatchConfig(
            mode=self.cfg.verify.judge_mode,
            judge=self.gateway.handle("judge") if self.cfg.verify.judge_mode == "judge" else None,
            prompts_dir=pd,
        )
        result = filter_batch(todo, self.gateway.handle("closed_book"), self.gateway.handle("oracle"),
                              match, self.cfg.verify.attempts, self.cfg.parallel)
        for rec in result.accepted:
            done[rec.id] = rec.to_dict()
        for rec, reasons in result.rejected:
            done[rec.id] = {**rec.to_dict(), "reasons": reasons}
        if todo:
            ordered = [done[c.id] for c in candidates if c.id in done]
            write_jsonl(acc_path, (r for r in ordered if r["verdicts"]["accepted"]))
            write_jsonl(rej_path, (r for r in ordered if not r["verdicts"]["accepted"]))
            write_jsonl(held_path, ({"id": rec.id, "detail": d} for rec, d in result.held))
        rejects: dict[str, int] = {}
        for r in done.values():
            for reason in r.get("reasons", []):
                rejects[reason] = rejects.get(reason, 0) + 1
        return self._finish(
            "verify", started, [acc_path, rej_path, held_path],
            items_in=len(candidates), items_out=sum(1 for r in done.values() if r["verdicts"]["accepted"]),
            skipped=len(candidates) - len(todo), held=len(result.held), rejects=dict(sorted(rejects.items())),
        )

    def tool_registry(self):
        t = self.cfg.trajectory
        if t.tools == "external":
            return external_registry(ExternalClient(ExternalConfig(**t.external)), t.obs_cap,
                                     default_top_n=t.search_top_n)
        return local_registry(self.graph(), obs_cap=t.obs_cap, default_top_n=t.search_top_n)

    def limits(self) -> Limits:
        t = self.cfg.trajectory
        return Limits(t.max_tool_calls, t.context_budget, t.summary_budget, t.obs_cap,
                      t.malformed_retries, t.summary_retries)

    def synth_traj(self) -> StageResult:
        started = time.perf_counter()
        acc_path = self.path("verify", "accepted.jsonl")
        self._require(acc_path, "verify")
        traj_path = self.path("trajectories", "trajectories.jsonl")
        if self.force:
            self._clear("trajectories")
        records = [QARecord.from_dict(r) for r in read_jsonl(acc_path)]
        done = {r["qa_id"]: r for r in read_jsonl(traj_path)}
        todo = [r for r in records if r.id not in done]
        tools = self.tool_registry() if todo else None
        limits = self.limits()
        pd = str(self.cfg.resolve(self.cfg.prompts_dir)) if self.cfg.prompts_dir else None

        def one(rec: QARecord) -> dict:
            tid = f"traj-{rec.id}"
            log = EventLog(self.path("trajectories", "events", f"{tid}.jsonl"))
            try:
                traj = run_trajectory(rec, tools, self.gateway.handle("teacher"), self.gateway.handle("summarizer"),
                                      limits, sink=log, trajectory_id=tid, prompts_dir=pd)
            finally:
                log.close()
            return traj.to_dict()

        for rec, row in zip(todo, self._map(one, todo)):
            done[rec.id] = row
        if todo:
            write_jsonl(traj_path, (done[r.id] for r in records if r.id in done))
        terminations: dict[str, int] = {}
        for row in done.values():
            terminations[row["termination"]] = terminations.get(row["termination"], 0) + 1
        return self._finish(
            "synth-traj", started, [traj_path],
            items_in=len(records), items_out=terminations.get("answered", 0),
            skipped=len(records) - len(todo), terminations=dict(sorted(terminations.items())),
        )

    def _trajectories(self) -> tuple[list[Trajectory], dict[str, str]]:
        traj_path = self.path("trajectories", "trajectories.jsonl")
        self._require(traj_path, "synth-traj")
        trajs = [Trajectory.from_dict(r) for r in read_jsonl(traj_path)]
        answers = {r["id"]: r["answer"] for r in read_jsonl(self.path("verify", "accepted.jsonl"))}
        return trajs, answers

    def export(self) -> StageResult:
        started = time.perf_counter()
        trajs, answers = self._trajectories()
        data_path = self.path("dataset", "train.jsonl")
        mpath = manifest_path(data_path)
        source_ids = sorted(t.id for t in trajs)
        if mpath.exists() and not self.force:
            prev = json.loads(mpath.read_text(encoding="utf-8"))
            if prev.get("config_hash") == self.config_hash and prev.get("considered") == source_ids:
                return self._finish("export", started, [data_path, mpath], items_in=len(trajs), items_out=0,
                                    skipped=len(trajs))
        samples = []
        excluded = 0
        for t in trajs:
            got = export_training_samples(t, self.cfg.export.scheme, answers.get(t.qa_id),
                                          self.cfg.export.include_unfinished)
            excluded += not got
            samples.extend(got)
        if not samples:
            raise MissingUpstream("no answered trajectories to export")
        manifest = write_dataset(samples, data_path, config_hash=self.config_hash, created_at=creation_timestamp())
        write_json(mpath, {**manifest.to_dict(), "considered": source_ids})
        return self._finish(
            "export", started, [data_path, mpath], items_in=len(trajs), items_out=manifest.sample_count, skipped=0,
            rejects={RejectReason.NOT_ANSWERED.value: excluded} if excluded else {},
        )

    def stats(self) -> StageResult:
        started = time.perf_counter()
        trajs, _ = self._trajectories()
        tsv, summary_path = self.path("stats", "trajectories.tsv"), self.path("stats", "summary.json")
        source_ids = sorted(t.id for t in trajs)
        if summary_path.exists() and not self.force:
            prev = json.loads(summary_path.read_text(encoding="utf-8"))
            if prev.get("config_hash") == self.config_hash and prev.get("source_trajectories") == source_ids:
                return self._finish("stats", started, [tsv, summary_path], items_in=len(trajs), items_out=0,
                                    skipped=len(trajs))
        stats = compute_stats(trajs)
        tsv.parent.mkdir(parents=True, exist_ok=True)
        tsv.write_text(stats.to_tsv(), encoding="utf-8")
        write_json(summary_path, {**stats.summary(), "config_hash": self.config_hash,
                                  "source_trajectories": source_ids})
        return self._finish("stats", started, [tsv, summary_path], items_in=len(trajs), items_out=len(trajs), skipped=0)

    def run(self, stage: str) -> list[StageResult]:
        if stage == "all":
            return [self.run(s)[0] for s in STAGES]
        handler = {
            "ingest": self.ingest,
            "synth-qa": self.synth_qa,
            "verify": self.verify,
            "synth-traj": self.synth_traj,
            "export": self.export,
            "stats": self.stats,
        }.get(stage)
        if handler is None:
            raise ValueError(f"unknown stage {stage!r}")
        return [handler()]
