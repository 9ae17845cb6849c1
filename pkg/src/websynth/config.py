"""Pipeline configuration: one YAML or JSON file drives every stage."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .corpus_graph import SUPPORTED_FORMATS
from .dataset import SCHEMES
from .errors import ConfigInvalid
from .sampler import EXPANSION_POLICIES, SEED_MODES
from .verifier import MATCH_MODES

BACKENDS = ("mock", "http")
TOOL_MODES = ("local", "external")


@dataclass
class CorpusSettings:
    path: str = ""
    format: str = "jsonl"


@dataclass
class SamplerSettings:
    k: int = 8
    expansion: str = "bfs"
    seed_policy: str = "uniform"
    min_outdegree: int = 0
    num_seeds: int = 10


@dataclass
class QASettings:
    min_hops: int = 2
    obfuscation_ratio: float = 0.7
    paraphrase_attempts: int = 3
    max_entities: int = 6
    compression_fraction: float = 0.2


@dataclass
class VerifySettings:
    attempts: int = 1
    judge_mode: str = "normalized-exact"


@dataclass
class TrajectorySettings:
    max_tool_calls: int = 200
    context_budget: int = 256_000
    summary_budget: int = 512
    obs_cap: int = 16_000
    malformed_retries: int = 2
    summary_retries: int = 1
    search_top_n: int = 5
    tools: str = "local"
    external: dict = field(default_factory=dict)


@dataclass
class ExportSettings:
    scheme: str = "full-sequence"
    include_unfinished: bool = False


@dataclass
class PipelineConfig:
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    qa: QASettings = field(default_factory=QASettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    trajectory: TrajectorySettings = field(default_factory=TrajectorySettings)
    export: ExportSettings = field(default_factory=ExportSettings)
    roles: dict[str, dict] = field(default_factory=dict)
    output_dir: str = "out"
    rng_seed: int = 0
    prompts_dir: str | None = None
    parallel: int = 1
    base_dir: str = "."  # directory of the config file; not hashed

    def resolve(self, p: str | None) -> Path | None:
        """Resolve a config-relative path."""
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)  # type: ignore[return-value]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        """Digest of everything that affects outputs (not where they go, nor parallelism)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("parallel")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def validate(self) -> None:
        problems = []
        if not self.corpus.path:
            problems.append("corpus.path is required")
        if self.corpus.format not in SUPPORTED_FORMATS:
            problems.append(f"corpus.format must be one of {SUPPORTED_FORMATS}")
        s = self.sampler
        if s.k < 0:
            problems.append("sampler.k must be >= 0")
        if s.expansion not in EXPANSION_POLICIES:
            problems.append(f"sampler.expansion must be one of {EXPANSION_POLICIES}")
        if s.seed_policy not in SEED_MODES:
            problems.append(f"sampler.seed_policy must be one of {SEED_MODES}")
        if s.min_outdegree < 0:
            problems.append("sampler.min_outdegree must be >= 0")
        if s.num_seeds < 1:
            problems.append("sampler.num_seeds must be >= 1")
        q = self.qa
        if q.min_hops < 1:
            problems.append("qa.min_hops must be >= 1")
        if not 0 < q.obfuscation_ratio <= 1:
            problems.append("qa.obfuscation_ratio must be in (0, 1]")
        if q.paraphrase_attempts < 1:
            problems.append("qa.paraphrase_attempts must be >= 1")
        if not 0 < q.compression_fraction:
            problems.append("qa.compression_fraction must be > 0")
        if self.verify.attempts < 1:
            problems.append("verify.attempts must be >= 1")
        if self.verify.judge_mode not in MATCH_MODES:
            problems.append(f"verify.judge_mode must be one of {MATCH_MODES}")
        t = self.trajectory
        for name in ("max_tool_calls", "context_budget", "summary_budget", "obs_cap"):
            if getattr(t, name) < 1:
                problems.append(f"trajectory.{name} must be >= 1")
        if t.tools not in TOOL_MODES:
            problems.append(f"trajectory.tools must be one of {TOOL_MODES}")
        if self.export.scheme not in SCHEMES:
            problems.append(f"export.scheme must be one of {SCHEMES}")
        if self.parallel < 1:
            problems.append("parallel must be >= 1")
        for role, rc in self.roles.items():
            if not isinstance(rc, dict):
                problems.append(f"roles.{role} must be a mapping")
                continue
            backend = rc.get("backend", "mock")
            if backend not in BACKENDS:
                problems.append(f"roles.{role}.backend must be one of {BACKENDS}")
            elif backend == "mock" and not rc.get("script"):
                problems.append(f"roles.{role} uses the mock backend but has no script")
            elif backend == "http" and not rc.get("endpoint"):
                problems.append(f"roles.{role} uses the http backend but has no endpoint")
        if any("api_key" in rc for rc in self.roles.values() if isinstance(rc, dict)):
            problems.append("credentials belong in environment variables (use api_key_env)")
        if problems:
            raise ConfigInvalid("; ".join(problems))


_SECTIONS = {
    "corpus": CorpusSettings,
    "sampler": SamplerSettings,
    "qa": QASettings,
    "verify": VerifySettings,
    "trajectory": TrajectorySettings,
    "export": ExportSettings,
}


def config_from_dict(raw: dict[str, Any], base_dir: str | Path = ".") -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    known = {f.name for f in fields(PipelineConfig)} - {"base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise ConfigInvalid(f"{key} must be a mapping")
            allowed = {f.name for f in fields(cls)}
            extra = set(value) - allowed
            if extra:
                raise ConfigInvalid(f"unknown keys in {key}: {sorted(extra)}")
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    return PipelineConfig(**kwargs, base_dir=str(base_dir))


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw or {}, base_dir=path.parent)
