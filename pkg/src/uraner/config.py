"""Pipeline configuration: JSON file, strict keys, environment overrides.

A config file is a JSON object with the sections below. Every key is
optional; unknown keys are an error. Relative paths resolve against the
directory holding the config file.

Environment variables named ``URANER_<SECTION>__<KEY>`` override single
values after the file is read, e.g. ``URANER_MODEL__SEED=3`` or
``URANER_RETRIEVAL__K_TEXT=8``. ``URANER_LANGUAGE`` sets the top-level
language. Values are parsed as JSON when possible and used as plain
strings otherwise.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .ner_model.training import TrainConfig
from .retrieval import RetrievalConfig

ENV_PREFIX = "URANER_"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    kb_documents: str = ""
    kb_entities: str = ""
    english_entities: str = ""  # English KB used for the type fallback of other languages
    train: str | dict[str, str] = ""  # one corpus, or {group name: corpus} for upsampling
    test: str = ""
    init_checkpoint: str = ""  # earlier-stage checkpoint for multi-stage fine-tuning
    store_dir: str = "work/store"
    index_dir: str = "work/index"
    bundle_dir: str = "work/bundles"
    checkpoint_dir: str = "work/checkpoints"
    prediction_dir: str = "work/predictions"
    report_dir: str = "work/reports"

    INPUTS = ("kb_documents", "kb_entities", "english_entities", "test", "init_checkpoint")

    def train_corpora(self) -> dict[str, str]:
        if isinstance(self.train, dict):
            return dict(sorted(self.train.items()))
        return {"train": self.train} if self.train else {}


@dataclass
class IndexSection:
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


@dataclass
class VocabSection:
    include_kb: bool = True  # add knowledge-base text to the model vocabulary


@dataclass
class EnsembleSection:
    seeds: list[int] = field(default_factory=list)  # empty: a single model with model.seed


@dataclass
class AnalysisSection:
    sweep_lengths: list[int] = field(default_factory=lambda: [0, 16, 32, 64, 128])
    iou_bins: int = 10
    strip_whitespace: bool = False


SECTIONS = {
    "paths": Paths,
    "index": IndexSection,
    "retrieval": RetrievalConfig,
    "model": TrainConfig,
    "vocab": VocabSection,
    "ensemble": EnsembleSection,
    "analysis": AnalysisSection,
}


@dataclass
class PipelineConfig:
    language: str = "en"
    paths: Paths = field(default_factory=Paths)
    index: IndexSection = field(default_factory=IndexSection)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    model: TrainConfig = field(default_factory=TrainConfig)
    vocab: VocabSection = field(default_factory=VocabSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    @property
    def seeds(self) -> list[int]:
        return list(self.ensemble.seeds) or [self.model.seed]

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=None) -> "PipelineConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {"language", *SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "language" in data:
            kwargs["language"] = str(data["language"])
        for name, section_cls in SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, Mapping):
                raise ConfigError(f"section {name!r} must be an object")
            known = {f.name for f in fields(section_cls)}
            bad = set(section) - known
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = section_cls(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        cfg = cls(**kwargs)
        cfg._resolve_paths(Path(base_dir) if base_dir is not None else Path.cwd())
        return cfg

    def _resolve_paths(self, base: Path) -> None:
        def resolve(value: str) -> str:
            if not value:
                return value
            p = Path(value)
            return str(p if p.is_absolute() else (base / p).resolve())

        for f in fields(Paths):
            value = getattr(self.paths, f.name)
            if isinstance(value, dict):
                setattr(self.paths, f.name, {k: resolve(v) for k, v in value.items()})
            else:
                setattr(self.paths, f.name, resolve(value))

    def validate_inputs(self) -> None:
        """Every input path named in the config must exist."""
        missing = []
        for name in Paths.INPUTS:
            value = getattr(self.paths, name)
            if value and not Path(value).exists():
                missing.append(f"paths.{name}={value}")
        for group, value in self.paths.train_corpora().items():
            if not Path(value).exists():
                missing.append(f"paths.train[{group}]={value}")
        if missing:
            raise ConfigError("configured input files do not exist: " + ", ".join(missing))


def apply_env(data: dict, environ: Mapping[str, str] | None = None) -> dict:
    """Return a copy of ``data`` with ``URANER_*`` overrides applied."""
    environ = os.environ if environ is None else environ
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        key = name[len(ENV_PREFIX):].lower()
        if key == "language":
            out["language"] = raw
            continue
        section, sep, field_name = key.partition("__")
        if not sep or not field_name:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        if section not in SECTIONS:
            raise ConfigError(f"{name}: unknown config section {section!r}")
        out.setdefault(section, {})[field_name] = value
    return out


def load_config(path=None, environ: Mapping[str, str] | None = None, validate: bool = True) -> PipelineConfig:
    """Read a config file (or defaults when ``path`` is None) and apply overrides."""
    data: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base = path.resolve().parent
    cfg = PipelineConfig.from_dict(apply_env(data, environ), base)
    if validate:
        cfg.validate_inputs()
    return cfg
