"""
Run configuration: one JSON file of nested sections plus command-line
overrides. Defaults are desk-scale; FULL_SCALE_DEFAULTS lists the
production-size hyperparameters.
"""

import dataclasses
import logging
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .errors import ConfigError
from .storage import FIXTURES_DIR, canonical_json, load_json, save_json, sha256_text

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_gat", "no_kg")

FULL_SCALE_DEFAULTS = {
    "l1": {"lr": 8e-4, "batch_size": 64, "epochs": 10, "hard_negatives": 1},
    "l2": {"lr": 5e-4, "batch_size": 32, "epochs": 4, "hard_negatives": 4},
    "gat": {"layers": 4, "heads": 8, "hidden": 400},
}


@dataclass
class PathsConfig:
    workspace: str = "runs/default"
    entities: str = str(FIXTURES_DIR / "entities.tsv")
    triples: str = str(FIXTURES_DIR / "triples.tsv")
    templates: str = str(FIXTURES_DIR / "templates.json")


@dataclass
class KgConfig:
    dim: int = 32
    synthetic_entities: int = 0     # > 0: ingest a seeded synthetic graph of this size instead of the files
    epochs: int = 100
    margin: float = 1.0
    lr: float = 0.01
    batch_size: int = 128
    max_neighbors: int = 32


@dataclass
class TextConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    max_len: int = 48
    ffn: int = 128
    trigram_buckets: int = 4096
    min_count: int = 1


@dataclass
class GatSection:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    slope: float = 0.2
    phi: str = "subtract"
    compose_in_attention: bool = True


@dataclass
class L1Config:
    lr: float = 8e-4
    batch_size: int = 16
    epochs: int = 2
    hard_negatives: int = 1
    d_sim: int = 64
    k: int = 10


@dataclass
class L2Config:
    lr: float = 5e-4
    batch_size: int = 8
    epochs: int = 2
    hard_negatives: int = 4
    lambda_rank: float = 1.0
    lambda_span: float = 1.0
    max_span_len: int = 6


@dataclass
class DataConfig:
    l2_train: int = 20000
    clean_fraction: float = 0.25
    l1_train: int = 4000
    friction_test: int = 2000
    clean_test: int = 500
    zero_shot_fraction: float = 0.1
    few_shot_fraction: float = 0.2
    max_edit: int = 4
    mining_k: int = 10
    miner_epochs: int = 1


@dataclass
class EvalConfig:
    theta: float = 5.0
    thetas: List[float] = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 7.0])
    clean_tr_cap: float = 0.02
    always_trigger: bool = False
    min_rank_score: Optional[float] = None


@dataclass
class ModelConfig:
    variant: str = "full"


@dataclass
class RunConfig:
    seed: int = 13
    log_level: str = "INFO"
    paths: PathsConfig = field(default_factory=PathsConfig)
    kg: KgConfig = field(default_factory=KgConfig)
    text: TextConfig = field(default_factory=TextConfig)
    gat: GatSection = field(default_factory=GatSection)
    l1: L1Config = field(default_factory=L1Config)
    l2: L2Config = field(default_factory=L2Config)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def to_dict(self) -> Dict:
        return asdict(self)

    def validate(self):
        if self.model.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}, got {self.model.variant!r}")
        if self.text.hidden % self.text.heads or self.gat.hidden % self.gat.heads:
            raise ConfigError("hidden sizes must be divisible by their head counts")
        if not self.eval.thetas:
            raise ConfigError("eval.thetas must be non-empty")
        if not 0.0 <= self.eval.clean_tr_cap <= 1.0:
            raise ConfigError("eval.clean_tr_cap must lie in [0, 1]")
        if self.kg.synthetic_entities < 0:
            raise ConfigError("kg.synthetic_entities must be non-negative")
        if not 0.0 <= self.data.clean_fraction <= 1.0:
            raise ConfigError("data.clean_fraction must lie in [0, 1]")
        if self.data.zero_shot_fraction + self.data.few_shot_fraction > 1.0:
            raise ConfigError("data.zero_shot_fraction + data.few_shot_fraction must not exceed 1")


# Sections that do not change any artifact
_UNHASHED = ("log_level", "eval")


def config_hash(cfg: RunConfig, shared: bool = False) -> str:
    """
    sha256 of the canonical JSON of every artifact-relevant setting.
    shared=True leaves out the model variant, for artifacts all variants reuse.
    """
    skip = _UNHASHED + ("model",) if shared else _UNHASHED
    data = {k: v for k, v in cfg.to_dict().items() if k not in skip}
    return sha256_text(canonical_json(data))


# ============ Loading ============

def _build(cls, data: Dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _coerce(hint, text: str, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is typing.Union and type(None) in args:
            if text.strip().lower() in ("none", "null", ""):
                return None
            return _coerce(next(a for a in args if a is not type(None)), text, key)
        if origin in (list, List):
            return [_coerce(args[0], part, key) for part in text.split(",") if part.strip()]
        if hint is bool:
            lowered = text.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if hint in (int, float, str):
            return hint(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} for {key}") from None
    raise ConfigError(f"cannot override {key}")


def apply_override(cfg: RunConfig, assignment: str):
    """Apply one `section.key=value` (or top-level `key=value`) override in place."""
    key, sep, text = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override {assignment!r} is not key=value")
    target = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config section {part!r} in {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    if not dataclasses.is_dataclass(target) or name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {key!r}")
    hint = typing.get_type_hints(type(target))[name]
    if dataclasses.is_dataclass(hint):
        raise ConfigError(f"{key!r} is a section, not a value")
    setattr(target, name, _coerce(hint, text, key))


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Defaults, then the JSON file, then `--set` overrides, then `--seed`."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = load_json(path)
        if not data:
            raise ConfigError(f"config file {path} is empty or not valid JSON")
        cfg = _build(RunConfig, data, "")
    for assignment in overrides:
        apply_override(cfg, assignment)
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def save_config(cfg: RunConfig, path: Path):
    save_json(path, cfg.to_dict())
