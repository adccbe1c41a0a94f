"""Flat run configuration: YAML file + ``key=value`` overrides, echoed into every run directory."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .inference import MODES, SelectorConfig
from .interpreter import InterpreterConfig
from .qa_model import EncoderConfig
from .synthetic import SyntheticConfig
from .trainer import TrainConfig

ALIASES = {"lambda": "lam"}
REGIMES = ("multi_hop", "single_paragraph")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # global
    seed: int = 42
    # synthetic data
    n_examples: int = 1000
    n_dev: int = 200
    chain_length: int = 2
    n_distractor_paragraphs: int = 8
    sentences_per_paragraph: int = 5
    yes_no_fraction: float = 0.0
    distractor_final_relation_rate: float = 0.0
    question_entity_distractors: int = 0
    # set construction
    k_neg: int = 2
    regime: str = "multi_hop"
    # encoder
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1
    budget: int = 128
    # training
    lr: float = 1e-3
    batch_size: int = 8
    epochs_total: int = 6
    K: int = 3
    lam: float = 0.01
    regularizer: str = "bias_decorrelate"
    use_evidence_positive: bool = True
    bias_grad_to_encoder: bool = False
    max_grad_norm: Optional[float] = 1.0
    max_span_len: int = 30
    # interpreter
    strategy: str = "combined"
    T: int = 5
    # selector / inference
    selector_epochs: int = 3
    selector_lr: float = 1e-3
    mode: str = "paired_paragraph"
    k: int = 5
    # paths
    corpus: str = ""
    checkpoint: str = ""
    selector: str = ""
    evidence: str = ""
    predictions: str = ""
    challenge: str = ""
    out: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        # building the component configs runs their own validation
        try:
            self.synthetic_config(0)
            self.train_config()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def synthetic_config(self, n_examples: Optional[int] = None, seed: Optional[int] = None) -> SyntheticConfig:
        return SyntheticConfig(
            n_examples=self.n_examples if n_examples is None else n_examples,
            chain_length=self.chain_length,
            n_distractor_paragraphs=self.n_distractor_paragraphs,
            sentences_per_paragraph=self.sentences_per_paragraph,
            seed=self.seed if seed is None else seed,
            yes_no_fraction=self.yes_no_fraction,
            distractor_final_relation_rate=self.distractor_final_relation_rate,
            question_entity_distractors=self.question_entity_distractors,
        )

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.layers, self.hidden_dim, self.heads,
                             max(self.budget, 8), self.ffn_dim, self.dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, epochs_total=self.epochs_total, K=self.K, lam=self.lam,
            regularizer=self.regularizer, seed=self.seed, use_evidence_positive=self.use_evidence_positive,
            bias_grad_to_encoder=self.bias_grad_to_encoder, budget=self.budget, max_span_len=self.max_span_len,
            max_grad_norm=self.max_grad_norm, interpreter=InterpreterConfig(self.strategy, self.T),
        )

    def selector_config(self) -> SelectorConfig:
        return SelectorConfig(lr=self.selector_lr, epochs=self.selector_epochs, batch_size=self.batch_size,
                              seed=self.seed, budget=self.budget)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:10]


def valid_keys() -> list[str]:
    return sorted([f.name for f in fields(RunConfig)] + list(ALIASES))


def _coerce(name: str, raw: Any) -> Any:
    default = RunConfig.__dataclass_fields__[name].default
    if not isinstance(raw, str):
        if isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    value = yaml.safe_load(raw) if raw != "" else ""
    if isinstance(default, str):
        return raw
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _merge(target: dict, items: Iterable[tuple[str, Any]]) -> None:
    known = {f.name for f in fields(RunConfig)}
    for key, value in items:
        name = ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")
        target[name] = _coerce(name, value)


def parse_overrides(overrides: Iterable[str]) -> list[tuple[str, str]]:
    out = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out.append((key.strip(), value.strip()))
    return out


def load_config(path=None, overrides: Iterable[str] | dict = ()) -> RunConfig:
    """Defaults < YAML file at ``path`` < ``overrides`` (``key=value`` strings or a dict)."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping of key: value")
        _merge(values, data.items())
    items = overrides.items() if isinstance(overrides, dict) else parse_overrides(overrides)
    _merge(values, items)
    try:
        return RunConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def echo_config(cfg: RunConfig, run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
