"""Run configuration: one TOML file, every field defaulted, unknown keys rejected.

Example::

    seed = 7

    [gen_data]
    n_pairs = 200

    [reward]
    variant = "Mean"

    [train]
    steps = 300

Relative paths are resolved against the run's ``--out`` directory.
"""

from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import FilterPolicy
from .evaluation import EvalProtocol
from .grpo import GRPOConfig
from .rewards import RewardConfig, RewardVariant


class ConfigError(ValueError):
    pass


@dataclass
class GenDataSection:
    n_pairs: int = 200
    utility_noise: float = 0.5
    output: str = "data.jsonl"
    utility_output: str = "data.utility.jsonl"


@dataclass
class FilterSection:
    input: str = "data.jsonl"
    output: str = "filtered.jsonl"
    min_strength: int = 2
    max_prompt_length: int = 3072

    def policy(self) -> FilterPolicy:
        return FilterPolicy(self.min_strength, self.max_prompt_length)


@dataclass
class RewardSection:
    variant: str = "Mean"
    margin_delta: float = 0.0
    adaptive_margin: bool = True
    ci_alpha: float = 0.05
    format_penalty: float = -0.5
    sigmoid_temperature: float = 1.0

    def build(self) -> RewardConfig:
        return RewardConfig(
            variant=RewardVariant.parse(self.variant),
            margin_delta=self.margin_delta,
            adaptive_margin=self.adaptive_margin,
            ci_alpha=self.ci_alpha,
            format_penalty=self.format_penalty,
            sigmoid_temperature=self.sigmoid_temperature,
        )


@dataclass
class GRPOSection:
    clip_epsilon: float = 0.2
    kl_beta: float = 1e-3
    learning_rate: float = GRPOConfig.learning_rate
    group_size: int = 4
    std_epsilon: float = 1e-8
    max_grad_norm: float = 1.0

    def build(self) -> GRPOConfig:
        return GRPOConfig(**dataclasses.asdict(self))


@dataclass
class TrainSection:
    dataset: str = "data.jsonl"
    steps: int = 300
    batch_size: int = 96
    bin_step: float = 0.5
    temperature: float = 1.0
    init_format_logit: float = 1.0
    checkpoint: str = "checkpoint.jsonl"
    diagnostics: str = "diagnostics.jsonl"
    summary: str = "train_summary.json"
    # empty disables the per-step raw log (sampled scores and policy rows)
    raw_log: str = ""
    # recorded in the run summary only; the loop is a flat step count
    epochs: int = 2
    mini_batch_size: int = 96


@dataclass
class EvalSection:
    dataset: str = "data.jsonl"
    checkpoint: str = "checkpoint.jsonl"
    utility: str = "data.utility.jsonl"
    scorer: str = "policy"
    n_votes: list[int] = field(default_factory=lambda: [1])
    retry_budget: int = 3
    constant_score: float = 5.0
    summary: str = "eval_summary.jsonl"
    detail: str = "eval_detail.jsonl"

    def protocols(self, seed: int) -> list[EvalProtocol]:
        return [EvalProtocol(n, seed, self.retry_budget) for n in self.n_votes]


@dataclass
class ReportSection:
    diagnostics: list[str] = field(default_factory=lambda: ["diagnostics.jsonl"])
    evals: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    curves_output: str = "report_curves.csv"
    eval_output: str = "report_eval.csv"


@dataclass
class RunConfig:
    seed: int = 0
    gen_data: GenDataSection = field(default_factory=GenDataSection)
    filter: FilterSection = field(default_factory=FilterSection)
    reward: RewardSection = field(default_factory=RewardSection)
    grpo: GRPOSection = field(default_factory=GRPOSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    raise ConfigError(f"{where}: unsupported field type {tp!r}")


def _build(cls, mapping, where: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where or 'config'}: expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        prefix = f"[{where}] " if where else ""
        raise ConfigError(f"{prefix}unknown key(s): {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in mapping.items()}
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    cfg = _build(RunConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    """Build every typed config once so bad values fail before any work starts."""
    try:
        if cfg.seed < 0:
            raise ValueError("seed must be nonnegative")
        if cfg.gen_data.n_pairs < 1:
            raise ValueError("gen_data.n_pairs must be at least 1")
        if cfg.gen_data.utility_noise < 0:
            raise ValueError("gen_data.utility_noise must be nonnegative")
        cfg.filter.policy()
        cfg.reward.build()
        cfg.grpo.build()
        cfg.eval.protocols(cfg.seed)
        if cfg.train.steps < 0 or cfg.train.batch_size < 1:
            raise ValueError("train.steps must be >= 0 and train.batch_size >= 1")
        if cfg.eval.scorer not in ("policy", "expected", "utility", "constant"):
            raise ValueError(f"unknown scorer {cfg.eval.scorer!r}")
        if not cfg.eval.n_votes:
            raise ValueError("eval.n_votes must list at least one vote count")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
