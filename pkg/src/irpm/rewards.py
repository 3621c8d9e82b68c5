"""Intergroup rewards computed from two groups of sampled scores.

Every chosen-side rollout is compared with the rejected group (and vice versa)
to produce one reward per rollout.  Soft and hard kernels use all G x G
comparisons; the rule-based variants compare against a single summary
statistic of the opposing group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import _backend
from .stats import t_quantile

__all__ = [
    "SCORE_MIN",
    "SCORE_MAX",
    "RewardVariant",
    "RolloutOutcome",
    "RewardConfig",
    "IntergroupRewards",
    "SkippedPair",
    "score_group",
    "mc_bt_estimate",
    "preference_rewards",
    "auc_rewards",
    "group_mean",
    "group_median",
    "confidence_interval",
    "rule_based_rewards",
    "intergroup_rewards",
    "adaptive_margin",
    "format_reward",
    "total_rewards",
]

SCORE_MIN = 0.0
SCORE_MAX = 10.0


class RewardVariant(str, Enum):
    PREFERENCE = "Preference"
    AUC = "AUC"
    MEAN = "Mean"
    MEDIAN = "Median"
    INTERVAL = "Interval"

    @classmethod
    def parse(cls, value: "str | RewardVariant") -> "RewardVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        if key.upper().startswith("IRPM-"):
            key = key[5:]
        for v in cls:
            if v.value.lower() == key.lower():
                return v
        names = ", ".join(v.value for v in cls)
        raise ValueError(f"unknown reward variant {value!r}; expected one of {names}")

    @property
    def rule_based(self) -> bool:
        return self in (RewardVariant.MEAN, RewardVariant.MEDIAN, RewardVariant.INTERVAL)

    @property
    def floor(self) -> float:
        """Intergroup reward assigned to rollouts with no parsable score."""
        return -1.0 if self.rule_based else 0.0


@dataclass(frozen=True)
class RolloutOutcome:
    """A parsed rollout: the score (``None`` if unparsable) and format validity.

    ``bin_index`` records the sampled score token for toy-policy rollouts so the
    log-probability stays defined even when the score was not parsed.
    """

    score: float | None
    format_ok: bool
    bin_index: int | None = None

    def __post_init__(self):
        if self.score is None and self.format_ok:
            raise ValueError("an outcome without a score cannot be format-valid")


@dataclass(frozen=True)
class RewardConfig:
    variant: RewardVariant = RewardVariant.MEAN
    margin_delta: float = 0.0
    adaptive_margin: bool = True
    ci_alpha: float = 0.05
    format_penalty: float = -0.5
    sigmoid_temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", RewardVariant.parse(self.variant))
        if not self.margin_delta >= 0:
            raise ValueError("margin_delta must be nonnegative")
        if not 0.0 < self.ci_alpha < 1.0:
            raise ValueError("ci_alpha must lie in (0, 1)")
        if not self.sigmoid_temperature > 0:
            raise ValueError("sigmoid_temperature must be positive")


@dataclass(frozen=True)
class IntergroupRewards:
    chosen: np.ndarray
    rejected: np.ndarray
    estimate: float


class SkippedPair(ValueError):
    """No reward signal is definable for the pair (e.g. a side is all unparsable)."""


def score_group(scores: Sequence[float]) -> np.ndarray:
    """Validate a group of scores and return it as a float array."""
    g = np.asarray(scores, dtype=np.float64).reshape(-1)
    if g.size == 0:
        raise ValueError("score group must not be empty")
    if not np.all(np.isfinite(g)):
        raise ValueError("scores must be finite")
    if g.min() < SCORE_MIN or g.max() > SCORE_MAX:
        raise ValueError(f"scores must lie in [{SCORE_MIN}, {SCORE_MAX}]")
    return g


def mc_bt_estimate(chosen, rejected, temperature: float = 1.0) -> float:
    """Monte-Carlo Bradley-Terry preference probability.

    The mean of ``sigmoid(s_c - s_r)`` over every (chosen, rejected) score
    combination; group sizes may differ.
    """
    return _backend.kernels.intergroup_sigmoid(score_group(chosen), score_group(rejected), temperature)[2]


def preference_rewards(chosen, rejected, temperature: float = 1.0) -> IntergroupRewards:
    rc, rr, est = _backend.kernels.intergroup_sigmoid(
        score_group(chosen), score_group(rejected), temperature
    )
    return IntergroupRewards(rc, rr, est)


def auc_rewards(chosen, rejected) -> IntergroupRewards:
    """Strict win-rate rewards; ties earn nothing on either side."""
    c, r = score_group(chosen), score_group(rejected)
    rc, rr, wins = _backend.kernels.intergroup_indicator(c, r)
    return IntergroupRewards(rc, rr, wins / (c.size * r.size))


def group_mean(scores) -> float:
    return float(np.mean(score_group(scores)))


def group_median(scores) -> float:
    """Lower-middle order statistic ``s_ceil(G/2)`` (1-indexed), no averaging."""
    g = np.sort(score_group(scores))
    return float(g[math.ceil(0.5 * g.size) - 1])


def confidence_interval(scores, alpha: float = 0.05) -> tuple[float, float]:
    """Two-sided t interval for the mean with the (G-1)-divisor variance."""
    g = score_group(scores)
    if g.size < 2:
        raise ValueError("confidence interval needs at least two scores")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mu = float(g.mean())
    sd = float(np.sqrt(np.sum((g - mu) ** 2) / (g.size - 1)))
    half = t_quantile(1.0 - alpha / 2.0, g.size - 1) * sd / math.sqrt(g.size)
    return mu - half, mu + half


def _thresholds(c: np.ndarray, r: np.ndarray, config: RewardConfig) -> tuple[float, float]:
    v = config.variant
    if v is RewardVariant.MEAN:
        return group_mean(c), group_mean(r)
    if v is RewardVariant.MEDIAN:
        return group_median(c), group_median(r)
    if v is RewardVariant.INTERVAL:
        if c.size < 2 or r.size < 2:
            raise ValueError("Interval variant needs at least two scores per group")
        return confidence_interval(c, config.ci_alpha)[0], confidence_interval(r, config.ci_alpha)[1]
    raise ValueError(f"{v.value} is not a rule-based variant")


def rule_based_rewards(chosen, rejected, config: RewardConfig, delta: float | None = None) -> IntergroupRewards:
    """Binary +-1 rewards against the opposing group's threshold.

    A chosen rollout earns +1 only if it strictly clears the rejected
    threshold plus the margin; a rejected rollout only if it falls strictly
    below the chosen threshold minus the margin.
    """
    c, r = score_group(chosen), score_group(rejected)
    delta = config.margin_delta if delta is None else delta
    if delta < 0:
        raise ValueError("margin must be nonnegative")
    theta_c, theta_r = _thresholds(c, r, config)
    rc, rr = _backend.kernels.threshold_rewards(c, r, theta_c, theta_r, delta)
    wins = int(np.count_nonzero(rc > 0) + np.count_nonzero(rr > 0))
    return IntergroupRewards(rc, rr, wins / (c.size + r.size))


def intergroup_rewards(chosen, rejected, config: RewardConfig, delta: float | None = None) -> IntergroupRewards:
    """Dispatch to the configured variant."""
    v = config.variant
    if v is RewardVariant.PREFERENCE:
        return preference_rewards(chosen, rejected, config.sigmoid_temperature)
    if v is RewardVariant.AUC:
        return auc_rewards(chosen, rejected)
    return rule_based_rewards(chosen, rejected, config, delta)


def adaptive_margin(strength: int | None, config: RewardConfig) -> float:
    """Margin ``max(strength - 2, 0)`` when adaptive and annotated, else the fixed margin."""
    if strength is not None and strength not in (0, 1, 2, 3):
        raise ValueError(f"strength must be in 0..3, got {strength!r}")
    if config.adaptive_margin and strength is not None:
        return float(max(strength - 2, 0))
    return float(config.margin_delta)


def format_reward(outcome: RolloutOutcome, config: RewardConfig) -> float:
    return 0.0 if outcome.format_ok else float(config.format_penalty)


def total_rewards(
    outcomes_c: Sequence[RolloutOutcome],
    outcomes_r: Sequence[RolloutOutcome],
    config: RewardConfig,
    strength: int | None = None,
) -> IntergroupRewards:
    """Intergroup reward plus format reward for every rollout.

    Rollouts without a parsable score get the variant's floor reward and are
    left out of the opposing side's comparisons and thresholds.  Raises
    :class:`SkippedPair` when a side has no usable scores.
    """
    mask_c = np.array([o.score is not None for o in outcomes_c], dtype=bool)
    mask_r = np.array([o.score is not None for o in outcomes_r], dtype=bool)
    if not mask_c.any() or not mask_r.any():
        raise SkippedPair("all rollouts on one side have unparsable scores")
    sc = [o.score for o in outcomes_c if o.score is not None]
    sr = [o.score for o in outcomes_r if o.score is not None]
    variant = config.variant
    if variant is RewardVariant.INTERVAL and (len(sc) < 2 or len(sr) < 2):
        raise SkippedPair("Interval variant needs two parsable scores per side")

    inter = intergroup_rewards(sc, sr, config, adaptive_margin(strength, config))
    rc = np.full(len(outcomes_c), variant.floor)
    rr = np.full(len(outcomes_r), variant.floor)
    rc[mask_c] = inter.chosen
    rr[mask_r] = inter.rejected
    rc += [format_reward(o, config) for o in outcomes_c]
    rr += [format_reward(o, config) for o in outcomes_r]
    return IntergroupRewards(rc, rr, inter.estimate)
