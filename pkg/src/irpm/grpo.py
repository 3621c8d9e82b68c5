"""GRPO updates driven by intergroup rewards.

For every preference pair the current policy scores the chosen and the
rejected response ``G`` times each.  Per-rollout rewards come from
:func:`irpm.rewards.total_rewards`; advantages are standardised separately
within the chosen group and within the rejected group, and the policy takes
one clipped-surrogate gradient-ascent step with a KL penalty against the frozen
initial policy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .data import PreferencePair
from .policy import (
    RolloutBatch,
    SamplingTables,
    ScoreBinGrid,
    ToyScorerPolicy,
    objective_gradient,
    row_entropies,
    sample_rollouts,
)
from .rewards import RewardConfig, SkippedPair, total_rewards

__all__ = [
    "GRPOConfig",
    "TrainState",
    "StepDiagnostics",
    "normalize_advantages",
    "kl_estimate",
    "grpo_surrogate",
    "select_batch",
    "irpm_train_step",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GRPOConfig:
    clip_epsilon: float = 0.2
    kl_beta: float = 1e-3
    # toy-scale step size: the tabular policy needs far larger steps than an LLM
    learning_rate: float = 100.0
    group_size: int = 4
    std_epsilon: float = 1e-8
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in [0, 1)")
        if not self.kl_beta >= 0:
            raise ValueError("kl_beta must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if isinstance(self.group_size, bool) or int(self.group_size) != self.group_size or self.group_size < 1:
            raise ValueError("group_size must be a positive integer")
        if not self.std_epsilon > 0:
            raise ValueError("std_epsilon must be positive")
        if not self.max_grad_norm > 0:
            raise ValueError("max_grad_norm must be positive")


def normalize_advantages(rewards: Sequence[float], config: GRPOConfig = GRPOConfig()) -> np.ndarray:
    """Standardise rewards within one group using the population std.

    Groups whose std does not exceed ``config.std_epsilon`` carry no ranking
    signal and map to all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        return r
    mu = r.mean()
    sd = math.sqrt(float(np.mean((r - mu) ** 2)))
    if sd <= config.std_epsilon:
        return np.zeros_like(r)
    return (r - mu) / sd


def kl_estimate(logp_current: float, logp_ref: float) -> float:
    """``rho - log(rho) - 1`` with ``rho = pi_ref / pi``; nonnegative."""
    if not (math.isfinite(logp_current) and math.isfinite(logp_ref)):
        raise ValueError("log-probabilities must be finite")
    d = logp_ref - logp_current
    return math.expm1(d) - d


def grpo_surrogate(ratio: float, advantage: float, clip_epsilon: float) -> float:
    if not ratio > 0:
        raise ValueError("probability ratio must be positive")
    clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


@dataclass
class StepDiagnostics:
    step: int
    mean_reward: float | None
    kl: float | None
    entropy: float
    score_variance: float | None
    scorer_calls: int
    skipped: int = 0
    format_ok_rate: float = 0.0
    grad_norm: float = 0.0
    raw: dict | None = field(default=None, repr=False)

    def to_record(self) -> dict:
        return {
            "step": self.step,
            "mean_reward": self.mean_reward,
            "kl": self.kl,
            "entropy": self.entropy,
            "score_variance": self.score_variance,
            "scorer_calls": self.scorer_calls,
            "skipped": self.skipped,
            "format_ok_rate": self.format_ok_rate,
            "grad_norm": self.grad_norm,
        }


@dataclass
class TrainState:
    policy: ToyScorerPolicy
    reference: ToyScorerPolicy
    step: int = 0
    history: list[StepDiagnostics] = field(default_factory=list)
    scorer_calls: int = 0

    @classmethod
    def initial(
        cls,
        pairs: Sequence[PreferencePair],
        grid: ScoreBinGrid | None = None,
        temperature: float = 1.0,
        init_format_logit: float = 1.0,
    ) -> "TrainState":
        keys = []
        for p in pairs:
            keys += [p.chosen_key, p.rejected_key]
        policy = ToyScorerPolicy(keys, grid=grid, temperature=temperature, init_format_logit=init_format_logit)
        return cls.from_policy(policy)

    @classmethod
    def from_policy(cls, policy: ToyScorerPolicy) -> "TrainState":
        ref = policy.copy()
        ref.logits.flags.writeable = False
        ref.format_logits.flags.writeable = False
        return cls(policy=policy, reference=ref)


def select_batch(pairs: Sequence[PreferencePair], batch_size: int, seed: int, step: int) -> list[PreferencePair]:
    """Minibatch for ``step``: all pairs if the batch covers them, else a seeded sample."""
    if batch_size >= len(pairs):
        return list(pairs)
    idx = seeding.stream(seed, "batch", step).choice(len(pairs), size=batch_size, replace=False)
    return [pairs[i] for i in idx]


def irpm_train_step(
    state: TrainState,
    batch_pairs: Sequence[PreferencePair],
    reward_config: RewardConfig,
    grpo_config: GRPOConfig,
    seed: int,
    keep_raw: bool = False,
) -> StepDiagnostics:
    """Sample, reward, normalise and apply one update; mutates ``state``.

    Each pair draws its rollouts from its own stream keyed by
    ``(seed, step, pair_id)``.  Pairs with no definable reward are logged,
    counted in ``skipped`` and left out of the objective.
    """
    if not batch_pairs:
        raise ValueError("batch must not be empty")
    policy, ref = state.policy, state.reference
    G = int(grpo_config.group_size)
    ref_bin = ref.bin_log_probs()
    ref_fv, ref_fo = ref.format_log_probs()
    tables = SamplingTables.of(policy)
    row_h = row_entropies(policy)

    cols: dict[str, list] = {k: [] for k in (
        "rows", "bins", "format_ok", "advantages", "old_logp_format",
        "old_logp_bin", "ref_logp_format", "ref_logp_bin")}
    rewards_used: list[float] = []
    kl_terms: list[float] = []
    scores: list[float] = []
    entropies: list[float] = []
    raw_rows: list = []
    n_ok = n_total = 0
    skipped = 0
    groups = 0

    for pair in batch_pairs:
        rng = seeding.stream(seed, "rollout", state.step, pair.pair_id)
        sides = []
        for key in (pair.chosen_key, pair.rejected_key):
            row = policy.row(key)
            sides.append((row, sample_rollouts(policy, key, G, rng, tables)))
            entropies.append(float(row_h[row]))
            if keep_raw:
                raw_rows.append([float(policy.format_logits[row]), policy.logits[row].tolist()])
        state.scorer_calls += 2 * G
        for _, rolls in sides:
            for o, _, _ in rolls:
                n_total += 1
                n_ok += o.format_ok
                if o.score is not None:
                    scores.append(o.score)
        try:
            totals = total_rewards(
                [o for o, _, _ in sides[0][1]],
                [o for o, _, _ in sides[1][1]],
                reward_config,
                pair.strength,
            )
        except SkippedPair as exc:
            log.info("step %d: skipping pair %s: %s", state.step, pair.pair_id, exc)
            skipped += 1
            continue

        for (row, rolls), rew in zip(sides, (totals.chosen, totals.rejected)):
            groups += 1
            adv = normalize_advantages(rew, grpo_config)
            rewards_used.extend(rew.tolist())
            for (o, lf, lb), a in zip(rolls, adv):
                rf = float(ref_fo[row] if o.format_ok else ref_fv[row])
                rb = float(ref_bin[row, o.bin_index])
                cols["rows"].append(row)
                cols["bins"].append(o.bin_index)
                cols["format_ok"].append(int(o.format_ok))
                cols["advantages"].append(a)
                cols["old_logp_format"].append(lf)
                cols["old_logp_bin"].append(lb)
                cols["ref_logp_format"].append(rf)
                cols["ref_logp_bin"].append(rb)
                kl_terms.append(kl_estimate(lf, rf))
                kl_terms.append(kl_estimate(lb, rb))

    grad_norm = 0.0
    if groups:
        n = len(cols["rows"])
        batch = RolloutBatch(
            **{k: np.asarray(v) for k, v in cols.items()},
            weights=np.full(n, 1.0 / (groups * G)),
            group_size=G,
        )
        grad = objective_gradient(policy, batch, grpo_config)
        grad_norm = grad.norm()
        scale = min(1.0, grpo_config.max_grad_norm / grad_norm) if grad_norm > 0 else 0.0
        if scale > 0:
            policy.logits += grpo_config.learning_rate * scale * grad.logits
            policy.format_logits += grpo_config.learning_rate * scale * grad.format_logits

    diag = StepDiagnostics(
        step=state.step,
        mean_reward=float(np.mean(rewards_used)) if rewards_used else None,
        kl=float(np.mean(kl_terms)) if kl_terms else None,
        entropy=float(np.mean(entropies)),
        score_variance=float(np.var(scores)) if scores else None,
        scorer_calls=state.scorer_calls,
        skipped=skipped,
        format_ok_rate=n_ok / n_total,
        grad_norm=grad_norm,
    )
    if keep_raw:
        diag.raw = {
            "step": state.step,
            "scores": scores,
            "rows": raw_rows,
            "temperature": policy.temperature,
        }
    state.history.append(diag)
    state.step += 1
    return diag


def train(
    pairs: Sequence[PreferencePair],
    reward_config: RewardConfig,
    grpo_config: GRPOConfig,
    steps: int,
    batch_size: int,
    seed: int,
    state: TrainState | None = None,
    keep_raw: bool = False,
    on_step: Callable[[StepDiagnostics], None] | None = None,
    **init_kwargs,
) -> TrainState:
    """Flat loop of ``steps`` updates over seeded minibatches."""
    if not pairs:
        raise ValueError("no training pairs")
    if state is None:
        state = TrainState.initial(pairs, **init_kwargs)
    for _ in range(steps):
        batch = select_batch(pairs, batch_size, seed, state.step)
        diag = irpm_train_step(state, batch, reward_config, grpo_config, seed, keep_raw=keep_raw)
        if on_step is not None:
            on_step(diag)
    return state
