"""Tabular stochastic scorer standing in for a generative reward model.

Each (prompt, response) key owns a row of logits over evenly spaced score bins
and one format logit.  A rollout is a two-token sequence: a format token
(valid / violating) followed by a score-bin token, sampled independently.
Unknown keys share row 0, the default row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from . import _backend
from .rewards import RolloutOutcome

__all__ = [
    "ScoreBinGrid",
    "ToyScorerPolicy",
    "RolloutBatch",
    "PolicyGradient",
    "sample_rollout",
    "sample_rollouts",
    "log_prob",
    "entropy",
    "row_entropies",
    "SamplingTables",
    "expected_score",
    "objective_gradient",
]

Key = tuple[str, str]

# Probability that a format-violating rollout also loses its score.
ABSENT_SCORE_PROB = 0.5


@dataclass(frozen=True)
class ScoreBinGrid:
    step: float = 0.5
    low: float = 0.0
    high: float = 10.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("bin step must be positive")
        n = (self.high - self.low) / self.step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("bin step must divide the score range evenly")

    @property
    def n_bins(self) -> int:
        return int(round((self.high - self.low) / self.step)) + 1

    @property
    def values(self) -> np.ndarray:
        return self.low + self.step * np.arange(self.n_bins, dtype=np.float64)

    def index_of(self, score: float) -> int:
        pos = (score - self.low) / self.step
        idx = int(round(pos))
        if abs(pos - idx) > 1e-9 or not 0 <= idx < self.n_bins:
            raise ValueError(f"score {score!r} is not on the {self.step} grid over [{self.low}, {self.high}]")
        return idx


class ToyScorerPolicy:
    """Per-key categorical score distribution plus a format-validity Bernoulli."""

    def __init__(
        self,
        keys: Iterable[Key] = (),
        grid: ScoreBinGrid | None = None,
        temperature: float = 1.0,
        init_format_logit: float = 0.0,
    ):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.grid = grid or ScoreBinGrid()
        self.temperature = float(temperature)
        self.index: dict[Key, int] = {}
        for k in keys:
            k = (str(k[0]), str(k[1]))
            if k not in self.index:
                self.index[k] = len(self.index) + 1
        n = len(self.index) + 1
        self.logits = np.zeros((n, self.grid.n_bins))
        self.format_logits = np.full(n, float(init_format_logit))

    @property
    def n_rows(self) -> int:
        return self.logits.shape[0]

    def row(self, key: Key) -> int:
        return self.index.get((key[0], key[1]), 0)

    def copy(self) -> "ToyScorerPolicy":
        new = ToyScorerPolicy(grid=self.grid, temperature=self.temperature)
        new.index = dict(self.index)
        new.logits = self.logits.copy()
        new.format_logits = self.format_logits.copy()
        return new

    # exact distribution queries -------------------------------------------------

    def _log_probs(self, row: int | None):
        if row is None:
            return _backend.kernels.log_probs(self.logits, self.format_logits, self.temperature)
        lb, lv, lo = _backend.kernels.log_probs(
            self.logits[row : row + 1], self.format_logits[row : row + 1], self.temperature
        )
        return lb[0], lv[0], lo[0]

    def bin_log_probs(self, row: int | None = None) -> np.ndarray:
        return self._log_probs(row)[0]

    def format_log_probs(self, row: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(log p(violating), log p(valid))`` for one row or all rows."""
        return self._log_probs(row)[1:]

    def format_ok_prob(self, key: Key) -> float:
        return float(np.exp(self.format_log_probs(self.row(key))[1]))

    # checkpoints -----------------------------------------------------------------

    def save(self, stream: IO[str]) -> None:
        meta = {
            "type": "meta",
            "bin_step": self.grid.step,
            "n_bins": self.grid.n_bins,
            "temperature": self.temperature,
        }
        stream.write(json.dumps(meta, sort_keys=True) + "\n")
        keys = [None] + sorted(self.index, key=self.index.get)
        for r, k in enumerate(keys):
            rec = {
                "key": None if k is None else list(k),
                "logits": self.logits[r].tolist(),
                "format_logit": float(self.format_logits[r]),
            }
            stream.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, stream: IO[str]) -> "ToyScorerPolicy":
        lines = [json.loads(s) for s in stream if s.strip()]
        if not lines or lines[0].get("type") != "meta":
            raise ValueError("checkpoint must start with a meta record")
        meta, rows = lines[0], lines[1:]
        if not rows or rows[0]["key"] is not None:
            raise ValueError("checkpoint must contain the default row first")
        policy = cls(
            keys=[tuple(r["key"]) for r in rows[1:]],
            grid=ScoreBinGrid(step=meta["bin_step"]),
            temperature=meta["temperature"],
        )
        if len(policy.index) != len(rows) - 1:
            raise ValueError("duplicate keys in checkpoint")
        policy.logits = np.array([r["logits"] for r in rows], dtype=np.float64)
        policy.format_logits = np.array([r["format_logit"] for r in rows], dtype=np.float64)
        if policy.logits.shape[1] != policy.grid.n_bins:
            raise ValueError("logit width does not match the bin grid")
        return policy


def _draw(u: np.ndarray, cdf: np.ndarray, p_ok: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map rows of three uniforms to (format token, bin, score_absent)."""
    ok = u[:, 0] < p_ok
    b = np.minimum(np.searchsorted(cdf, u[:, 1] * cdf[-1], side="right"), cdf.size - 1)
    absent = ~ok & (u[:, 2] < ABSENT_SCORE_PROB)
    return ok, b, absent


@dataclass
class SamplingTables:
    """Per-row log-probabilities and CDFs, computed once per parameter state."""

    bin_logp: np.ndarray
    cdf: np.ndarray
    logp_violate: np.ndarray
    logp_ok: np.ndarray

    @classmethod
    def of(cls, policy: ToyScorerPolicy) -> "SamplingTables":
        bl = policy.bin_log_probs()
        lv, lo = policy.format_log_probs()
        return cls(bl, np.cumsum(np.exp(bl), axis=1), lv, lo)


def sample_rollouts(
    policy: ToyScorerPolicy,
    key: Key,
    n: int,
    rng: np.random.Generator,
    tables: SamplingTables | None = None,
):
    """Sample ``n`` rollouts for one key.

    Returns a list of ``(outcome, logp_format, logp_bin)``; the joint
    log-probability is the sum of the two token terms.  ``tables`` must be
    built from the policy's current parameters when given.
    """
    row = policy.row(key)
    if tables is None:
        bin_logp = policy.bin_log_probs(row)
        f_logp = policy.format_log_probs(row)
        cdf = np.cumsum(np.exp(bin_logp))
    else:
        bin_logp = tables.bin_logp[row]
        f_logp = (tables.logp_violate[row], tables.logp_ok[row])
        cdf = tables.cdf[row]
    f_logp = (float(f_logp[0]), float(f_logp[1]))
    values = policy.grid.values
    p_ok = math.exp(f_logp[1])
    ok, bins, absent = _draw(rng.random((n, 3)), cdf, p_ok)
    out = []
    for o, b, a in zip(ok.tolist(), bins.tolist(), absent.tolist()):
        outcome = RolloutOutcome(None if a else float(values[b]), o, b)
        out.append((outcome, f_logp[o], float(bin_logp[b])))
    return out


def sample_rollout(policy: ToyScorerPolicy, key: Key, rng: np.random.Generator) -> tuple[RolloutOutcome, float]:
    """Sample one rollout and return it with its joint log-probability."""
    outcome, lf, lb = sample_rollouts(policy, key, 1, rng)[0]
    return outcome, lf + lb


def _bin_of(policy: ToyScorerPolicy, outcome: RolloutOutcome) -> int:
    if outcome.bin_index is not None:
        if outcome.score is not None and policy.grid.index_of(outcome.score) != outcome.bin_index:
            raise ValueError("outcome score disagrees with its bin index")
        return outcome.bin_index
    if outcome.score is None:
        raise ValueError("cannot evaluate an outcome with neither score nor bin index")
    return policy.grid.index_of(outcome.score)


def log_prob(policy: ToyScorerPolicy, key: Key, outcome: RolloutOutcome) -> float:
    """Exact joint log-probability of the (format, bin) tokens of ``outcome``."""
    row = policy.row(key)
    b = _bin_of(policy, outcome)
    f_logp = policy.format_log_probs(row)
    return float(f_logp[int(outcome.format_ok)]) + float(policy.bin_log_probs(row)[b])


def entropy(policy: ToyScorerPolicy, key: Key) -> float:
    """Shannon entropy (nats) of the joint format x bin distribution."""
    row = policy.row(key)
    lb = policy.bin_log_probs(row)
    h_bins = -float(np.sum(np.exp(lb) * lb))
    lv, lo = (float(v) for v in policy.format_log_probs(row))
    h_fmt = -(math.exp(lv) * lv + math.exp(lo) * lo)
    return h_bins + h_fmt


def row_entropies(policy: ToyScorerPolicy) -> np.ndarray:
    """Joint entropy for every row at once."""
    lb = policy.bin_log_probs()
    lv, lo = policy.format_log_probs()
    return -np.sum(np.exp(lb) * lb, axis=1) - (np.exp(lv) * lv + np.exp(lo) * lo)


def expected_score(policy: ToyScorerPolicy, key: Key) -> float:
    p = np.exp(policy.bin_log_probs(policy.row(key)))
    return float(np.dot(p, policy.grid.values) / p.sum())


@dataclass
class RolloutBatch:
    """Flat arrays describing sampled rollouts and their advantages.

    ``weights`` carries each rollout's share of the objective (one over the
    group size times one over the number of groups in the update).
    """

    rows: np.ndarray
    bins: np.ndarray
    format_ok: np.ndarray
    advantages: np.ndarray
    weights: np.ndarray
    old_logp_format: np.ndarray
    old_logp_bin: np.ndarray
    ref_logp_format: np.ndarray
    ref_logp_bin: np.ndarray
    group_size: int = 0

    def __post_init__(self):
        n = len(self.rows)
        for name in ("bins", "format_ok", "advantages", "weights", "old_logp_format",
                     "old_logp_bin", "ref_logp_format", "ref_logp_bin"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        for name in ("old_logp_format", "old_logp_bin", "ref_logp_format", "ref_logp_bin"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite log-probabilities")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class PolicyGradient:
    objective: float
    logits: np.ndarray
    format_logits: np.ndarray = field(repr=False)

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.logits**2) + np.sum(self.format_logits**2)))


def objective_gradient(policy: ToyScorerPolicy, batch: RolloutBatch, grpo_config) -> PolicyGradient:
    """Exact gradient of the clipped surrogate minus the KL penalty.

    Both tokens of a rollout share its advantage and the two per-token terms
    are averaged.  Rows not touched by the batch get zero gradient.
    """
    obj, gl, gf = _backend.kernels.surrogate_objective(
        policy.logits,
        policy.format_logits,
        np.asarray(batch.rows, dtype=np.int64),
        np.asarray(batch.bins, dtype=np.int64),
        np.asarray(batch.format_ok, dtype=np.int64),
        batch.advantages,
        batch.weights,
        batch.old_logp_format,
        batch.old_logp_bin,
        batch.ref_logp_format,
        batch.ref_logp_bin,
        policy.temperature,
        grpo_config.clip_epsilon,
        grpo_config.kl_beta,
        True,
    )
    return PolicyGradient(obj, gl, gf)


def objective_value(policy: ToyScorerPolicy, batch: RolloutBatch, grpo_config) -> float:
    return _backend.kernels.surrogate_objective(
        policy.logits, policy.format_logits,
        np.asarray(batch.rows, dtype=np.int64), np.asarray(batch.bins, dtype=np.int64),
        np.asarray(batch.format_ok, dtype=np.int64), batch.advantages, batch.weights,
        batch.old_logp_format, batch.old_logp_bin, batch.ref_logp_format, batch.ref_logp_bin,
        policy.temperature, grpo_config.clip_epsilon, grpo_config.kl_beta, False,
    )[0]
