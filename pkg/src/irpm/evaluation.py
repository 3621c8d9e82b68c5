"""Pairwise accuracy of pointwise scorers with tie credit and voting@n."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Protocol, Sequence

import numpy as np

from . import seeding
from .data import PreferencePair
from .policy import ToyScorerPolicy, expected_score, sample_rollout
from .rewards import RolloutOutcome

__all__ = [
    "Scorer",
    "PolicyScorer",
    "ExpectedScoreScorer",
    "UtilityScorer",
    "ConstantScorer",
    "EvalProtocol",
    "PairRecord",
    "EvalReport",
    "vote_score",
    "evaluate_pairs",
    "compare_call_budgets",
]

log = logging.getLogger(__name__)

TIE_CREDIT = 0.5
RETRY_BUDGET = 3
FAILED_VOTE_SCORE = 0.0


class Scorer(Protocol):
    def sample(self, key: tuple[str, str], rng: np.random.Generator) -> RolloutOutcome: ...


class PolicyScorer:
    """Draws a full rollout from a toy policy for every vote."""

    def __init__(self, policy: ToyScorerPolicy):
        self.policy = policy

    def sample(self, key, rng):
        return sample_rollout(self.policy, key, rng)[0]


class ExpectedScoreScorer:
    """Deterministic scorer returning the policy's expected score."""

    def __init__(self, policy: ToyScorerPolicy):
        self.policy = policy

    def sample(self, key, rng):
        return RolloutOutcome(expected_score(self.policy, key), True)


class UtilityScorer:
    """Oracle scorer backed by a ground-truth utility table."""

    def __init__(self, utility: dict[tuple[str, str], float]):
        self.utility = utility

    def sample(self, key, rng):
        return RolloutOutcome(float(self.utility[key]), True)


class ConstantScorer:
    def __init__(self, value: float = 5.0):
        self.value = float(value)

    def sample(self, key, rng):
        return RolloutOutcome(self.value, True)


@dataclass(frozen=True)
class EvalProtocol:
    n_votes: int = 1
    seed: int = 0
    retry_budget: int = RETRY_BUDGET

    def __post_init__(self):
        if isinstance(self.n_votes, bool) or int(self.n_votes) != self.n_votes or self.n_votes < 1:
            raise ValueError("n_votes must be a positive integer")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def tie_credit(self) -> float:
        return TIE_CREDIT


def _votes(scorer: Scorer, key, n_votes: int, rng, retry_budget: int) -> tuple[float, int, int]:
    """Returns ``(mean score, resamples, failed votes)``."""
    total = 0.0
    resamples = failures = 0
    for _ in range(n_votes):
        outcome = scorer.sample(key, rng)
        tries = 0
        while outcome.score is None and tries < retry_budget:
            outcome = scorer.sample(key, rng)
            tries += 1
        resamples += tries
        if outcome.score is None:
            failures += 1
            log.warning("vote for %r unparsable after %d retries; counting %.1f", key, retry_budget, FAILED_VOTE_SCORE)
            total += FAILED_VOTE_SCORE
        else:
            total += outcome.score
    return total / n_votes, resamples, failures


def vote_score(scorer: Scorer, key, n_votes: int, rng: np.random.Generator, retry_budget: int = RETRY_BUDGET) -> float:
    """Average of ``n_votes`` independently sampled scores (voting@n)."""
    if n_votes < 1:
        raise ValueError("n_votes must be at least 1")
    return _votes(scorer, key, n_votes, rng, retry_budget)[0]


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    chosen_score: float
    rejected_score: float
    verdict: str  # "win" | "tie" | "loss"

    @property
    def credit(self) -> float:
        return {"win": 1.0, "tie": TIE_CREDIT, "loss": 0.0}[self.verdict]

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "chosen_score": self.chosen_score,
            "rejected_score": self.rejected_score,
            "verdict": self.verdict,
        }


@dataclass
class EvalReport:
    accuracy: float
    tie_rate: float
    n_pairs: int
    scorer_calls: int
    n_votes: int
    wins: int
    ties: int
    losses: int
    resamples: int = 0
    failed_votes: int = 0
    records: list[PairRecord] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "tie_rate": self.tie_rate,
            "n_pairs": self.n_pairs,
            "scorer_calls": self.scorer_calls,
            "n_votes": self.n_votes,
            "wins": self.wins,
            "ties": self.ties,
            "losses": self.losses,
            "resamples": self.resamples,
            "failed_votes": self.failed_votes,
        }

    def write_detail(self, stream: IO[str]) -> None:
        for r in self.records:
            stream.write(json.dumps({**r.to_record(), "n_votes": self.n_votes}, sort_keys=True) + "\n")


def evaluate_pairs(scorer: Scorer, pairs: Sequence[PreferencePair], protocol: EvalProtocol = EvalProtocol()) -> EvalReport:
    """Score both sides of every pair and tally wins, exact-equality ties and losses.

    ``scorer_calls`` counts votes (2 x n_votes per pair); extra draws spent on
    unparsable outputs are reported separately as ``resamples``.
    """
    if not pairs:
        raise ValueError("no pairs to evaluate")
    records = []
    wins = ties = losses = resamples = failures = 0
    for p in pairs:
        rng = seeding.stream(protocol.seed, "eval", p.pair_id)
        sc, rs_c, f_c = _votes(scorer, p.chosen_key, protocol.n_votes, rng, protocol.retry_budget)
        sr, rs_r, f_r = _votes(scorer, p.rejected_key, protocol.n_votes, rng, protocol.retry_budget)
        resamples += rs_c + rs_r
        failures += f_c + f_r
        if sc > sr:
            verdict, wins = "win", wins + 1
        elif sc == sr:
            verdict, ties = "tie", ties + 1
        else:
            verdict, losses = "loss", losses + 1
        records.append(PairRecord(p.pair_id, sc, sr, verdict))
    n = len(pairs)
    return EvalReport(
        accuracy=(wins + TIE_CREDIT * ties) / n,
        tie_rate=ties / n,
        n_pairs=n,
        scorer_calls=2 * protocol.n_votes * n,
        n_votes=protocol.n_votes,
        wins=wins,
        ties=ties,
        losses=losses,
        resamples=resamples,
        failed_votes=failures,
        records=records,
    )


def compare_call_budgets(n_candidates: int, G: int) -> dict[str, int]:
    """Reward-model invocations needed to score ``n_candidates`` responses.

    ``pointwise`` scores each candidate once; ``round_robin`` judges every
    unordered pair; ``rrm_style`` judges each candidate against four sampled
    opponents.  ``G`` is the rollout group size and is accepted for symmetry
    with the training configuration (with ``n_candidates == G`` rollouts).
    """
    if n_candidates < 2:
        raise ValueError("need at least two candidates")
    if G < 1:
        raise ValueError("G must be positive")
    return {
        "pointwise": n_candidates,
        "round_robin": n_candidates * (n_candidates - 1) // 2,
        "rrm_style": 4 * n_candidates,
    }
