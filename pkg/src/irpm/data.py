"""Pairwise preference records: loading, filtering and synthetic generation."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

__all__ = [
    "DatasetError",
    "PreferencePair",
    "FilterPolicy",
    "SyntheticTask",
    "load_dataset",
    "dump_dataset",
    "filter_dataset",
    "prompt_length",
    "make_synthetic_dataset",
    "load_utilities",
    "dump_utilities",
]

STRENGTHS = (0, 1, 2, 3)

# Utility gaps cycled through by the synthetic generator (before noise).
GAP_SCHEDULE = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
_MIN_GAP = 0.05


class DatasetError(ValueError):
    """Raised when records fail validation; carries ``(line_no, message)`` pairs."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        lines = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        super().__init__(f"{len(errors)} invalid record(s): {lines}{more}")


@dataclass(frozen=True)
class PreferencePair:
    pair_id: str
    prompt: str
    chosen: str
    rejected: str
    strength: int | None = None

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")
        if self.strength is not None and (
            isinstance(self.strength, bool) or self.strength not in STRENGTHS
        ):
            raise ValueError(f"strength must be one of {STRENGTHS}, got {self.strength!r}")

    def to_record(self) -> dict:
        rec = {
            "pair_id": self.pair_id,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
        }
        if self.strength is not None:
            rec["strength"] = self.strength
        return rec

    @property
    def chosen_key(self) -> tuple[str, str]:
        return (self.prompt, self.chosen)

    @property
    def rejected_key(self) -> tuple[str, str]:
        return (self.prompt, self.rejected)


@dataclass(frozen=True)
class FilterPolicy:
    min_strength: int = 2
    max_prompt_length: int = 3072

    def __post_init__(self):
        if self.min_strength not in STRENGTHS:
            raise ValueError(f"min_strength must be one of {STRENGTHS}")
        if self.max_prompt_length <= 0:
            raise ValueError("max_prompt_length must be positive")


@dataclass
class SyntheticTask:
    pairs: list[PreferencePair]
    utility: dict[tuple[str, str], float]
    seed: int
    gaps: list[float] = field(default_factory=list)


def _parse_record(rec: object, line_no: int) -> PreferencePair:
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    missing = [k for k in ("prompt", "chosen", "rejected") if k not in rec]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    for k in ("prompt", "chosen", "rejected"):
        if not isinstance(rec[k], str):
            raise ValueError(f"field {k!r} must be a string")
    strength = rec.get("strength")
    if strength is not None:
        if isinstance(strength, bool) or not isinstance(strength, int):
            raise ValueError(f"strength must be an integer in 0..3, got {strength!r}")
        if strength not in STRENGTHS:
            raise ValueError(f"strength {strength} outside 0..3")
    pair_id = rec.get("pair_id", f"line-{line_no}")
    return PreferencePair(
        pair_id=str(pair_id),
        prompt=rec["prompt"],
        chosen=rec["chosen"],
        rejected=rec["rejected"],
        strength=strength,
    )


def load_dataset(source: IO[bytes] | IO[str] | bytes | str) -> list[PreferencePair]:
    """Parse line-delimited JSON preference records.

    ``source`` may be a binary or text stream, raw bytes, or a filesystem path.
    Blank lines are ignored.  All malformed lines are collected and reported
    together in a :class:`DatasetError`.
    """
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return load_dataset(fh)
    if isinstance(source, bytes):
        source = io.BytesIO(source)

    pairs: list[PreferencePair] = []
    errors: list[tuple[int, str]] = []
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                errors.append((line_no, f"not UTF-8: {exc}"))
                continue
        if not raw.strip():
            continue
        try:
            pairs.append(_parse_record(json.loads(raw), line_no))
        except (ValueError, json.JSONDecodeError) as exc:
            errors.append((line_no, str(exc)))
    if errors:
        raise DatasetError(errors)
    return pairs


def dump_dataset(pairs: Iterable[PreferencePair], stream: IO[str]) -> None:
    for p in pairs:
        stream.write(json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def prompt_length(prompt: str) -> int:
    """Whitespace-token count used for the prompt-length filter."""
    return len(prompt.split())


def filter_dataset(
    pairs: list[PreferencePair], policy: FilterPolicy = FilterPolicy()
) -> tuple[list[PreferencePair], dict[str, int]]:
    """Drop weak-preference and over-length pairs.

    Pairs without a strength annotation pass the strength filter.  A pair
    failing both checks is counted once, under ``low_strength``.
    """
    kept = []
    stats = {"low_strength": 0, "over_length": 0}
    for p in pairs:
        if p.strength is not None and p.strength < policy.min_strength:
            stats["low_strength"] += 1
        elif prompt_length(p.prompt) > policy.max_prompt_length:
            stats["over_length"] += 1
        else:
            kept.append(p)
    return kept, stats


def make_synthetic_dataset(n_pairs: int, seed: int, utility_noise: float = 0.0) -> SyntheticTask:
    """Generate pairs with hidden utilities on the 0-10 scale.

    Pair ``k`` gets utility gap ``GAP_SCHEDULE[k % 8]`` plus Gaussian noise of
    scale ``utility_noise`` (floored at a small positive gap), centred at a
    uniform midpoint that keeps both utilities inside [0, 10].  Pairs whose gap
    is at or above the median gap get strength 3, the rest strength 2.
    """
    if isinstance(n_pairs, bool) or int(n_pairs) != n_pairs or n_pairs < 1:
        raise ValueError("n_pairs must be a positive integer")
    if utility_noise < 0:
        raise ValueError("utility_noise must be nonnegative")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    n_pairs = int(n_pairs)
    rng = np.random.default_rng(seed)
    base = np.array([GAP_SCHEDULE[k % len(GAP_SCHEDULE)] for k in range(n_pairs)])
    noise = rng.standard_normal(n_pairs) * utility_noise if utility_noise > 0 else np.zeros(n_pairs)
    gaps = np.clip(base + noise, _MIN_GAP, 10.0)
    mids = gaps / 2 + rng.random(n_pairs) * (10.0 - gaps)
    flips = rng.random(n_pairs) < 0.5
    threshold = float(np.median(gaps))

    pairs, utility = [], {}
    width = max(4, len(str(n_pairs - 1)))
    for k in range(n_pairs):
        prompt = f"prompt-{k:0{width}d}"
        # which response label is the better one is randomised
        a, b = f"response-{k:0{width}d}-a", f"response-{k:0{width}d}-b"
        chosen, rejected = (b, a) if flips[k] else (a, b)
        hi, lo = float(mids[k] + gaps[k] / 2), float(mids[k] - gaps[k] / 2)
        utility[(prompt, chosen)] = hi
        utility[(prompt, rejected)] = lo
        pairs.append(
            PreferencePair(
                pair_id=f"pair-{k:0{width}d}",
                prompt=prompt,
                chosen=chosen,
                rejected=rejected,
                strength=3 if gaps[k] >= threshold else 2,
            )
        )
    return SyntheticTask(pairs=pairs, utility=utility, seed=seed, gaps=[float(g) for g in gaps])


def dump_utilities(utility: dict[tuple[str, str], float], stream: IO[str]) -> None:
    for (prompt, response), u in utility.items():
        stream.write(json.dumps({"prompt": prompt, "response": response, "utility": u}, sort_keys=True) + "\n")


def load_utilities(path: str) -> dict[tuple[str, str], float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[(rec["prompt"], rec["response"])] = float(rec["utility"])
    return out
