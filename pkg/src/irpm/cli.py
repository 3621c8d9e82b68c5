"""Command-line entry point: ``irpm {gen-data,filter,train,eval,reward,report}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import IO, Sequence

from . import _backend
from .config import ConfigError, RunConfig, load_config
from .data import (
    DatasetError,
    dump_dataset,
    dump_utilities,
    filter_dataset,
    load_dataset,
    load_utilities,
    make_synthetic_dataset,
)
from .evaluation import (
    ConstantScorer,
    ExpectedScoreScorer,
    PolicyScorer,
    UtilityScorer,
    evaluate_pairs,
)
from .grpo import TrainState, train
from .policy import ScoreBinGrid, ToyScorerPolicy
from .rewards import RewardConfig, RewardVariant, RolloutOutcome, SkippedPair, total_rewards

log = logging.getLogger("irpm")

CURVE_FIELDS = ("mean_reward", "kl", "entropy", "score_variance", "scorer_calls")


class CommandError(RuntimeError):
    """Fatal error for the current command; reported on stderr with exit status 1."""


class _Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.out / p

    def input(self, name: str, what: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise CommandError(f"{what} not found: {p}")
        return p

    def open_out(self, name: str) -> IO[str]:
        p = self.path(name)
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            return open(p, "w", encoding="utf-8", newline="\n")
        except OSError as exc:
            raise CommandError(f"cannot write {p}: {exc}") from exc


def _load_pairs(path: Path):
    try:
        return load_dataset(str(path))
    except DatasetError as exc:
        raise CommandError(f"{path}: {exc}") from exc


def cmd_gen_data(run: _Run) -> int:
    g = run.cfg.gen_data
    task = make_synthetic_dataset(g.n_pairs, run.cfg.seed, g.utility_noise)
    with run.open_out(g.output) as fh:
        dump_dataset(task.pairs, fh)
    with run.open_out(g.utility_output) as fh:
        dump_utilities(task.utility, fh)
    print(f"wrote {len(task.pairs)} pairs to {run.path(g.output)}")
    return 0


def cmd_filter(run: _Run) -> int:
    f = run.cfg.filter
    pairs = _load_pairs(run.input(f.input, "dataset"))
    kept, stats = filter_dataset(pairs, f.policy())
    with run.open_out(f.output) as fh:
        dump_dataset(kept, fh)
    print(json.dumps({"input": len(pairs), "kept": len(kept), "dropped": stats}, sort_keys=True))
    return 0


def cmd_train(run: _Run) -> int:
    cfg, t = run.cfg, run.cfg.train
    pairs = _load_pairs(run.input(t.dataset, "dataset"))
    if not pairs:
        raise CommandError("dataset is empty")
    reward_cfg, grpo_cfg = cfg.reward.build(), cfg.grpo.build()
    state = TrainState.initial(
        pairs,
        grid=ScoreBinGrid(step=t.bin_step),
        temperature=t.temperature,
        init_format_logit=t.init_format_logit,
    )
    raw_fh = run.open_out(t.raw_log) if t.raw_log else None
    skipped = 0
    with run.open_out(t.diagnostics) as diag_fh:

        def on_step(d):
            nonlocal skipped
            skipped += d.skipped
            diag_fh.write(json.dumps(d.to_record(), sort_keys=True) + "\n")
            if raw_fh is not None:
                raw_fh.write(json.dumps(d.raw, sort_keys=True) + "\n")
            d.raw = None

        try:
            train(pairs, reward_cfg, grpo_cfg, t.steps, t.batch_size, cfg.seed,
                  state=state, keep_raw=raw_fh is not None, on_step=on_step)
        finally:
            if raw_fh is not None:
                raw_fh.close()

    with run.open_out(t.checkpoint) as fh:
        state.policy.save(fh)
    per_step = min(t.batch_size, len(pairs))
    summary = {
        "steps": t.steps,
        "pairs": len(pairs),
        "pairs_per_step": per_step,
        "group_size": grpo_cfg.group_size,
        "scorer_calls": state.scorer_calls,
        "skipped_pairs": skipped,
        "variant": reward_cfg.variant.value,
        "seed": cfg.seed,
        "epochs": t.epochs,
        "mini_batch_size": t.mini_batch_size,
    }
    with run.open_out(t.summary) as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"trained {t.steps} steps; scorer calls {state.scorer_calls}; checkpoint {run.path(t.checkpoint)}")
    return 0


def _make_scorer(run: _Run):
    e = run.cfg.eval
    if e.scorer == "constant":
        return ConstantScorer(e.constant_score)
    if e.scorer == "utility":
        return UtilityScorer(load_utilities(str(run.input(e.utility, "utility table"))))
    with open(run.input(e.checkpoint, "checkpoint"), encoding="utf-8") as fh:
        try:
            policy = ToyScorerPolicy.load(fh)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise CommandError(f"corrupt checkpoint: {exc}") from exc
    return PolicyScorer(policy) if e.scorer == "policy" else ExpectedScoreScorer(policy)


def cmd_eval(run: _Run) -> int:
    e = run.cfg.eval
    pairs = _load_pairs(run.input(e.dataset, "dataset"))
    if not pairs:
        raise CommandError("dataset is empty")
    scorer = _make_scorer(run)
    with run.open_out(e.summary) as summ, run.open_out(e.detail) as detail:
        for protocol in e.protocols(run.cfg.seed):
            report = evaluate_pairs(scorer, pairs, protocol)
            summ.write(json.dumps({"scorer": e.scorer, **report.summary()}, sort_keys=True) + "\n")
            report.write_detail(detail)
            print(f"voting@{protocol.n_votes}: accuracy {report.accuracy:.4f} tie_rate {report.tie_rate:.4f} "
                  f"({report.n_pairs} pairs)")
    return 0


# streaming reward ---------------------------------------------------------------

def _outcome(rec) -> RolloutOutcome:
    if rec is None or isinstance(rec, (int, float)) and not isinstance(rec, bool):
        return RolloutOutcome(None if rec is None else float(rec), rec is not None)
    if not isinstance(rec, dict):
        raise ValueError(f"bad outcome {rec!r}")
    score = rec.get("score")
    if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
        raise ValueError(f"bad score {score!r}")
    ok = rec.get("format_ok", score is not None)
    if not isinstance(ok, bool):
        raise ValueError(f"format_ok must be a boolean, got {ok!r}")
    return RolloutOutcome(None if score is None else float(score), ok)


def reward_record(rec: dict, defaults: RewardConfig) -> dict:
    """Evaluate one batch-interface record; raises ``ValueError`` on bad input."""
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    known = {"variant", "delta", "strength", "chosen_outcomes", "rejected_outcomes", "id"}
    unknown = sorted(set(rec) - known)
    if unknown:
        raise ValueError(f"unknown field(s): {', '.join(unknown)}")
    for k in ("chosen_outcomes", "rejected_outcomes"):
        if not isinstance(rec.get(k), list) or not rec[k]:
            raise ValueError(f"{k} must be a non-empty list")
    cfg = RewardConfig(
        variant=RewardVariant.parse(rec.get("variant", defaults.variant)),
        margin_delta=float(rec.get("delta", defaults.margin_delta)),
        adaptive_margin=defaults.adaptive_margin,
        ci_alpha=defaults.ci_alpha,
        format_penalty=defaults.format_penalty,
        sigmoid_temperature=defaults.sigmoid_temperature,
    )
    strength = rec.get("strength")
    if strength is not None and (isinstance(strength, bool) or strength not in (0, 1, 2, 3)):
        raise ValueError(f"strength must be in 0..3, got {strength!r}")
    res = total_rewards(
        [_outcome(o) for o in rec["chosen_outcomes"]],
        [_outcome(o) for o in rec["rejected_outcomes"]],
        cfg,
        strength,
    )
    out = {
        "chosen_rewards": res.chosen.tolist(),
        "rejected_rewards": res.rejected.tolist(),
        "estimate": res.estimate,
    }
    if "id" in rec:
        out["id"] = rec["id"]
    return out


def cmd_reward(run: _Run, stdin: IO[str], stdout: IO[str]) -> int:
    defaults = run.cfg.reward.build()
    n = failed = 0
    for line_no, line in enumerate(stdin, start=1):
        if not line.strip():
            continue
        n += 1
        try:
            out = reward_record(json.loads(line), defaults)
        except (ValueError, SkippedPair) as exc:
            failed += 1
            out = {"line": line_no, "error": str(exc)}
        stdout.write(json.dumps(out, sort_keys=True) + "\n")
        stdout.flush()
    return 1 if n and failed == n else 0


# report --------------------------------------------------------------------------

def _read_jsonl(path: Path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(s) for s in fh if s.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read {path}: {exc}") from exc


def _labels(paths: Sequence[Path], given: Sequence[str]) -> list[str]:
    if given:
        if len(given) != len(paths):
            raise CommandError("report.labels must match the number of input files")
        return list(given)
    parents = [p.parent.name or p.stem for p in paths]
    if len(set(parents)) == len(parents):
        return parents
    return [f"{p.stem}{i}" for i, p in enumerate(paths)]


def curves_table(runs: dict[str, list[dict]]) -> list[list]:
    """Rows of a per-step table; several runs sit side by side keyed by step."""
    single = len(runs) == 1
    header = ["step"]
    for label in runs:
        header += list(CURVE_FIELDS) if single else [f"{label}.{f}" for f in CURVE_FIELDS]
    by_step: dict[int, dict[str, dict]] = {}
    for label, recs in runs.items():
        for r in recs:
            if "step" not in r:
                raise CommandError(f"{label}: diagnostics record without a step")
            by_step.setdefault(int(r["step"]), {})[label] = r
    rows = [header]
    for step in sorted(by_step):
        row = [step]
        for label in runs:
            rec = by_step[step].get(label, {})
            row += ["" if rec.get(f) is None else rec[f] for f in CURVE_FIELDS]
        rows.append(row)
    return rows


def _write_csv(rows: list[list], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_report(run: _Run, inputs: Sequence[str]) -> int:
    rc = run.cfg.report
    if not inputs:
        diag_paths = [run.input(p, "diagnostics file") for p in rc.diagnostics]
        eval_paths = [run.input(p, "eval summary") for p in rc.evals]
        labels = list(rc.labels)
    else:
        diag_paths, eval_paths, labels = [], [], []
        for name in inputs:
            p = run.input(name, "report input")
            recs = _read_jsonl(p)
            if recs and "accuracy" in recs[0]:
                eval_paths.append(p)
            elif recs and "step" in recs[0]:
                diag_paths.append(p)
            else:
                raise CommandError(f"{p}: not a diagnostics or eval summary file")
    if not diag_paths and not eval_paths:
        raise CommandError("nothing to report")

    if diag_paths:
        names = _labels(diag_paths, labels if not eval_paths else [])
        runs = {n: _read_jsonl(p) for n, p in zip(names, diag_paths)}
        rows = curves_table(runs)
        with run.open_out(rc.curves_output) as fh:
            _write_csv(rows, fh)
        print(f"curves: {len(rows) - 1} steps x {len(runs)} run(s) -> {run.path(rc.curves_output)}")
    if eval_paths:
        names = _labels(eval_paths, [])
        rows = [["run", "scorer", "n_votes", "accuracy", "tie_rate", "n_pairs", "scorer_calls"]]
        for n, p in zip(names, eval_paths):
            for r in _read_jsonl(p):
                rows.append([n, r.get("scorer", ""), r["n_votes"], r["accuracy"], r["tie_rate"],
                             r["n_pairs"], r["scorer_calls"]])
        with run.open_out(rc.eval_output) as fh:
            _write_csv(rows, fh)
        print(f"eval: {len(rows) - 1} summaries -> {run.path(rc.eval_output)}")
    return 0


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irpm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "generate a synthetic preference dataset"),
        ("filter", "drop weak-preference and over-length pairs"),
        ("train", "train the toy scorer with intergroup rewards"),
        ("eval", "pairwise accuracy with tie credit and voting@n"),
        ("reward", "stream reward records from stdin to stdout"),
        ("report", "CSV curves and eval comparison tables"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", default=".", help="run directory for outputs and relative inputs")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="diagnostics or eval summary files")
    return parser


def main(argv: Sequence[str] | None = None, stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", _backend.name)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg.seed = args.seed
        run = _Run(cfg, Path(args.out))
        if args.command == "gen-data":
            return cmd_gen_data(run)
        if args.command == "filter":
            return cmd_filter(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run)
        if args.command == "reward":
            return cmd_reward(run, stdin or sys.stdin, stdout or sys.stdout)
        return cmd_report(run, args.inputs)
    except (ConfigError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
