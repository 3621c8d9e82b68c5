"""Builders shared by several test modules."""

import numpy as np

from irpm.grpo import GRPOConfig, normalize_advantages
from irpm.policy import RolloutBatch, SamplingTables, ScoreBinGrid, ToyScorerPolicy, sample_rollouts
from irpm.rewards import RewardConfig, SkippedPair, total_rewards


def random_policy(n_keys, rng, scale=1.0, temperature=1.0, n_bins_step=0.5):
    keys = [(f"p{k // 2}", f"r{k}") for k in range(n_keys)]
    policy = ToyScorerPolicy(keys, grid=ScoreBinGrid(step=n_bins_step), temperature=temperature)
    policy.logits = rng.normal(0.0, scale, policy.logits.shape)
    policy.format_logits = rng.normal(0.5, 1.0, policy.format_logits.shape)
    return policy, keys


def sampled_batch(seed, variant, n_pairs=3, G=4, kl_beta=0.1, clip_epsilon=0.2, drift=0.3):
    """A small rollout batch built the way a training step builds it.

    Rollouts come from an ``old`` policy; the returned ``current`` policy is a
    perturbation of it so that ratios differ from 1 and some of them clip.
    """
    rng = np.random.default_rng(seed)
    old, keys = random_policy(2 * n_pairs, rng)
    ref, _ = random_policy(2 * n_pairs, rng)
    grpo = GRPOConfig(clip_epsilon=clip_epsilon, kl_beta=kl_beta, group_size=G)
    rcfg = RewardConfig(variant=variant)
    tables = SamplingTables.of(old)
    ref_bin = ref.bin_log_probs()
    ref_fv, ref_fo = ref.format_log_probs()
    cols = {k: [] for k in ("rows", "bins", "format_ok", "advantages", "old_logp_format",
                            "old_logp_bin", "ref_logp_format", "ref_logp_bin")}
    groups = 0
    for k in range(n_pairs):
        sides = [sample_rollouts(old, keys[2 * k + s], G, rng, tables) for s in (0, 1)]
        try:
            tot = total_rewards([o for o, _, _ in sides[0]], [o for o, _, _ in sides[1]], rcfg, 3)
        except SkippedPair:
            continue
        for s, rew in enumerate((tot.chosen, tot.rejected)):
            groups += 1
            row = old.row(keys[2 * k + s])
            for (o, lf, lb), a in zip(sides[s], normalize_advantages(rew, grpo)):
                cols["rows"].append(row)
                cols["bins"].append(o.bin_index)
                cols["format_ok"].append(int(o.format_ok))
                cols["advantages"].append(a)
                cols["old_logp_format"].append(lf)
                cols["old_logp_bin"].append(lb)
                cols["ref_logp_format"].append(float(ref_fo[row] if o.format_ok else ref_fv[row]))
                cols["ref_logp_bin"].append(float(ref_bin[row, o.bin_index]))
    n = len(cols["rows"])
    batch = RolloutBatch(**{k: np.asarray(v) for k, v in cols.items()},
                         weights=np.full(n, 1.0 / (max(groups, 1) * G)), group_size=G)
    current = old.copy()
    current.logits = current.logits + rng.normal(0.0, drift, current.logits.shape)
    current.format_logits = current.format_logits + rng.normal(0.0, drift, current.format_logits.shape)
    return current, batch, grpo
