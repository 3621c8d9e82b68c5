import io
import math

import numpy as np
import pytest

from irpm.grpo import GRPOConfig
from irpm.policy import (
    ABSENT_SCORE_PROB,
    RolloutBatch,
    ScoreBinGrid,
    ToyScorerPolicy,
    entropy,
    expected_score,
    log_prob,
    objective_gradient,
    objective_value,
    row_entropies,
    sample_rollout,
    sample_rollouts,
)
from irpm.rewards import RolloutOutcome, RewardVariant
from irpm.seeding import stream
from helpers import random_policy, sampled_batch
from oracles import joint_entropy, reference_objective

KEY = ("p", "r")


def degenerate(bin_value=7.0, format_logit=1000.0):
    policy = ToyScorerPolicy([KEY], init_format_logit=format_logit)
    policy.logits[:] = -1000.0
    policy.logits[:, policy.grid.index_of(bin_value)] = 0.0
    return policy


def test_grid():
    g = ScoreBinGrid()
    assert g.n_bins == 21 and g.values[0] == 0 and g.values[-1] == 10
    assert np.all(np.diff(g.values) > 0)
    assert g.index_of(7.0) == 14
    with pytest.raises(ValueError):
        g.index_of(7.25)
    with pytest.raises(ValueError):
        g.index_of(10.5)
    with pytest.raises(ValueError):
        ScoreBinGrid(step=0.3)


def test_degenerate_sample():
    outcome, logp = sample_rollout(degenerate(), KEY, stream(0))
    assert outcome.score == 7.0 and outcome.format_ok and logp == 0.0


def test_sampling_is_deterministic():
    policy, keys = random_policy(4, np.random.default_rng(1))
    a = [sample_rollout(policy, keys[2], stream(5, "x")) for _ in range(3)]
    b = [sample_rollout(policy, keys[2], stream(5, "x")) for _ in range(3)]
    assert a == b


def test_sampling_frequencies_match_pmf():
    policy, keys = random_policy(2, np.random.default_rng(11))
    key = keys[1]
    n = 100_000
    rolls = sample_rollouts(policy, key, n, stream(3, "freq"))
    p_bins = np.exp(policy.bin_log_probs(policy.row(key)))
    counts = np.bincount([o.bin_index for o, _, _ in rolls], minlength=p_bins.size)
    se = np.sqrt(n * p_bins * (1 - p_bins))
    assert np.all(np.abs(counts - n * p_bins) <= 3 * se)

    p_ok = policy.format_ok_prob(key)
    n_ok = sum(o.format_ok for o, _, _ in rolls)
    assert abs(n_ok - n * p_ok) <= 3 * math.sqrt(n * p_ok * (1 - p_ok))

    p_absent = (1 - p_ok) * ABSENT_SCORE_PROB
    n_absent = sum(o.score is None for o, _, _ in rolls)
    assert abs(n_absent - n * p_absent) <= 3 * math.sqrt(n * p_absent * (1 - p_absent))
    assert all(not o.format_ok for o, _, _ in rolls if o.score is None)


def test_log_prob_matches_sampled_logp_bitwise():
    policy, keys = random_policy(6, np.random.default_rng(2))
    rng = stream(9)
    for key in keys + [("unseen", "key")]:
        for _ in range(50):
            outcome, logp = sample_rollout(policy, key, rng)
            assert log_prob(policy, key, outcome) == logp


def test_log_prob_examples():
    uniform = ToyScorerPolicy([KEY], init_format_logit=1000.0)
    assert log_prob(uniform, KEY, RolloutOutcome(3.5, True)) == pytest.approx(-math.log(21), abs=1e-14)
    assert log_prob(degenerate(), KEY, RolloutOutcome(7.0, True)) == 0.0
    with pytest.raises(ValueError):
        log_prob(uniform, KEY, RolloutOutcome(7.25, True))
    with pytest.raises(ValueError):
        log_prob(uniform, KEY, RolloutOutcome(None, False))


def test_entropy_examples():
    assert entropy(degenerate(), KEY) == pytest.approx(0.0, abs=1e-12)
    uniform = ToyScorerPolicy([KEY], init_format_logit=0.0)
    assert entropy(uniform, KEY) == pytest.approx(math.log(21) + math.log(2), abs=1e-13)


def test_entropy_matches_oracle_and_bound():
    policy, keys = random_policy(8, np.random.default_rng(4), scale=3.0, temperature=0.7)
    rows = row_entropies(policy)
    for key in keys:
        r = policy.row(key)
        want = joint_entropy(policy.format_logits[r], policy.logits[r], policy.temperature)
        assert entropy(policy, key) == pytest.approx(want, abs=1e-12)
        assert rows[r] == pytest.approx(want, abs=1e-12)
        assert 0 <= want <= math.log(42)


def test_expected_score():
    assert expected_score(degenerate(), KEY) == 7.0
    assert expected_score(ToyScorerPolicy([KEY]), KEY) == pytest.approx(5.0, abs=1e-12)
    policy, keys = random_policy(6, np.random.default_rng(0), scale=4.0)
    for k in keys:
        assert 0 <= expected_score(policy, k) <= 10


def test_probabilities_normalised():
    policy, _ = random_policy(10, np.random.default_rng(5), scale=5.0)
    np.testing.assert_allclose(np.exp(policy.bin_log_probs()).sum(axis=1), 1.0, rtol=0, atol=1e-12)
    lv, lo = policy.format_log_probs()
    np.testing.assert_allclose(np.exp(lv) + np.exp(lo), 1.0, rtol=0, atol=1e-12)


def test_unknown_keys_share_default_row():
    policy, keys = random_policy(2, np.random.default_rng(0))
    assert policy.row(("nope", "x")) == policy.row(("other", "y")) == 0
    assert policy.row(keys[0]) != 0


def test_checkpoint_roundtrip_reproduces_sampling():
    policy, keys = random_policy(5, np.random.default_rng(8), temperature=1.3)
    buf = io.StringIO()
    policy.save(buf)
    buf.seek(0)
    loaded = ToyScorerPolicy.load(buf)
    np.testing.assert_array_equal(loaded.logits, policy.logits)
    np.testing.assert_array_equal(loaded.format_logits, policy.format_logits)
    assert loaded.index == policy.index and loaded.temperature == policy.temperature
    for key in keys:
        assert sample_rollouts(loaded, key, 20, stream(1, *key)) == sample_rollouts(policy, key, 20, stream(1, *key))


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        ToyScorerPolicy.load(io.StringIO('{"key": null, "logits": [], "format_logit": 0}\n'))


# --- objective and gradient -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_objective_matches_reference(seed, backend):
    policy, batch, cfg = sampled_batch(seed, "Preference")
    got = objective_value(policy, batch, cfg)
    want = reference_objective(policy.logits, policy.format_logits, batch, policy.temperature,
                               cfg.clip_epsilon, cfg.kl_beta)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-14)
    assert objective_gradient(policy, batch, cfg).objective == pytest.approx(got, rel=1e-14, abs=1e-15)


def finite_difference(policy, batch, cfg, h=1e-5):
    grads = []
    for arr in (policy.logits, policy.format_logits):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            x0 = arr[idx]
            arr[idx] = x0 + h
            fp = objective_value(policy, batch, cfg)
            arr[idx] = x0 - h
            fm = objective_value(policy, batch, cfg)
            arr[idx] = x0
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-8):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


@pytest.mark.parametrize("variant", list(RewardVariant))
def test_gradient_matches_finite_differences(variant, backend):
    for seed in range(3):
        policy, batch, cfg = sampled_batch(seed, variant)
        grad = objective_gradient(policy, batch, cfg)
        num_l, num_f = finite_difference(policy, batch, cfg)
        assert max_rel_err(grad.logits, num_l) < 1e-5
        assert max_rel_err(grad.format_logits, num_f) < 1e-5


def test_untouched_rows_get_zero_gradient():
    policy, batch, cfg = sampled_batch(0, "Mean", n_pairs=2)
    touched = set(batch.rows.tolist())
    grad = objective_gradient(policy, batch, cfg)
    for r in range(policy.n_rows):
        if r not in touched:
            assert not grad.logits[r].any() and grad.format_logits[r] == 0


def test_zero_advantage_zero_kl_gives_zero_gradient():
    policy, batch, _ = sampled_batch(1, "Mean")
    batch.advantages = np.zeros_like(batch.advantages)
    grad = objective_gradient(policy, batch, GRPOConfig(kl_beta=0.0))
    assert not grad.logits.any() and not grad.format_logits.any()


def on_policy_batch(seed, advantages=None):
    rng = np.random.default_rng(seed)
    policy, keys = random_policy(4, rng)
    rolls = []
    for key in keys:
        rolls += [(policy.row(key), r) for r in sample_rollouts(policy, key, 4, rng)]
    n = len(rolls)
    adv = rng.normal(size=n) if advantages is None else advantages
    batch = RolloutBatch(
        rows=np.array([r for r, _ in rolls]),
        bins=np.array([o.bin_index for _, (o, _, _) in rolls]),
        format_ok=np.array([int(o.format_ok) for _, (o, _, _) in rolls]),
        advantages=adv,
        weights=np.full(n, 1.0 / n),
        old_logp_format=np.array([lf for _, (_, lf, _) in rolls]),
        old_logp_bin=np.array([lb for _, (_, _, lb) in rolls]),
        ref_logp_format=np.array([lf for _, (_, lf, _) in rolls]),
        ref_logp_bin=np.array([lb for _, (_, _, lb) in rolls]),
    )
    return policy, batch


def plain_policy_gradient(policy, batch):
    """sum_i w_i A_i * mean_t grad log pi(token_t), written out directly."""
    gl = np.zeros_like(policy.logits)
    gf = np.zeros_like(policy.format_logits)
    T = policy.temperature
    for i in range(len(batch)):
        r, b = batch.rows[i], batch.bins[i]
        p = np.exp(policy.bin_log_probs(r))
        onehot = np.zeros_like(p)
        onehot[b] = 1.0
        scale = batch.weights[i] * batch.advantages[i] * 0.5
        gl[r] += scale * (onehot - p) / T
        p_ok = 1 / (1 + math.exp(-policy.format_logits[r] / T))
        gf[r] += scale * ((1.0 if batch.format_ok[i] else 0.0) - p_ok) / T
    return gl, gf


@pytest.mark.parametrize("seed", range(4))
def test_zero_clip_equals_plain_policy_gradient(seed, backend):
    policy, batch = on_policy_batch(seed)
    grad = objective_gradient(policy, batch, GRPOConfig(clip_epsilon=0.0, kl_beta=0.0))
    gl, gf = plain_policy_gradient(policy, batch)
    np.testing.assert_allclose(grad.logits, gl, rtol=0, atol=1e-9)
    np.testing.assert_allclose(grad.format_logits, gf, rtol=0, atol=1e-9)


def test_raising_advantage_raises_sampled_bin_gradient():
    policy, batch = on_policy_batch(3)
    cfg = GRPOConfig(kl_beta=0.0)
    i = 0
    r, b = batch.rows[i], batch.bins[i]
    base = objective_gradient(policy, batch, cfg).logits[r, b]
    batch.advantages = batch.advantages.copy()
    batch.advantages[i] += 1.0
    num = finite_difference(policy, batch, cfg)[0][r, b]
    raised = objective_gradient(policy, batch, cfg).logits[r, b]
    assert raised > base
    assert raised == pytest.approx(num, rel=1e-6)


def test_batch_validation():
    policy, batch = on_policy_batch(0)
    with pytest.raises(ValueError):
        RolloutBatch(batch.rows, batch.bins[:-1], batch.format_ok, batch.advantages, batch.weights,
                     batch.old_logp_format, batch.old_logp_bin, batch.ref_logp_format, batch.ref_logp_bin)
    bad = batch.old_logp_bin.copy()
    bad[0] = -np.inf
    with pytest.raises(ValueError):
        RolloutBatch(batch.rows, batch.bins, batch.format_ok, batch.advantages, batch.weights,
                     batch.old_logp_format, bad, batch.ref_logp_format, batch.ref_logp_bin)
