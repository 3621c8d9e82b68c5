"""Pure-Python (numpy) implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` extension; used when
the extension is unavailable or ``IRPM_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def intergroup_sigmoid(chosen, rejected, temperature=1.0):
    """Soft intergroup comparison matrix reduced to per-rollout rewards.

    Returns ``(chosen_rewards, rejected_rewards, estimate)`` where
    ``M[i, j] = sigmoid((chosen[i] - rejected[j]) / temperature)``, chosen
    rewards are row means, rejected rewards are column means and the estimate
    is the grand mean.
    """
    c = np.asarray(chosen, dtype=np.float64)
    r = np.asarray(rejected, dtype=np.float64)
    m = _sigmoid(np.subtract.outer(c, r) / temperature)
    return m.mean(axis=1), m.mean(axis=0), float(m.mean())


def intergroup_indicator(chosen, rejected):
    """Strict-win counts: returns ``(chosen_rewards, rejected_rewards, wins)``."""
    c = np.asarray(chosen, dtype=np.float64)
    r = np.asarray(rejected, dtype=np.float64)
    w = np.greater.outer(c, r)
    wins = int(w.sum())
    return w.sum(axis=1) / r.size, w.sum(axis=0) / c.size, wins


def threshold_rewards(chosen, rejected, theta_chosen, theta_rejected, delta):
    c = np.asarray(chosen, dtype=np.float64)
    r = np.asarray(rejected, dtype=np.float64)
    rc = np.where(c > theta_rejected + delta, 1.0, -1.0)
    rr = np.where(r < theta_chosen - delta, 1.0, -1.0)
    return rc, rr


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))


def _row_lse(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sz = ez.sum(axis=1, keepdims=True)
    return zmax[:, 0] + np.log(sz[:, 0]), ez, sz


def log_probs(logits, format_logits, temperature):
    """Per-row ``(bin log-probs, log p(violating), log p(valid))``.

    Shares its arithmetic with :func:`surrogate_objective` so that on-policy
    ratios are exactly 1.
    """
    z = np.asarray(logits, dtype=np.float64) / temperature
    lse = _row_lse(z)[0]
    x = np.asarray(format_logits, dtype=np.float64) / temperature
    return z - lse[:, None], _log_sigmoid(-x), _log_sigmoid(x)


def surrogate_objective(
    logits,
    format_logits,
    rows,
    bins,
    fmt,
    advantages,
    weights,
    old_logp_format,
    old_logp_bin,
    ref_logp_format,
    ref_logp_bin,
    temperature,
    clip_epsilon,
    kl_beta,
    with_grad=True,
):
    """Clipped surrogate minus KL over two-token rollouts (format, score bin).

    Each rollout contributes ``weight * 0.5 * sum_t (min(rho*A, clip(rho)*A) -
    beta * KL_t)``.  Returns ``(objective, grad_logits, grad_format)``; the
    gradient arrays are ``None`` when ``with_grad`` is false.
    """
    logits = np.asarray(logits, dtype=np.float64)
    format_logits = np.asarray(format_logits, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    bins = np.asarray(bins, dtype=np.int64)
    ok = np.asarray(fmt, dtype=np.int64) != 0
    adv = np.asarray(advantages, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64) * 0.5

    z = logits[rows] / temperature
    lse, ez, sz = _row_lse(z)
    n = rows.size
    logp_b = z[np.arange(n), bins] - lse

    x = format_logits[rows] / temperature
    signed = np.where(ok, x, -x)
    logp_f = _log_sigmoid(signed)

    obj = 0.0
    dterm = []
    for logp, old, ref in ((logp_f, old_logp_format, ref_logp_format), (logp_b, old_logp_bin, ref_logp_bin)):
        old = np.asarray(old, dtype=np.float64)
        ref = np.asarray(ref, dtype=np.float64)
        ratio = np.exp(logp - old)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
        surr = np.minimum(unclipped, clipped)
        diff = ref - logp
        eref = np.exp(diff)
        kl = eref - diff - 1.0
        obj += float(np.sum(w * (surr - kl_beta * kl)))
        g = np.where(unclipped <= clipped, unclipped, 0.0)
        dterm.append(w * (g - kl_beta * (1.0 - eref)))

    if not with_grad:
        return obj, None, None

    grad_logits = np.zeros_like(logits)
    grad_format = np.zeros_like(format_logits)

    # d log sigmoid(s) / ds = sigmoid(-s); s = +-x
    e = np.exp(-np.abs(signed))
    sig_neg = np.where(signed >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    dfmt = dterm[0] * sig_neg * np.where(ok, 1.0, -1.0) / temperature
    np.add.at(grad_format, rows, dfmt)

    probs = ez / sz
    jac = -probs
    jac[np.arange(n), bins] += 1.0
    np.add.at(grad_logits, rows, (dterm[1] / temperature)[:, None] * jac)
    return obj, grad_logits, grad_format
