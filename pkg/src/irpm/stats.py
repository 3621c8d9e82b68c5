"""Student t quantiles for integer degrees of freedom.

The two-sided probability ``A(t | df) = P(-t < T < t)`` has an exact finite
trigonometric series when ``df`` is a positive integer, so the CDF is exact to
rounding and the quantile follows from a bracketed Newton iteration.
"""

from __future__ import annotations

import math

__all__ = ["t_two_sided_prob", "t_pdf", "t_quantile"]


def _check_df(df: int) -> int:
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df!r}")
    return int(df)


def t_two_sided_prob(t: float, df: int) -> float:
    """Return ``P(-|t| < T < |t|)`` for a Student t variable with ``df`` dof."""
    df = _check_df(df)
    t = abs(t)
    if math.isinf(t):
        return 1.0
    theta = math.atan(t / math.sqrt(df))
    c2 = math.cos(theta) ** 2
    s = math.sin(theta)
    if df % 2 == 1:
        if df == 1:
            return 2.0 * theta / math.pi
        term = 1.0
        total = 1.0
        for k in range(1, (df - 1) // 2):
            term *= c2 * (2 * k) / (2 * k + 1)
            total += term
        return 2.0 / math.pi * (theta + s * math.cos(theta) * total)
    term = 1.0
    total = 1.0
    for k in range(1, df // 2):
        term *= c2 * (2 * k - 1) / (2 * k)
        total += term
    return s * total


def t_pdf(t: float, df: int) -> float:
    df = _check_df(df)
    log_norm = (
        math.lgamma((df + 1) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_norm - (df + 1) / 2.0 * math.log1p(t * t / df))


def t_quantile(p: float, df: int) -> float:
    """Inverse CDF of the Student t distribution, ``t_{p, df}``.

    >>> round(t_quantile(0.975, 1), 6)
    12.706205
    """
    df = _check_df(df)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    target = 2.0 * p - 1.0
    if df == 1:
        return math.tan(math.pi * target / 2.0)
    if df == 2:
        return target * math.sqrt(2.0 / (1.0 - target * target))

    # bracket then safeguarded Newton on A(t) - target
    lo, hi = 0.0, 1.0
    while t_two_sided_prob(hi, df) < target:
        lo, hi = hi, hi * 2.0
    t = 0.5 * (lo + hi)
    for _ in range(200):
        f = t_two_sided_prob(t, df) - target
        if f > 0:
            hi = t
        else:
            lo = t
        step = f / (2.0 * t_pdf(t, df))
        nxt = t - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - t) <= 1e-15 * max(1.0, abs(t)):
            return nxt
        t = nxt
    return t
