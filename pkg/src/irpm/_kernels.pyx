# cython: language_level=3
"""Compiled hot kernels: intergroup comparisons and the GRPO surrogate gradient.

Mirrors ``irpm._kernels_py`` exactly in signature and semantics.
"""

import numpy as np

from libc.math cimport exp, log, log1p, fabs


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _log_sigmoid(double x) nogil:
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


def intergroup_sigmoid(chosen, rejected, double temperature=1.0):
    cdef const double[::1] c = np.ascontiguousarray(chosen, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rejected, dtype=np.float64)
    cdef Py_ssize_t gc = c.shape[0], gr = r.shape[0], i, j
    rc_arr = np.zeros(gc)
    rr_arr = np.zeros(gr)
    cdef double[::1] rc = rc_arr
    cdef double[::1] rr = rr_arr
    cdef double v, row, total = 0.0
    with nogil:
        for i in range(gc):
            row = 0.0
            for j in range(gr):
                v = _sigmoid((c[i] - r[j]) / temperature)
                row += v
                rr[j] += v
            rc[i] = row / gr
            total += row
        for j in range(gr):
            rr[j] /= gc
    return rc_arr, rr_arr, total / (gc * gr)


def intergroup_indicator(chosen, rejected):
    cdef const double[::1] c = np.ascontiguousarray(chosen, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rejected, dtype=np.float64)
    cdef Py_ssize_t gc = c.shape[0], gr = r.shape[0], i, j
    cdef long long[::1] row_wins = np.zeros(gc, dtype=np.int64)
    cdef long long[::1] col_wins = np.zeros(gr, dtype=np.int64)
    cdef long long wins = 0
    with nogil:
        for i in range(gc):
            for j in range(gr):
                if c[i] > r[j]:
                    row_wins[i] += 1
                    col_wins[j] += 1
                    wins += 1
    return (
        np.asarray(row_wins, dtype=np.float64) / gr,
        np.asarray(col_wins, dtype=np.float64) / gc,
        int(wins),
    )


def threshold_rewards(chosen, rejected, double theta_chosen, double theta_rejected, double delta):
    cdef const double[::1] c = np.ascontiguousarray(chosen, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rejected, dtype=np.float64)
    cdef Py_ssize_t i
    rc_arr = np.empty(c.shape[0])
    rr_arr = np.empty(r.shape[0])
    cdef double[::1] rc = rc_arr
    cdef double[::1] rr = rr_arr
    cdef double hi = theta_rejected + delta
    cdef double lo = theta_chosen - delta
    for i in range(c.shape[0]):
        rc[i] = 1.0 if c[i] > hi else -1.0
    for i in range(r.shape[0]):
        rr[i] = 1.0 if r[i] < lo else -1.0
    return rc_arr, rr_arr


cdef inline double _row_sum(const double[:, ::1] z, Py_ssize_t rr, double temperature,
                           double* zmax_out) nogil:
    """Sum of exp(z/T - max) over one row; the max is written to ``zmax_out``."""
    cdef Py_ssize_t k, nb = z.shape[1]
    cdef double zmax = z[rr, 0] / temperature, s = 0.0
    for k in range(1, nb):
        if z[rr, k] / temperature > zmax:
            zmax = z[rr, k] / temperature
    for k in range(nb):
        s += exp(z[rr, k] / temperature - zmax)
    zmax_out[0] = zmax
    return s


def log_probs(logits, format_logits, double temperature):
    cdef const double[:, ::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[::1] fl = np.ascontiguousarray(format_logits, dtype=np.float64)
    cdef Py_ssize_t n = z.shape[0], nb = z.shape[1], r, k
    out_arr = np.empty((n, nb))
    lv_arr = np.empty(n)
    lo_arr = np.empty(n)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] lv = lv_arr
    cdef double[::1] lo = lo_arr
    cdef double zmax, lse, x
    with nogil:
        for r in range(n):
            lse = log(_row_sum(z, r, temperature, &zmax))
            lse = zmax + lse
            for k in range(nb):
                out[r, k] = z[r, k] / temperature - lse
            x = fl[r] / temperature
            lv[r] = _log_sigmoid(-x)
            lo[r] = _log_sigmoid(x)
    return out_arr, lv_arr, lo_arr


cdef inline double _token(double logp, double old, double ref, double adv,
                          double clip_epsilon, double kl_beta, double* dterm) nogil:
    cdef double ratio = exp(logp - old)
    cdef double cl = ratio
    if cl < 1.0 - clip_epsilon:
        cl = 1.0 - clip_epsilon
    elif cl > 1.0 + clip_epsilon:
        cl = 1.0 + clip_epsilon
    cdef double unclipped = ratio * adv
    cdef double clipped = cl * adv
    cdef double surr = unclipped if unclipped < clipped else clipped
    cdef double diff = ref - logp
    cdef double eref = exp(diff)
    cdef double kl = eref - diff - 1.0
    cdef double g = unclipped if unclipped <= clipped else 0.0
    dterm[0] = g - kl_beta * (1.0 - eref)
    return surr - kl_beta * kl


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
    double temperature,
    double clip_epsilon,
    double kl_beta,
    bint with_grad=True,
):
    cdef const double[:, ::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[::1] fl = np.ascontiguousarray(format_logits, dtype=np.float64)
    cdef const long long[::1] row = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const long long[::1] b = np.ascontiguousarray(bins, dtype=np.int64)
    cdef const long long[::1] ok = np.ascontiguousarray(fmt, dtype=np.int64)
    cdef const double[::1] adv = np.ascontiguousarray(advantages, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[::1] old_f = np.ascontiguousarray(old_logp_format, dtype=np.float64)
    cdef const double[::1] old_b = np.ascontiguousarray(old_logp_bin, dtype=np.float64)
    cdef const double[::1] ref_f = np.ascontiguousarray(ref_logp_format, dtype=np.float64)
    cdef const double[::1] ref_b = np.ascontiguousarray(ref_logp_bin, dtype=np.float64)

    cdef Py_ssize_t n = row.shape[0], nb = z.shape[1], i, k, rr
    grad_logits_arr = np.zeros((z.shape[0], nb)) if with_grad else None
    grad_format_arr = np.zeros(fl.shape[0]) if with_grad else None
    cdef double[:, ::1] gl
    cdef double[::1] gf
    if with_grad:
        gl = grad_logits_arr
        gf = grad_format_arr

    cdef double obj = 0.0, zmax, s, lse, logp_b, x, sx, logp_f, wt, dt_f, dt_b, e, sneg
    with nogil:
        for i in range(n):
            rr = row[i]
            wt = 0.5 * w[i]
            s = _row_sum(z, rr, temperature, &zmax)
            lse = log(s)
            lse = zmax + lse
            logp_b = z[rr, b[i]] / temperature - lse

            x = fl[rr] / temperature
            sx = x if ok[i] != 0 else -x
            logp_f = _log_sigmoid(sx)

            obj += wt * _token(logp_f, old_f[i], ref_f[i], adv[i], clip_epsilon, kl_beta, &dt_f)
            obj += wt * _token(logp_b, old_b[i], ref_b[i], adv[i], clip_epsilon, kl_beta, &dt_b)

            if with_grad:
                e = exp(-fabs(sx))
                sneg = e / (1.0 + e) if sx >= 0 else 1.0 / (1.0 + e)
                if ok[i] != 0:
                    gf[rr] += wt * dt_f * sneg / temperature
                else:
                    gf[rr] -= wt * dt_f * sneg / temperature
                dt_b = wt * dt_b / temperature
                for k in range(nb):
                    gl[rr, k] -= dt_b * exp(z[rr, k] / temperature - zmax) / s
                gl[rr, b[i]] += dt_b
    return obj, grad_logits_arr, grad_format_arr
