"""Pure-Python twin of ``_ckernels.pyx``.

Both modules expose the same three functions with identical semantics; the
compiled one is preferred at import time (see ``_backend``).
"""
import math

import numpy as np

LAMBDA_FLOOR = 1e-300


def _loglik_one(mu, delta, omega, times, lo, hi, t_end, order, grad, hess):
    """Log-likelihood of one sequence, writing derivatives in place.

    Returns ``(value, n_clamped)``.
    """
    value = -mu * t_end
    g_mu = -t_end
    g_d = 0.0
    g_w = 0.0
    h_mm = h_md = h_mw = h_dd = h_dw = h_ww = 0.0
    # compensator terms: sum(1 - e^{-w u}), sum(u e^{-w u}), sum(u^2 e^{-w u})
    c0 = c1 = c2 = 0.0
    # A = sum_{m<n} e^{-w d}, B = sum d e^{-w d}, C = sum d^2 e^{-w d}
    a = b = c = 0.0
    clamped = 0
    prev = 0.0
    for n in range(lo, hi):
        tn = times[n]
        u = t_end - tn
        eu = math.exp(-omega * u)
        c0 += 1.0 - eu
        if order > 0:
            c1 += u * eu
            if order > 1:
                c2 += u * u * eu
        if n > lo:
            d = tn - prev
            e = math.exp(-omega * d)
            c = e * (d * d * (1.0 + a) + 2.0 * d * b + c)
            b = e * (d * (1.0 + a) + b)
            a = e * (1.0 + a)
        prev = tn
        lam = mu + delta * omega * a
        if lam < LAMBDA_FLOOR:  # NaN falls through and is reported upstream
            lam = LAMBDA_FLOOR
            clamped += 1
        value += math.log(lam)
        if order > 0:
            inv = 1.0 / lam
            l_d = omega * a
            l_dw = a - omega * b
            l_w = delta * l_dw
            g_mu += inv
            g_d += l_d * inv
            g_w += l_w * inv
            if order > 1:
                inv2 = inv * inv
                h_mm -= inv2
                h_md -= l_d * inv2
                h_mw -= l_w * inv2
                h_dd -= l_d * l_d * inv2
                h_dw += l_dw * inv - l_d * l_w * inv2
                h_ww += delta * (omega * c - 2.0 * b) * inv - l_w * l_w * inv2
    value -= delta * c0
    if order > 0:
        grad[0] = g_mu
        grad[1] = g_d - c0
        grad[2] = g_w - delta * c1
        if order > 1:
            hess[0, 0] = h_mm
            hess[0, 1] = hess[1, 0] = h_md
            hess[0, 2] = hess[2, 0] = h_mw
            hess[1, 1] = h_dd
            hess[1, 2] = hess[2, 1] = h_dw - c1
            hess[2, 2] = h_ww + delta * c2
    return value, clamped


def loglik_batch(params, seq_idx, times, offsets, t_ends, order):
    """Evaluate ``R`` (params, sequence) pairs.

    params: (R, 3) rows of (mu, delta, omega); seq_idx: (R,) indices into the
    packed sequences ``times[offsets[s]:offsets[s+1]]`` with windows
    ``t_ends[s]``. ``order`` 0, 1 or 2 selects value, +gradient, +Hessian.
    Returns ``(values, grads, hessians, n_clamped)``.
    """
    n_rows = params.shape[0]
    values = np.empty(n_rows)
    grads = np.zeros((n_rows, 3))
    hessians = np.zeros((n_rows, 3, 3))
    times = times.tolist()
    clamped = 0
    for r in range(n_rows):
        s = seq_idx[r]
        v, cl = _loglik_one(
            float(params[r, 0]), float(params[r, 1]), float(params[r, 2]),
            times, int(offsets[s]), int(offsets[s + 1]), float(t_ends[s]),
            order, grads[r], hessians[r],
        )
        values[r] = v
        clamped += cl
    return values, grads, hessians, clamped


def intensity(mu, delta, omega, times, t):
    acc = 0.0
    for tm in times:
        if tm < t:
            acc += math.exp(-omega * (t - tm))
    return mu + delta * omega * acc


def thin(mu, delta, omega, t, t_end, excite, exps, unifs, out):
    """Resumable Ogata thinning.

    ``excite`` is the excitation part of the intensity just after time ``t``.
    Consumes one (exponential, uniform) pair per candidate and writes accepted
    times to ``out``. Returns ``(n_out, t, excite, n_used, finished)``.
    """
    jump = delta * omega
    n_out = 0
    n_used = 0
    n_draws = exps.shape[0]
    while n_used < n_draws:
        lam_bar = mu + excite
        w = exps[n_used] / lam_bar
        u = unifs[n_used]
        n_used += 1
        if t + w > t_end:
            return n_out, t_end, excite, n_used, True
        t += w
        excite *= math.exp(-omega * w)
        if u * lam_bar <= mu + excite:
            out[n_out] = t
            n_out += 1
            excite += jump
    return n_out, t, excite, n_used, False
