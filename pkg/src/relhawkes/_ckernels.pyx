# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Hawkes kernels; see ``_pykernels`` for the reference twin."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef double LAMBDA_FLOOR = 1e-300


cdef double _loglik_one(double mu, double delta, double omega,
                        const double[::1] times, Py_ssize_t lo, Py_ssize_t hi,
                        double t_end, int order, double[::1] grad,
                        double[:, ::1] hess, long *clamped) noexcept nogil:
    cdef double value = -mu * t_end
    cdef double g_mu = -t_end, g_d = 0.0, g_w = 0.0
    cdef double h_mm = 0.0, h_md = 0.0, h_mw = 0.0
    cdef double h_dd = 0.0, h_dw = 0.0, h_ww = 0.0
    cdef double c0 = 0.0, c1 = 0.0, c2 = 0.0
    cdef double a = 0.0, b = 0.0, c = 0.0
    cdef double prev = 0.0, tn, u, eu, d, e, lam, inv, inv2
    cdef double l_d, l_dw, l_w
    cdef Py_ssize_t n
    for n in range(lo, hi):
        tn = times[n]
        u = t_end - tn
        eu = exp(-omega * u)
        c0 += 1.0 - eu
        if order > 0:
            c1 += u * eu
            if order > 1:
                c2 += u * u * eu
        if n > lo:
            d = tn - prev
            e = exp(-omega * d)
            c = e * (d * d * (1.0 + a) + 2.0 * d * b + c)
            b = e * (d * (1.0 + a) + b)
            a = e * (1.0 + a)
        prev = tn
        lam = mu + delta * omega * a
        if lam < LAMBDA_FLOOR:  # NaN falls through and is reported upstream
            lam = LAMBDA_FLOOR
            clamped[0] += 1
        value += log(lam)
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
            hess[0, 1] = h_md
            hess[1, 0] = h_md
            hess[0, 2] = h_mw
            hess[2, 0] = h_mw
            hess[1, 1] = h_dd
            hess[1, 2] = h_dw - c1
            hess[2, 1] = h_dw - c1
            hess[2, 2] = h_ww + delta * c2
    return value


def loglik_batch(params, seq_idx, times, offsets, t_ends, int order):
    cdef const double[:, ::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef const long long[::1] idx = np.ascontiguousarray(seq_idx, dtype=np.int64)
    cdef const double[::1] tt = np.ascontiguousarray(times, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[::1] te = np.ascontiguousarray(t_ends, dtype=np.float64)
    cdef Py_ssize_t n_rows = p.shape[0], r, s
    values_arr = np.empty(n_rows)
    grads_arr = np.zeros((n_rows, 3))
    hess_arr = np.zeros((n_rows, 3, 3))
    cdef double[::1] values = values_arr
    cdef double[:, ::1] grads = grads_arr
    cdef double[:, :, ::1] hess = hess_arr
    cdef long clamped = 0
    with nogil:
        for r in range(n_rows):
            s = idx[r]
            values[r] = _loglik_one(p[r, 0], p[r, 1], p[r, 2], tt, off[s],
                                    off[s + 1], te[s], order, grads[r],
                                    hess[r], &clamped)
    return values_arr, grads_arr, hess_arr, int(clamped)


def intensity(double mu, double delta, double omega, times, double t):
    cdef const double[::1] tt = np.ascontiguousarray(times, dtype=np.float64)
    cdef double acc = 0.0
    cdef Py_ssize_t m
    for m in range(tt.shape[0]):
        if tt[m] < t:
            acc += exp(-omega * (t - tt[m]))
    return mu + delta * omega * acc


def thin(double mu, double delta, double omega, double t, double t_end,
         double excite, const double[::1] exps, const double[::1] unifs,
         double[::1] out):
    cdef double jump = delta * omega
    cdef Py_ssize_t n_out = 0, n_used = 0, n_draws = exps.shape[0]
    cdef double lam_bar, w, u
    cdef bint finished = False
    with nogil:
        while n_used < n_draws:
            lam_bar = mu + excite
            w = exps[n_used] / lam_bar
            u = unifs[n_used]
            n_used += 1
            if t + w > t_end:
                t = t_end
                finished = True
                break
            t += w
            excite *= exp(-omega * w)
            if u * lam_bar <= mu + excite:
                out[n_out] = t
                n_out += 1
                excite += jump
    return n_out, t, excite, n_used, finished
