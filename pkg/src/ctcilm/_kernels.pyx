# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: CTC forward, prefix scoring, softmax row descent."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()

cdef double NEG_INF = -INFINITY


cdef inline double _lse(double a, double b) nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward(logp, labels):
    cdef const double[:, ::1] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef const long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n_frames = lp.shape[0]
    cdef Py_ssize_t blank = lp.shape[1] - 1
    cdef Py_ssize_t n_lab = lab.shape[0]
    cdef Py_ssize_t n_ext = 2 * n_lab + 1
    cdef long[::1] ext = np.empty(n_ext, dtype=np.int64)
    cdef double[::1] alpha = np.full(n_ext, NEG_INF)
    cdef double[::1] new = np.empty(n_ext)
    cdef Py_ssize_t t, j
    cdef double acc
    for j in range(n_ext):
        ext[j] = blank if j % 2 == 0 else lab[j // 2]
    with nogil:
        alpha[0] = lp[0, blank]
        if n_lab > 0:
            alpha[1] = lp[0, lab[0]]
        for t in range(1, n_frames):
            for j in range(n_ext):
                acc = alpha[j]
                if j >= 1:
                    acc = _lse(acc, alpha[j - 1])
                if j >= 2 and ext[j] != blank and ext[j] != ext[j - 2]:
                    acc = _lse(acc, alpha[j - 2])
                if acc != NEG_INF:
                    new[j] = acc + lp[t, ext[j]]
                else:
                    new[j] = NEG_INF
            for j in range(n_ext):
                alpha[j] = new[j]
    if n_lab == 0:
        return alpha[0]
    return _lse(alpha[n_ext - 1], alpha[n_ext - 2])


def prefix_scores(logp, labels):
    cdef const double[:, ::1] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef const long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n_frames = lp.shape[0]
    cdef Py_ssize_t blank = lp.shape[1] - 1
    cdef Py_ssize_t n_pos = lab.shape[0] + 1
    pref_a = np.full(n_pos, NEG_INF)
    ext_a = np.full((n_pos, blank), NEG_INF)
    full_a = np.full(n_pos, NEG_INF)
    cdef double[::1] pref = pref_a
    cdef double[:, ::1] ext = ext_a
    cdef double[::1] full = full_a
    cdef double[::1] gb = np.empty(n_frames)
    cdef double[::1] gnb = np.full(n_frames, NEG_INF)
    cdef double[::1] both = np.empty(n_frames)
    cdef double[::1] nb2 = np.empty(n_frames)
    cdef double[::1] b2 = np.empty(n_frames)
    cdef Py_ssize_t s, t, c
    cdef long last = -1
    cdef double acc, psi, v, ph
    with nogil:
        acc = 0.0
        for t in range(n_frames):
            acc = acc + lp[t, blank]
            gb[t] = acc
        pref[0] = 0.0
        for s in range(n_pos):
            full[s] = _lse(gnb[n_frames - 1], gb[n_frames - 1])
            for t in range(n_frames):
                both[t] = _lse(gb[t], gnb[t])
            for c in range(blank):
                if s == 0:
                    psi = lp[0, c]
                else:
                    psi = NEG_INF
                for t in range(1, n_frames):
                    ph = gb[t - 1] if c == last else both[t - 1]
                    if ph != NEG_INF:
                        psi = _lse(psi, ph + lp[t, c])
                ext[s, c] = psi
            if s == n_pos - 1:
                break
            c = lab[s]
            if ext[s, c] == NEG_INF:
                break
            pref[s + 1] = ext[s, c]
            for t in range(n_frames):
                nb2[t] = NEG_INF
                b2[t] = NEG_INF
            if s == 0:
                nb2[0] = lp[0, c]
            for t in range(1, n_frames):
                ph = gb[t - 1] if c == last else both[t - 1]
                v = _lse(nb2[t - 1], ph)
                if v != NEG_INF:
                    nb2[t] = v + lp[t, c]
                v = _lse(b2[t - 1], nb2[t - 1])
                if v != NEG_INF:
                    b2[t] = v + lp[t, blank]
            for t in range(n_frames):
                gnb[t] = nb2[t]
                gb[t] = b2[t]
            last = c
    return pref_a, ext_a, full_a


def softmax_descent(cnp.ndarray logits, mass, target, double step, long n_steps):
    if not (logits.dtype == np.float64 and logits.flags.c_contiguous):
        raise ValueError("logits must be a C-contiguous float64 array")
    cdef double[:, ::1] z = logits
    cdef const double[::1] m = np.ascontiguousarray(mass, dtype=np.float64)
    cdef const double[:, ::1] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef Py_ssize_t n_rows = z.shape[0]
    cdef Py_ssize_t width = z.shape[1]
    cdef double[::1] e = np.empty(width)
    cdef Py_ssize_t r, a
    cdef long k
    cdef double mx, tot
    # rows are independent, so iterating steps inside each row is exact
    with nogil:
        for r in range(n_rows):
            for k in range(n_steps):
                mx = z[r, 0]
                for a in range(1, width):
                    if z[r, a] > mx:
                        mx = z[r, a]
                tot = 0.0
                for a in range(width):
                    e[a] = exp(z[r, a] - mx)
                    tot = tot + e[a]
                for a in range(width):
                    z[r, a] = z[r, a] - step * (m[r] * (e[a] / tot) - tg[r, a])
    return logits


def posterior_rows(logp, labels):
    pref_a, ext_a, full_a = prefix_scores(logp, labels)
    cdef double[::1] pref = pref_a
    cdef double[:, ::1] ext = ext_a
    cdef double[::1] full = full_a
    cdef Py_ssize_t n_pos = ext.shape[0]
    cdef Py_ssize_t n_lab = ext.shape[1]
    rows_a = np.full((n_pos, n_lab + 1), np.nan)
    cdef double[:, ::1] rows = rows_a
    cdef Py_ssize_t s, c
    with nogil:
        for s in range(n_pos):
            if pref[s] == NEG_INF:
                break
            for c in range(n_lab):
                rows[s, c] = exp(ext[s, c] - pref[s])
            rows[s, n_lab] = exp(full[s] - pref[s])
    return rows_a
