# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def nccf(x, starts, Py_ssize_t win, Py_ssize_t lag_min, Py_ssize_t lag_max):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const long long[::1] sv = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t nfr = sv.shape[0], nlags = lag_max - lag_min + 1, span = win + lag_max
    out = np.zeros((nfr, nlags))
    cdef double[:, ::1] ov = out
    cdef double[::1] sq = np.zeros(span + 1)
    cdef Py_ssize_t t, j, n, s, tau, n4 = win - win % 4
    cdef double e0, el, den, a0, a1, a2, a3
    cdef const double *p
    cdef const double *q
    for t in range(nfr):
        s = sv[t]
        p = &xv[s]
        # prefix sums of squares give every window energy in O(1)
        for n in range(span):
            sq[n + 1] = sq[n] + p[n] * p[n]
        e0 = sq[win]
        for j in range(nlags):
            tau = lag_min + j
            q = p + tau
            a0 = a1 = a2 = a3 = 0.0
            for n in range(0, n4, 4):
                a0 += p[n] * q[n]
                a1 += p[n + 1] * q[n + 1]
                a2 += p[n + 2] * q[n + 2]
                a3 += p[n + 3] * q[n + 3]
            for n in range(n4, win):
                a0 += p[n] * q[n]
            el = sq[tau + win] - sq[tau]
            den = sqrt(e0 * el)
            if den > 1e-20:
                ov[t, j] = ((a0 + a1) + (a2 + a3)) / den
    return out


def overlap_add(frames, starts, Py_ssize_t out_len):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size == 0:
        return np.zeros(out_len)
    cdef const double[:, ::1] fv = np.ascontiguousarray(frames).reshape(len(starts), -1)
    cdef const long long[::1] sv = np.ascontiguousarray(starts, dtype=np.int64)
    out = np.zeros(out_len)
    cdef double[::1] ov = out
    cdef Py_ssize_t t, j, k, width = fv.shape[1]
    for t in range(sv.shape[0]):
        for j in range(width):
            k = sv[t] + j
            if 0 <= k < out_len:
                ov[k] += fv[t, j]
    return out


def pulse_epochs(f0, double sample_rate):
    cdef const double[::1] fv = np.ascontiguousarray(f0, dtype=np.float64)
    cdef Py_ssize_t n, N = fv.shape[0]
    pos = []
    amp = []
    cdef bint in_run = False
    cdef double cum = 0.0, prev, inc, m = 1.0
    for n in range(N):
        if fv[n] <= 0:
            in_run = False
            continue
        if not in_run:
            in_run = True
            cum = 0.0
            m = 1.0
            pos.append(<double>n)
            amp.append(fv[n])
            continue
        inc = fv[n] / sample_rate
        prev = cum
        cum += inc
        while cum >= m:
            pos.append((n - 1) + (m - prev) / inc)
            amp.append(fv[n])
            m += 1.0
    return np.asarray(pos, dtype=np.float64), np.asarray(amp, dtype=np.float64)
