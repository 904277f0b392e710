# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Hot loops only: the fixed-step predictor sweep and the full closed-loop
sweep. Arithmetic order matches ``_core_py`` exactly so both backends
produce identical IEEE-754 results.
"""

from libc.math cimport floor, isfinite

import numpy as np


cdef inline Py_ssize_t _argmax_mode(const double[:, :, ::1] P, const double* x,
                                    Py_ssize_t p, Py_ssize_t n) noexcept nogil:
    # Largest quadratic form wins; exact ties go to the largest index.
    cdef Py_ssize_t i, r, c, mi = 0
    cdef double e, best = -1.0e300
    for i in range(p):
        e = 0.0
        for r in range(n):
            for c in range(n):
                e = e + x[r] * P[i, r, c] * x[c]
        if e >= best:
            best = e
            mi = i
    return mi


cdef inline double _quad_form(const double[:, :, ::1] P, const double* x,
                              Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef double e = 0.0
    for r in range(n):
        for c in range(n):
            e = e + x[r] * P[i, r, c] * x[c]
    return e


def predictor_sweep(const double[:, :, ::1] A, const double[:, ::1] B,
                    const double[:, :, ::1] P, const double[::1] x0,
                    const double[::1] u, double h,
                    double[:, ::1] out_vals, long long[::1] out_modes):
    """Left-endpoint Euler sweep of the prediction window.

    Writes the window trajectory into ``out_vals`` ((N+1, n)) and the
    active mode at each grid point into ``out_modes``. Returns -1 on
    success, else the index of the first non-finite row.
    """
    cdef Py_ssize_t p = A.shape[0], n = A.shape[1], N = u.shape[0]
    cdef Py_ssize_t j, r, c, m
    cdef double acc
    cdef bint ok
    for j in range(1, N + 1):
        m = _argmax_mode(P, &out_vals[j - 1, 0], p, n)
        out_modes[j - 1] = m
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc = acc + A[m, r, c] * out_vals[j - 1, c]
            out_vals[j, r] = out_vals[j - 1, r] + h * (acc + B[m, r] * u[j - 1])
        ok = True
        for r in range(n):
            if not isfinite(out_vals[j, r]):
                ok = False
        if not ok:
            return j
    out_modes[N] = _argmax_mode(P, &out_vals[N, 0], p, n)
    return -1


def closed_loop_sweep(const double[:, :, ::1] A, const double[:, ::1] B,
                      const double[:, ::1] K, const double[:, :, ::1] P,
                      const double[:, :, ::1] Eh, int method,
                      double[::1] u_all, double[:, ::1] X, double[::1] U,
                      long long[::1] sig_plant, double[:, ::1] Pt,
                      long long[::1] sig_pred, double h, double eps,
                      double max_rate, double big, long long[::1] info):
    """Full closed-loop sweep with per-step predictor recomputation.

    ``u_all`` holds the first N initial-window samples and receives one
    decided input per step at offset N+j. ``method`` selects the inner
    predictor update: 0 = Euler, 1 = exponential step using ``Eh``.
    ``info`` receives [status, trip_step, switch_count, mode_disagreements]
    where status is 0 ok, 1 state diverged, 2 chattering, 3 non-finite
    predictor.
    """
    cdef Py_ssize_t p = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t M = X.shape[0] - 1, N = u_all.shape[0] - M - 1
    cdef Py_ssize_t j, l, r, c, m, cur, w, mp
    cdef double acc, u, ec, ew, thr, nrm
    cdef long long nsw = 0, ndis = 0, bucket = -1, bucket_count = 0, this_bucket
    cdef double[64] pbuf
    cdef double[64] tbuf
    cdef bint ok

    if n > 64:
        raise ValueError("state dimension above compiled kernel limit (64)")

    info[0] = 0
    info[1] = -1
    cur = _argmax_mode(P, &X[0, 0], p, n)
    for j in range(M + 1):
        # predictor over [t - D, t] from the current state and input window
        for r in range(n):
            pbuf[r] = X[j, r]
        if method == 0:
            for l in range(N):
                m = _argmax_mode(P, &pbuf[0], p, n)
                u = u_all[j + l]
                for r in range(n):
                    acc = 0.0
                    for c in range(n):
                        acc = acc + A[m, r, c] * pbuf[c]
                    tbuf[r] = pbuf[r] + h * (acc + B[m, r] * u)
                for r in range(n):
                    pbuf[r] = tbuf[r]
        else:
            for l in range(N):
                m = _argmax_mode(P, &pbuf[0], p, n)
                u = u_all[j + l]
                for r in range(n):
                    tbuf[r] = pbuf[r] + h * (B[m, r] * u)
                for r in range(n):
                    acc = 0.0
                    for c in range(n):
                        acc = acc + Eh[m, r, c] * tbuf[c]
                    pbuf[r] = acc
        ok = True
        for r in range(n):
            Pt[j, r] = pbuf[r]
            if not isfinite(pbuf[r]):
                ok = False
        if not ok:
            info[0] = 3
            info[1] = j
            break

        mp = _argmax_mode(P, &pbuf[0], p, n)
        sig_pred[j] = mp
        u = 0.0
        for r in range(n):
            u = u + K[mp, r] * pbuf[r]
        U[j] = u
        u_all[N + j] = u

        # plant switching law with relative hysteresis band
        w = _argmax_mode(P, &X[j, 0], p, n)
        if w != cur:
            ec = _quad_form(P, &X[j, 0], cur, n)
            ew = _quad_form(P, &X[j, 0], w, n)
            thr = eps * (ec if ec > 1.0 else 1.0)
            if (ew - ec if ew >= ec else ec - ew) >= thr:
                cur = w
                nsw = nsw + 1
                this_bucket = <long long>floor(j * h)
                if this_bucket != bucket:
                    bucket = this_bucket
                    bucket_count = 0
                bucket_count = bucket_count + 1
                if bucket_count > <long long>max_rate:
                    sig_plant[j] = cur
                    info[0] = 2
                    info[1] = j
                    break
        if w != cur:
            ndis = ndis + 1
        sig_plant[j] = cur

        if j < M:
            for r in range(n):
                acc = 0.0
                for c in range(n):
                    acc = acc + A[cur, r, c] * X[j, c]
                X[j + 1, r] = X[j, r] + h * (acc + B[cur, r] * u_all[j])
            nrm = 0.0
            for r in range(n):
                nrm = nrm + X[j + 1, r] * X[j + 1, r]
            if not isfinite(nrm) or nrm > big * big:
                info[0] = 1
                info[1] = j + 1
                break

    info[2] = nsw
    info[3] = ndis
