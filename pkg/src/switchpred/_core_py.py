"""Pure-Python twin of the compiled kernels.

Same signatures and the same floating-point operation order as
``_core.pyx``, so results are bit-identical across backends. Used when
the compiled extension is unavailable; roughly two orders of magnitude
slower on the closed-loop sweep.
"""

import math

import numpy as np


def _as_lists(a):
    return a.tolist()


def _argmax_mode(P, x, p, n):
    mi = 0
    best = -1.0e300
    for i in range(p):
        Pi = P[i]
        e = 0.0
        for r in range(n):
            Pir = Pi[r]
            xr = x[r]
            for c in range(n):
                e = e + xr * Pir[c] * x[c]
        if e >= best:
            best = e
            mi = i
    return mi


def _quad_form(P, x, i, n):
    Pi = P[i]
    e = 0.0
    for r in range(n):
        Pir = Pi[r]
        xr = x[r]
        for c in range(n):
            e = e + xr * Pir[c] * x[c]
    return e


def predictor_sweep(A, B, P, x0, u, h, out_vals, out_modes):
    """See ``_core.predictor_sweep``."""
    p, n = A.shape[0], A.shape[1]
    N = u.shape[0]
    Al, Bl, Pl = _as_lists(A), _as_lists(B), _as_lists(P)
    ul = _as_lists(u)
    h = float(h)
    cur = [float(v) for v in out_vals[0]]
    nxt = [0.0] * n
    for j in range(1, N + 1):
        m = _argmax_mode(Pl, cur, p, n)
        out_modes[j - 1] = m
        Am, Bm, uj = Al[m], Bl[m], ul[j - 1]
        ok = True
        for r in range(n):
            Amr = Am[r]
            acc = 0.0
            for c in range(n):
                acc = acc + Amr[c] * cur[c]
            v = cur[r] + h * (acc + Bm[r] * uj)
            nxt[r] = v
            if not math.isfinite(v):
                ok = False
        out_vals[j] = nxt
        if not ok:
            return j
        cur, nxt = nxt, cur
    out_modes[N] = _argmax_mode(Pl, cur, p, n)
    return -1


def closed_loop_sweep(A, B, K, P, Eh, method, u_all, X, U, sig_plant, Pt,
                      sig_pred, h, eps, max_rate, big, info):
    """See ``_core.closed_loop_sweep``."""
    p, n = A.shape[0], A.shape[1]
    M = X.shape[0] - 1
    N = u_all.shape[0] - M - 1
    Al, Bl, Kl, Pl = _as_lists(A), _as_lists(B), _as_lists(K), _as_lists(P)
    El = _as_lists(Eh)
    ua = _as_lists(u_all)
    h, eps, big = float(h), float(eps), float(big)
    max_rate_i = int(max_rate)

    x = [float(v) for v in X[0]]
    pbuf = [0.0] * n
    tbuf = [0.0] * n
    nsw = 0
    ndis = 0
    bucket = -1
    bucket_count = 0
    status = 0
    trip = -1

    cur = _argmax_mode(Pl, x, p, n)
    for j in range(M + 1):
        for r in range(n):
            pbuf[r] = x[r]
        if method == 0:
            for l in range(N):
                m = _argmax_mode(Pl, pbuf, p, n)
                Am, Bm, u = Al[m], Bl[m], ua[j + l]
                for r in range(n):
                    Amr = Am[r]
                    acc = 0.0
                    for c in range(n):
                        acc = acc + Amr[c] * pbuf[c]
                    tbuf[r] = pbuf[r] + h * (acc + Bm[r] * u)
                pbuf, tbuf = tbuf, pbuf
        else:
            for l in range(N):
                m = _argmax_mode(Pl, pbuf, p, n)
                Em, Bm, u = El[m], Bl[m], ua[j + l]
                for r in range(n):
                    tbuf[r] = pbuf[r] + h * (Bm[r] * u)
                for r in range(n):
                    Emr = Em[r]
                    acc = 0.0
                    for c in range(n):
                        acc = acc + Emr[c] * tbuf[c]
                    pbuf[r] = acc
        ok = True
        for r in range(n):
            if not math.isfinite(pbuf[r]):
                ok = False
        Pt[j] = pbuf
        if not ok:
            status = 3
            trip = j
            break

        mp = _argmax_mode(Pl, pbuf, p, n)
        sig_pred[j] = mp
        Km = Kl[mp]
        u = 0.0
        for r in range(n):
            u = u + Km[r] * pbuf[r]
        U[j] = u
        ua[N + j] = u
        u_all[N + j] = u

        w = _argmax_mode(Pl, x, p, n)
        if w != cur:
            ec = _quad_form(Pl, x, cur, n)
            ew = _quad_form(Pl, x, w, n)
            thr = eps * (ec if ec > 1.0 else 1.0)
            if abs(ew - ec) >= thr:
                cur = w
                nsw += 1
                this_bucket = int(math.floor(j * h))
                if this_bucket != bucket:
                    bucket = this_bucket
                    bucket_count = 0
                bucket_count += 1
                if bucket_count > max_rate_i:
                    sig_plant[j] = cur
                    status = 2
                    trip = j
                    break
        if w != cur:
            ndis += 1
        sig_plant[j] = cur

        if j < M:
            Ac, Bc, ud = Al[cur], Bl[cur], ua[j]
            for r in range(n):
                Acr = Ac[r]
                acc = 0.0
                for c in range(n):
                    acc = acc + Acr[c] * x[c]
                tbuf[r] = x[r] + h * (acc + Bc[r] * ud)
            x, tbuf = tbuf, x
            X[j + 1] = x
            nrm = 0.0
            for r in range(n):
                nrm = nrm + x[r] * x[r]
            if not math.isfinite(nrm) or nrm > big * big:
                status = 1
                trip = j + 1
                break

    info[0] = status
    info[1] = trip
    info[2] = nsw
    info[3] = ndis
