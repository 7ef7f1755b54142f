"""Numba-jitted scoring kernels. Semantics match ``numpy_backend`` exactly.

All kernels are nopython + nogil so the evaluator's thread fan-out can run
them concurrently; ``cache=True`` amortizes compilation across processes.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True, nogil=True)
def bm25_accumulate(n_docs, term_starts, post_docs, post_tfs, coef, len_norm):
    scores = np.zeros(n_docs, dtype=np.float64)
    for t in range(coef.shape[0]):
        c = coef[t]
        for j in range(term_starts[t], term_starts[t + 1]):
            d = post_docs[j]
            tf = post_tfs[j]
            scores[d] += c * tf / (tf + len_norm[d])
    return scores


@njit(cache=True, nogil=True)
def blend_scores(signals, weights, normalize):
    n, s = signals.shape
    out = np.zeros(n, dtype=np.float64)
    if normalize:
        for j in range(s):
            mn = signals[0, j]
            mx = signals[0, j]
            for i in range(1, n):
                v = signals[i, j]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            span = mx - mn
            if span <= 0.0:
                span = 1.0
            w = weights[j]
            for i in range(n):
                out[i] += w * (signals[i, j] - mn) / span
    else:
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += signals[i, j] * weights[j]
            out[i] = acc
    return out


@njit(cache=True, nogil=True)
def topk_desc(scores, k):
    order = np.argsort(-scores, kind="mergesort")
    kk = k if k < scores.shape[0] else scores.shape[0]
    return order[:kk]


@njit(cache=True, nogil=True)
def ranking_stats(ranked, gains, pos, ks):
    m = ks.shape[0]
    n = ranked.shape[0]
    out_dcg = np.zeros(m, dtype=np.float64)
    out_hits = np.zeros(m, dtype=np.float64)
    out_sumprec = np.zeros(m, dtype=np.float64)
    if n == 0:
        return out_dcg, out_hits, out_sumprec
    dcg = 0.0
    hits = 0.0
    sumprec = 0.0
    ki = 0
    for r in range(n):
        d = ranked[r]
        rank = r + 1.0
        dcg += gains[d] / math.log2(rank + 1.0)
        if pos[d] > 0.0:
            hits += 1.0
            sumprec += hits / rank
        while ki < m and ks[ki] == r + 1:
            out_dcg[ki] = dcg
            out_hits[ki] = hits
            out_sumprec[ki] = sumprec
            ki += 1
    while ki < m:
        out_dcg[ki] = dcg
        out_hits[ki] = hits
        out_sumprec[ki] = sumprec
        ki += 1
    return out_dcg, out_hits, out_sumprec


@njit(cache=True, nogil=True)
def _ndtr(t):
    return 0.5 * (1.0 + math.erf(t * _INV_SQRT2))


@njit(cache=True, nogil=True)
def tgm_logpdf(x, centers, sigma, lo, hi):
    n = x.shape[0]
    c = centers.shape[0]
    log_z = np.empty(c, dtype=np.float64)
    for i in range(c):
        log_z[i] = math.log(_ndtr((hi - centers[i]) / sigma) - _ndtr((lo - centers[i]) / sigma))
    out = np.empty(n, dtype=np.float64)
    logs = np.empty(c, dtype=np.float64)
    for p in range(n):
        if x[p] < lo or x[p] > hi:
            out[p] = -np.inf
            continue
        peak = -np.inf
        for i in range(c):
            u = (x[p] - centers[i]) / sigma
            v = -0.5 * u * u - math.log(sigma) - _LOG_SQRT_2PI - log_z[i]
            logs[i] = v
            if v > peak:
                peak = v
        acc = 0.0
        for i in range(c):
            acc += math.exp(logs[i] - peak)
        out[p] = peak + math.log(acc) - math.log(c)
    return out
