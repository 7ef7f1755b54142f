"""Pure NumPy implementations of the hot scoring kernels.

These are the fallback used when numba is unavailable or disabled via
``SEARCHTUNE_NUMBA=0``. Signatures and semantics are identical to the
numba backend; both are exercised by the kernel equivalence tests.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def bm25_accumulate(n_docs, term_starts, post_docs, post_tfs, coef, len_norm):
    """Accumulate BM25 contributions of each query term over its postings.

    ``coef[t]`` folds the per-term constant (query count * idf * (k1+1));
    ``len_norm[d]`` is the precomputed k1*(1 - b + b*len_d/avgdl).
    """
    scores = np.zeros(n_docs, dtype=np.float64)
    for t in range(coef.shape[0]):
        lo, hi = term_starts[t], term_starts[t + 1]
        docs = post_docs[lo:hi]
        tf = post_tfs[lo:hi]
        scores[docs] += coef[t] * tf / (tf + len_norm[docs])
    return scores


def blend_scores(signals, weights, normalize):
    """Weighted sum of signal columns, optionally min-max scaled per column.

    A constant column scales to all zeros (its span is treated as 1).
    """
    if normalize:
        mn = signals.min(axis=0)
        span = signals.max(axis=0) - mn
        span = np.where(span > 0.0, span, 1.0)
        signals = (signals - mn) / span
    return signals @ weights


def topk_desc(scores, k):
    """Indices of the top-k scores, descending, ties broken by lower index."""
    order = np.argsort(-scores, kind="stable")
    return order[: min(k, scores.shape[0])]


def ranking_stats(ranked, gains, pos, ks):
    """Single-pass rank statistics at each cutoff in ``ks`` (ascending).

    Returns (dcg, hits, sumprec), each aligned with ``ks``:
      dcg[i]     = sum over ranks r <= ks[i] of gains[ranked[r]] / log2(r+1)
      hits[i]    = count of positives among the top ks[i]
      sumprec[i] = sum over positive ranks r <= ks[i] of precision@r
    Cutoffs beyond the ranked length use the full-list totals.
    """
    m = ks.shape[0]
    n = ranked.shape[0]
    out_dcg = np.zeros(m, dtype=np.float64)
    out_hits = np.zeros(m, dtype=np.float64)
    out_sumprec = np.zeros(m, dtype=np.float64)
    if n == 0:
        return out_dcg, out_hits, out_sumprec
    g = gains[ranked]
    p = pos[ranked]
    ranks = np.arange(1.0, n + 1.0)
    dcg_cum = np.cumsum(g / np.log2(ranks + 1.0))
    hits_cum = np.cumsum(p)
    sumprec_cum = np.cumsum(np.where(p > 0.0, hits_cum / ranks, 0.0))
    for i in range(m):
        stop = min(int(ks[i]), n)
        out_dcg[i] = dcg_cum[stop - 1]
        out_hits[i] = hits_cum[stop - 1]
        out_sumprec[i] = sumprec_cum[stop - 1]
    return out_dcg, out_hits, out_sumprec


def tgm_logpdf(x, centers, sigma, lo, hi):
    """Log density of an equal-weight truncated-Gaussian mixture.

    One component per center, shared bandwidth ``sigma``, each truncated and
    renormalized to [lo, hi]. Points outside [lo, hi] get -inf.
    """
    log_z = np.log(ndtr((hi - centers) / sigma) - ndtr((lo - centers) / sigma))
    u = (x[:, None] - centers[None, :]) / sigma
    logk = -0.5 * u * u - np.log(sigma) - _LOG_SQRT_2PI - log_z[None, :]
    peak = logk.max(axis=1)
    out = peak + np.log(np.exp(logk - peak[:, None]).sum(axis=1)) - np.log(centers.shape[0])
    return np.where((x < lo) | (x > hi), -np.inf, out)
