"""Numba kernels for collapsed Gibbs sampling.

All randomness flows through an explicit xorshift64* state so identical
seeds give bit-identical sampling trajectories regardless of platform or
library RNG changes. Tokens are flattened: ``doc_of[i]`` / ``word_of[i]``
give token i's document and vocabulary index, documents contiguous.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_U12 = np.uint64(12)
_U25 = np.uint64(25)
_U27 = np.uint64(27)
_U11 = np.uint64(11)
_MULT = np.uint64(2685821657736338717)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


def seed_to_state(seed: int) -> np.uint64:
    """splitmix64 of the seed; never returns the forbidden zero state."""
    mask = (1 << 64) - 1
    z = (int(seed) + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z = z ^ (z >> 31)
    if z == 0:
        z = 0x9E3779B97F4A7C15
    return np.uint64(z)


@njit(cache=True)
def _uniform(state):
    """One xorshift64* step; returns (new_state, uniform in [0, 1))."""
    state ^= state >> _U12
    state ^= state << _U25
    state ^= state >> _U27
    x = state * _MULT
    return state, (x >> _U11) * _INV_2_53


@njit(cache=True)
def init_assignments(n_tokens, n_topics, state):
    z = np.empty(n_tokens, dtype=np.int32)
    for i in range(n_tokens):
        state, u = _uniform(state)
        k = int(u * n_topics)
        if k >= n_topics:
            k = n_topics - 1
        z[i] = k
    return z, state


@njit(cache=True)
def build_counts(z, doc_of, word_of, n_docs, n_topics, n_words):
    n_dk = np.zeros((n_docs, n_topics), dtype=np.int64)
    n_kw = np.zeros((n_topics, n_words), dtype=np.int64)
    n_k = np.zeros(n_topics, dtype=np.int64)
    for i in range(z.shape[0]):
        n_dk[doc_of[i], z[i]] += 1
        n_kw[z[i], word_of[i]] += 1
        n_k[z[i]] += 1
    return n_dk, n_kw, n_k


@njit(cache=True)
def counts_consistent(z, doc_of, word_of, n_dk, n_kw, n_k):
    r_dk, r_kw, r_k = build_counts(
        z, doc_of, word_of, n_dk.shape[0], n_dk.shape[1], n_kw.shape[1]
    )
    if not np.array_equal(r_dk, n_dk):
        return False
    if not np.array_equal(r_kw, n_kw):
        return False
    if not np.array_equal(r_k, n_k):
        return False
    return True


@njit(cache=True)
def lda_sweep(z, doc_of, word_of, n_dk, n_kw, n_k, alpha, beta, state):
    """One full collapsed-Gibbs pass over every token."""
    n_topics = n_dk.shape[1]
    vbeta = n_kw.shape[1] * beta
    probs = np.empty(n_topics, dtype=np.float64)
    for i in range(z.shape[0]):
        d = doc_of[i]
        w = word_of[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kw[k, w] -= 1
        n_k[k] -= 1
        total = 0.0
        for kk in range(n_topics):
            p = (n_dk[d, kk] + alpha) * (n_kw[kk, w] + beta) / (n_k[kk] + vbeta)
            probs[kk] = p
            total += p
        state, u = _uniform(state)
        target = u * total
        acc = 0.0
        k_new = n_topics - 1
        for kk in range(n_topics):
            acc += probs[kk]
            if target < acc:
                k_new = kk
                break
        z[i] = k_new
        n_dk[d, k_new] += 1
        n_kw[k_new, w] += 1
        n_k[k_new] += 1
    return state


@njit(cache=True)
def slda_sweep(
    z,
    doc_of,
    word_of,
    doc_ptr,
    n_dk,
    n_kw,
    n_k,
    alpha,
    beta,
    eta,
    responses,
    has_response,
    state,
):
    """Collapsed-Gibbs pass where labeled documents weight each candidate
    topic by the likelihood of their observed responses.

    The response model is Bernoulli per label column with a logistic link
    on the document's mean topic assignment; the candidate assignment of
    the current token shifts that mean by eta[k, l] / N_d.

    Documents without responses (has_response false) reduce exactly to the
    plain LDA update, consuming the same single uniform per token, so a
    fully unlabeled corpus reproduces lda_sweep's trajectory bit for bit.
    """
    n_topics = n_dk.shape[1]
    n_labels = eta.shape[1]
    vbeta = n_kw.shape[1] * beta
    probs = np.empty(n_topics, dtype=np.float64)
    logf = np.empty(n_topics, dtype=np.float64)
    base = np.empty(n_labels, dtype=np.float64)
    for d in range(doc_ptr.shape[0] - 1):
        start = doc_ptr[d]
        end = doc_ptr[d + 1]
        nd = end - start
        for i in range(start, end):
            w = word_of[i]
            k = z[i]
            n_dk[d, k] -= 1
            n_kw[k, w] -= 1
            n_k[k] -= 1
            if has_response[d]:
                for l in range(n_labels):
                    base[l] = 0.0
                for kk in range(n_topics):
                    c = n_dk[d, kk]
                    if c > 0:
                        for l in range(n_labels):
                            base[l] += eta[kk, l] * c
                max_logf = -1e300
                for kk in range(n_topics):
                    lf = 0.0
                    for l in range(n_labels):
                        s = (base[l] + eta[kk, l]) / nd
                        # log sigmoid / log(1 - sigmoid), stable in both tails
                        if responses[d, l] == 1:
                            lf += -math.log1p(math.exp(-s)) if s > -30.0 else s
                        else:
                            lf += -math.log1p(math.exp(s)) if s < 30.0 else -s
                    logf[kk] = lf
                    if lf > max_logf:
                        max_logf = lf
                total = 0.0
                for kk in range(n_topics):
                    p = (
                        (n_dk[d, kk] + alpha)
                        * (n_kw[kk, w] + beta)
                        / (n_k[kk] + vbeta)
                        * math.exp(logf[kk] - max_logf)
                    )
                    probs[kk] = p
                    total += p
            else:
                total = 0.0
                for kk in range(n_topics):
                    p = (n_dk[d, kk] + alpha) * (n_kw[kk, w] + beta) / (n_k[kk] + vbeta)
                    probs[kk] = p
                    total += p
            state, u = _uniform(state)
            target = u * total
            acc = 0.0
            k_new = n_topics - 1
            for kk in range(n_topics):
                acc += probs[kk]
                if target < acc:
                    k_new = kk
                    break
            z[i] = k_new
            n_dk[d, k_new] += 1
            n_kw[k_new, w] += 1
            n_k[k_new] += 1
    return state


@njit(cache=True)
def joint_log_likelihood(n_dk, n_kw, n_k, doc_len, alpha, beta):
    """Collapsed joint log p(w, z | alpha, beta) from current counts."""
    n_docs, n_topics = n_dk.shape
    n_words = n_kw.shape[1]
    ll = n_topics * (math.lgamma(n_words * beta) - n_words * math.lgamma(beta))
    for k in range(n_topics):
        for w in range(n_words):
            if n_kw[k, w] > 0:
                ll += math.lgamma(n_kw[k, w] + beta) - math.lgamma(beta)
        ll -= math.lgamma(n_k[k] + n_words * beta) - math.lgamma(n_words * beta)
    ll += n_docs * (math.lgamma(n_topics * alpha) - n_topics * math.lgamma(alpha))
    for d in range(n_docs):
        for k in range(n_topics):
            if n_dk[d, k] > 0:
                ll += math.lgamma(n_dk[d, k] + alpha) - math.lgamma(alpha)
        ll -= math.lgamma(doc_len[d] + n_topics * alpha) - math.lgamma(n_topics * alpha)
    return ll


@njit(cache=True)
def fold_in_theta(word_ids, phi, alpha, iterations, burn_in, state):
    """Infer a held-out document's topic mixture holding phi fixed.

    Samples per-token topics against phi, accumulating the smoothed topic
    histogram after burn-in; returns the averaged distribution.
    """
    n_topics = phi.shape[0]
    n = word_ids.shape[0]
    theta = np.zeros(n_topics, dtype=np.float64)
    if n == 0:
        for k in range(n_topics):
            theta[k] = 1.0 / n_topics
        return theta, state
    counts = np.zeros(n_topics, dtype=np.int64)
    zz = np.empty(n, dtype=np.int32)
    for i in range(n):
        state, u = _uniform(state)
        k = int(u * n_topics)
        if k >= n_topics:
            k = n_topics - 1
        zz[i] = k
        counts[k] += 1
    probs = np.empty(n_topics, dtype=np.float64)
    kept = 0
    for it in range(iterations):
        for i in range(n):
            w = word_ids[i]
            counts[zz[i]] -= 1
            total = 0.0
            for kk in range(n_topics):
                p = (counts[kk] + alpha) * phi[kk, w]
                probs[kk] = p
                total += p
            state, u = _uniform(state)
            target = u * total
            acc = 0.0
            k_new = n_topics - 1
            for kk in range(n_topics):
                acc += probs[kk]
                if target < acc:
                    k_new = kk
                    break
            zz[i] = k_new
            counts[k_new] += 1
        if it >= burn_in:
            denom = n + n_topics * alpha
            for k in range(n_topics):
                theta[k] += (counts[k] + alpha) / denom
            kept += 1
    for k in range(n_topics):
        theta[k] /= kept
    return theta, state
