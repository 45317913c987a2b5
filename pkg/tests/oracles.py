"""Independent reference implementations used as test oracles."""

import math

import numpy as np

from ragate.retrieval import tokenize


def bm25_brute_force(docs, query, k, k1=1.2, b=0.75):
    """Score every document directly from its token list."""
    toks = {d.doc_id: tokenize(f"{d.title} {d.body}") for d in docs}
    n = len(docs)
    avgdl = sum(len(t) for t in toks.values()) / n
    scored = []
    for d in docs:
        s = 0.0
        hit = False
        for term in tokenize(query):
            tf = toks[d.doc_id].count(term)
            if tf == 0:
                continue
            hit = True
            n_t = sum(1 for t in toks.values() if term in t)
            idf = math.log(1.0 + (n - n_t + 0.5) / (n_t + 0.5))
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(toks[d.doc_id]) / avgdl))
        if hit:
            scored.append((d.doc_id, s))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[:k]


def average_ranks(row, higher_is_better=True):
    """Ranks 1..k with ties averaged, by explicit pairwise counting."""
    v = [-x if higher_is_better else x for x in row]
    out = []
    for a in v:
        below = sum(1 for c in v if c < a)
        equal = sum(1 for c in v if c == a)
        out.append(below + (equal + 1) / 2.0)
    return out


def friedman_sum_form(ranks):
    """chi2_F = 12/(n k (k+1)) sum R_j^2 - 3 n (k+1), divided by the tie correction."""
    ranks = [list(r) for r in ranks]
    n, k = len(ranks), len(ranks[0])
    col_sums = [sum(r[j] for r in ranks) for j in range(k)]
    stat = 12.0 / (n * k * (k + 1)) * sum(s * s for s in col_sums) - 3.0 * n * (k + 1)
    ties = 0.0
    for r in ranks:
        for value in set(r):
            t = r.count(value)
            ties += t**3 - t
    corr = 1.0 - ties / (n * k * (k * k - 1))
    return stat / corr if corr > 0 else 0.0


def friedman_permutation_p(ranks, observed, shuffles, rng):
    """Monte Carlo p-value: shuffle ranks independently within each row."""
    r = np.asarray(ranks, dtype=float)
    n, k = r.shape
    perm = rng.permuted(np.broadcast_to(r, (shuffles, n, k)), axis=2)
    sums = perm.sum(axis=1)
    stat = 12.0 / (n * k * (k + 1)) * (sums**2).sum(axis=1) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in r:
        t = np.unique(row, return_counts=True)[1]
        ties += float((t**3 - t).sum())
    corr = 1.0 - ties / (n * k * (k * k - 1))
    stat = stat / corr
    return float((stat >= observed - 1e-9).mean())


def union_find_components(adj):
    n = len(adj)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if adj[i][j]:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})
