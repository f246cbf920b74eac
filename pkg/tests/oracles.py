"""Independent reference implementations used to check the package.

These are deliberately naive (pure Python loops, sorting, set enumeration,
exact rationals) and share no code with the implementation under test.
"""

import math
from fractions import Fraction

import numpy as np


def merge_oracle(a_dirs, a_ts, b_dirs, b_ts, d_i=None, offset=0.0):
    """Stable sort by time of the tagged union, a's packets listed first."""
    tagged = [(float(t), int(d)) for d, t in zip(a_dirs, a_ts)]
    tagged += [(float(t) + offset, int(d)) for d, t in zip(b_dirs, b_ts)]
    merged = sorted(tagged, key=lambda p: p[0])
    if d_i is not None:
        merged = merged[:d_i]
    if not merged:
        return [], []
    t0 = merged[0][0]
    return [d for _, d in merged], [t - t0 for t, _ in merged]


def bursts_oracle(dirs):
    out = []
    start = 0
    for i in range(1, len(dirs) + 1):
        if i == len(dirs) or dirs[i] != dirs[start]:
            out.append((start, i, int(dirs[start])))
            start = i
    return out


def pairs_oracle(labels):
    """O(N^2) enumeration of disjoint multi-label pairs."""
    labels = [[int(v) for v in row] for row in labels]
    out = []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            if sum(labels[i]) > 1 and sum(labels[j]) > 1:
                if sum(a * b for a, b in zip(labels[i], labels[j])) == 0:
                    out.append((i, j))
    return out


def cos_dis(u, v):
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = math.sqrt(sum(float(a) ** 2 for a in u))
    nv = math.sqrt(sum(float(b) ** 2 for b in v))
    return min(max(1.0 - dot / (nu * nv), 0.0), 2.0)


def knn_oracle(target, points, b):
    """Exhaustive neighbour list ``[(distance, index)]`` of the b nearest points."""
    ds = sorted((cos_dis(target, p), i) for i, p in enumerate(points))
    return ds[:b]


def proxy_scores_oracle(target, proxies, b, eps=1e-8):
    scores = [0.0] * len(proxies)
    for d, j in knn_oracle(target, proxies, b):
        scores[j] = 1.0 / max(d, eps)
    return scores, [j for _, j in knn_oracle(target, proxies, b)]


def sample_scores_oracle(target, refs, labels, b, eps=1e-8):
    scores = [0.0] * len(labels[0])
    hits = knn_oracle(target, refs, b)
    for d, i in hits:
        for j, y in enumerate(labels[i]):
            if y:
                scores[j] += 1.0 / max(d, eps)
    return scores, [i for _, i in hits]


def top(ranking, k):
    return set(list(ranking)[:k])


def recall_oracle(truth, ranking, k):
    return Fraction(len(set(truth) & top(ranking, k)), len(set(truth)))


def precision_oracle(truth, ranking, t):
    return Fraction(len(set(truth) & top(ranking, t)), t)


def ap_oracle(truth, ranking, k):
    total = Fraction(0)
    for t in range(1, k + 1):
        if t <= len(ranking) and ranking[t - 1] in set(truth):
            total += precision_oracle(truth, ranking, t)
    return total / min(k, len(set(truth)))


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
