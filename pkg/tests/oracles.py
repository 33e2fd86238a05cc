"""Slow, obviously-correct reference implementations used only by tests."""

import math

import numpy as np


def nms(xy, score, radius):
    """Indices kept by greedy suppression, in visiting order."""
    order = sorted(range(len(score)), key=lambda i: (-score[i], xy[i][1], xy[i][0]))
    if radius == 0:
        return order
    kept = []
    for i in order:
        if all(math.hypot(xy[i][0] - xy[k][0], xy[i][1] - xy[k][1]) > radius for k in kept):
            kept.append(i)
    return kept


def distances(a, b):
    return [[math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(ra, rb))) for rb in b] for ra in a]


def _argmin(vals):
    best = 0
    for k, v in enumerate(vals):
        if v < vals[best]:
            best = k
    return best


def _mutual_pairs(dist, keep=None):
    cols = list(zip(*dist))
    out = set()
    for i, row in enumerate(dist):
        if keep is not None and not keep[i]:
            continue
        j = _argmin(row)
        if _argmin(cols[j]) == i:
            out.add((i, j))
    return out


def mutual_nn(a, b):
    return _mutual_pairs(distances(a, b))


def ratio_test(a, b, ratio):
    dist = distances(a, b)
    keep = []
    for row in dist:
        s = sorted(row)
        ok = s[0] <= ratio * s[1]
        if ratio < 1:
            ok = ok and s[0] < s[1]
        keep.append(ok)
    return _mutual_pairs(dist, keep)


def extract_matches(p, tau):
    m, n = len(p), len(p[0]) if len(p) else 0
    out = set()
    for i in range(m):
        j = _argmin([-v for v in p[i]])
        col = [-p[k][j] for k in range(m)]
        if _argmin(col) == i and p[i][j] > tau:
            out.add((i, j))
    return out


def label_correspondences(err, match_thr, neg_thr):
    """(matches, negatives_a, negatives_b) with a strict unique-minimum rule."""
    m = len(err)
    n = len(err[0]) if m else 0
    matches = set()
    for i in range(m):
        row = list(err[i])
        rmin = min(row)
        if row.count(rmin) != 1:
            continue
        j = row.index(rmin)
        col = [err[k][j] for k in range(m)]
        if col.count(min(col)) != 1 or col.index(min(col)) != i:
            continue
        if rmin < match_thr:
            matches.add((i, j))
    ma = {i for i, _ in matches}
    mb = {j for _, j in matches}
    neg_a = {i for i in range(m) if i not in ma and min(err[i]) >= neg_thr}
    neg_b = {j for j in range(n) if j not in mb and min(err[k][j] for k in range(m)) >= neg_thr}
    return matches, neg_a, neg_b


def hamming(a, b):
    return sum(bin(int(x) ^ int(y)).count("1") for x, y in zip(a, b))


def auc(errors, tau, steps=200_000):
    """Midpoint-rule integral of the empirical CDF, normalised by ``tau``."""
    e = np.sort(np.asarray(errors, dtype=float))
    t = (np.arange(steps) + 0.5) * tau / steps
    return float(np.mean(np.searchsorted(e, t, side="right") / len(e)))
