"""Pure numpy/scipy implementations of the loop kernels.

Every function here has the same signature and result as its twin in
``_ckernels.pyx``.
"""

import numpy as np
from scipy.spatial import cKDTree


def greedy_nms(xy, order, radius):
    xy = np.asarray(xy, dtype=np.float64)
    order = np.asarray(order, dtype=np.int64)
    if len(order) == 0:
        return np.empty(0, dtype=np.int64)
    tree = cKDTree(xy)
    # a float radius query is inclusive; suppression uses "<= radius"
    suppressed = np.zeros(len(xy), dtype=bool)
    visited = np.zeros(len(xy), dtype=bool)
    accepted = []
    rank = np.empty(len(xy), dtype=np.int64)
    rank[order] = np.arange(len(order))
    for k in order:
        visited[k] = True
        if suppressed[k]:
            continue
        accepted.append(k)
        for j in tree.query_ball_point(xy[k], radius * (1 + 1e-12) + 1e-12):
            if not visited[j] and rank[j] > rank[k]:
                d = xy[j] - xy[k]
                if d[0] * d[0] + d[1] * d[1] <= radius * radius:
                    suppressed[j] = True
    return np.asarray(accepted, dtype=np.int64)


def count_pairs_within(xy, radius):
    xy = np.asarray(xy, dtype=np.float64)
    if len(xy) < 2:
        return 0
    tree = cKDTree(xy)
    pairs = tree.query_pairs(radius * (1 + 1e-12), output_type="ndarray")
    if len(pairs) == 0:
        return 0
    d = xy[pairs[:, 0]] - xy[pairs[:, 1]]
    return int(np.count_nonzero((d * d).sum(1) <= radius * radius))


_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def hamming_matrix(a, b):
    a8 = np.ascontiguousarray(a).view(np.uint8)
    b8 = np.ascontiguousarray(b).view(np.uint8)
    x = a8[:, None, :] ^ b8[None, :, :]
    return _POP8[x].sum(-1)


def local_max_2d(r, threshold, border):
    r = np.asarray(r, dtype=np.float64)
    h, w = r.shape
    b = max(border, 1)
    if h - 2 * b <= 0 or w - 2 * b <= 0:
        e = np.empty(0, dtype=np.int64)
        return e, e
    c = r[b:h - b, b:w - b]
    ok = c > threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            u = r[b + dy:h - b + dy, b + dx:w - b + dx]
            if dy < 0 or (dy == 0 and dx < 0):
                ok &= c > u
            else:
                ok &= c >= u
    ys, xs = np.nonzero(ok)
    return (ys + b).astype(np.int64), (xs + b).astype(np.int64)


def extrema_3d(d, threshold, border):
    d = np.asarray(d, dtype=np.float64)
    ns, h, w = d.shape
    b = max(border, 1)
    if ns < 3 or h - 2 * b <= 0 or w - 2 * b <= 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, e
    c = d[1:ns - 1, b:h - b, b:w - b]
    is_max = c > 0
    is_min = c < 0
    for ds in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if ds == 0 and dy == 0 and dx == 0:
                    continue
                u = d[1 + ds:ns - 1 + ds, b + dy:h - b + dy, b + dx:w - b + dx]
                is_max &= c > u
                is_min &= c < u
    ok = (is_max | is_min) & (np.abs(c) > threshold)
    ss, ys, xs = np.nonzero(ok)
    return ((ss + 1).astype(np.int64), (ys + b).astype(np.int64),
            (xs + b).astype(np.int64))
