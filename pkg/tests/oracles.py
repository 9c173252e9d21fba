"""Independent reference implementations used as test oracles.

Everything here is written directly from the definitions with plain scalar
arithmetic (or the most naive possible vectorization), sharing no code with
the production modules. The voting oracle follows the same documented
left-to-right accumulation order as the production pipeline, so agreement
is required to be exact in double precision.
"""

import math

import numpy as np


def vote_oracle(vectors, time_offsets, tau_cos, gamma, zero_norm_eps=1e-6,
                use_matrix=True, use_weights=True, use_aggregation=True):
    """Naive direct evaluation of the consensus voting stage.

    Returns (matrix, weights, scores, winner, target, supporters) built with
    Python loops and scalar arithmetic only.
    """
    vecs = [tuple(float(c) for c in v) for v in vectors]
    offs = [int(m) for m in time_offsets]
    n = len(vecs)
    nsq = [(v[0] * v[0] + v[1] * v[1]) + v[2] * v[2] for v in vecs]
    norms = [math.sqrt(s) for s in nsq]

    matrix = [[False] * n for _ in range(n)]
    for a in range(n):
        for b in range(n):
            if not use_matrix or a == b:
                matrix[a][b] = True
                continue
            if norms[a] < zero_norm_eps or norms[b] < zero_norm_eps:
                cos = 0.0
            else:
                dot = (vecs[a][0] * vecs[b][0] + vecs[a][1] * vecs[b][1]) \
                    + vecs[a][2] * vecs[b][2]
                cos = dot / (norms[a] * norms[b])
            matrix[a][b] = cos > tau_cos

    if use_weights:
        weights = [(gamma ** m) * (1.0 + q) for m, q in zip(offs, nsq)]
    else:
        weights = [1.0] * n

    scores = []
    for a in range(n):
        s = 0.0
        for b in range(n):
            if matrix[a][b]:
                s += weights[b]
        scores.append(s)

    winner = 0
    for i in range(1, n):
        if scores[i] > scores[winner]:
            winner = i

    supporters = [b for b in range(n) if matrix[winner][b]]
    if use_aggregation:
        num = [0.0, 0.0, 0.0]
        for b in range(n):
            if matrix[winner][b]:
                num[0] += weights[b] * vecs[b][0]
                num[1] += weights[b] * vecs[b][1]
                num[2] += weights[b] * vecs[b][2]
        den = scores[winner]
        target = (num[0] / den, num[1] / den, num[2] / den)
    else:
        target = vecs[winner]

    return matrix, weights, scores, winner, target, supporters


def linear_scan_nn(points, q):
    """Brute-force nearest neighbor: canonical squared distance, lowest
    index on ties. Returns (index, squared distance)."""
    pts = np.asarray(points, dtype=np.float64)
    d = pts - np.asarray(q, dtype=np.float64)
    sq = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
    best = sq.min()
    return int(np.nonzero(sq == best)[0][0]), float(best)


def brute_force_components(points, eps, min_cluster_size):
    """Connected components over the full pairwise <= eps graph.

    Returns (clusters, noise): clusters is a list of sorted index lists,
    ordered by smallest contained index; noise is a sorted index list.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    adjacent = np.zeros((n, n), dtype=bool)
    chunk = 512
    for start in range(0, n, chunk):
        block = pts[start:start + chunk]
        diff = block[:, None, :] - pts[None, :, :]
        sq = (diff ** 2).sum(axis=2)
        adjacent[start:start + chunk] = sq <= eps * eps
    unvisited = set(range(n))
    components = []
    while unvisited:
        seed = min(unvisited)
        stack = [seed]
        comp = set()
        while stack:
            i = stack.pop()
            if i in comp:
                continue
            comp.add(i)
            for j in np.nonzero(adjacent[i])[0]:
                if int(j) not in comp:
                    stack.append(int(j))
        unvisited -= comp
        components.append(sorted(comp))
    components.sort(key=lambda c: c[0])
    clusters = [c for c in components if len(c) >= min_cluster_size]
    noise = sorted(i for c in components if len(c) < min_cluster_size for i in c)
    return clusters, noise


def central_difference_gradient(func, flow, step=1e-5):
    """Per-coordinate central finite differences of a scalar function of an
    (N, 3) flow array."""
    base = np.asarray(flow, dtype=np.float64).copy()
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for c in range(3):
            saved = base[i, c]
            base[i, c] = saved + step
            plus = func(base)
            base[i, c] = saved - step
            minus = func(base)
            base[i, c] = saved
            grad[i, c] = (plus - minus) / (2.0 * step)
    return grad


def dcls_direct(flow, cluster_indices, targets):
    """Direct summation of the two dynamic-cluster terms.

    ``cluster_indices``: {cluster_id: list of point indices};
    ``targets``: {cluster_id: 3-vector}.
    """
    total_points = sum(len(v) for v in cluster_indices.values())
    point_sum = 0.0
    cluster_means = []
    for cid in sorted(cluster_indices):
        idx = cluster_indices[cid]
        s = 0.0
        for i in idx:
            d = [flow[i][c] - targets[cid][c] for c in range(3)]
            s += (d[0] * d[0] + d[1] * d[1]) + d[2] * d[2]
        point_sum += s
        cluster_means.append(s / len(idx))
    point_level = point_sum / total_points
    cluster_level = sum(cluster_means) / len(cluster_means)
    return point_level, cluster_level
