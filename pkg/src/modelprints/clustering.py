"""Agglomerative clustering of model fingerprints and cluster scoring.

Average-linkage (UPGMA) clustering is implemented directly: it is the object
under test, so it does not lean on a library implementation. Merge order is
fully deterministic, ties broken by the lowest cluster-id pair. The adjusted
Rand index scores a discovered partition against planted family labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dendrogram:
    """M-1 merge records over leaves 0..M-1; merge t creates cluster M+t."""

    merges: list  # (cluster_a, cluster_b, height, new_size), a < b
    leaf_ids: list

    def __post_init__(self):
        m = len(self.leaf_ids)
        if len(self.merges) != m - 1:
            raise ValueError(f"{m} leaves need {m - 1} merges, got {len(self.merges)}")
        heights = [rec[2] for rec in self.merges]
        if any(b < a - 1e-12 for a, b in zip(heights, heights[1:])):
            raise ValueError("merge heights decrease: not a valid average-linkage tree")


def _check_distances(dist):
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    if np.any(np.isnan(d)):
        raise ValueError("NaN distance")
    if not np.allclose(d, d.T, atol=1e-12):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(d)) > 1e-12):
        raise ValueError("distance matrix has a nonzero diagonal")
    if np.any(d < 0):
        raise ValueError("negative distance")
    return d


def hierarchical_cluster(distances, leaf_ids=None) -> Dendrogram:
    """UPGMA: repeatedly merge the pair of clusters with least mean distance.

    Cluster-to-cluster distance is the mean over all cross pairs of leaves,
    maintained by the weighted (Lance-Williams) update. With equal least
    distances the lowest (i, j) cluster-id pair merges first.
    """
    d = _check_distances(distances)
    m = d.shape[0]
    if m < 2:
        raise ValueError("clustering needs at least 2 leaves")
    leaf_ids = list(leaf_ids) if leaf_ids is not None else list(range(m))
    if len(leaf_ids) != m:
        raise ValueError(f"{len(leaf_ids)} leaf ids for {m} leaves")

    sizes = {i: 1 for i in range(m)}
    pair_d = {(i, j): d[i, j] for i in range(m) for j in range(i + 1, m)}
    merges = []
    for t in range(m - 1):
        (a, b) = min(pair_d, key=lambda p: (pair_d[p], p))
        h = pair_d[(a, b)]
        new = m + t
        new_size = sizes[a] + sizes[b]
        for k in list(sizes):
            if k in (a, b):
                continue
            da = pair_d.pop((min(a, k), max(a, k)))
            db = pair_d.pop((min(b, k), max(b, k)))
            pair_d[(k, new)] = (sizes[a] * da + sizes[b] * db) / new_size
        del pair_d[(a, b)]
        del sizes[a], sizes[b]
        sizes[new] = new_size
        merges.append((a, b, float(h), new_size))
    return Dendrogram(merges=merges, leaf_ids=leaf_ids)


def cut_at_k(dendrogram: Dendrogram, k) -> np.ndarray:
    """Labels per leaf after undoing the last k-1 merges.

    Labels are renumbered 0..k-1 by each cluster's smallest leaf index.
    """
    m = len(dendrogram.leaf_ids)
    if not 1 <= k <= m:
        raise ValueError(f"cannot cut {m} leaves into {k} clusters")
    parent = list(range(2 * m - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t, (a, b, _, _) in enumerate(dendrogram.merges[:m - k]):
        parent[find(a)] = parent[find(b)] = m + t
    roots = {}
    labels = np.empty(m, dtype=int)
    for leaf in range(m):
        r = find(leaf)
        if r not in roots:
            roots[r] = len(roots)
        labels[leaf] = roots[r]
    return labels


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("partitions must be equal-length 1-d label arrays")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions degenerate and identical in structure
    return float((sum_ij - expected) / (max_index - expected))


def dendrogram_coordinates(dendrogram: Dendrogram) -> dict:
    """Plot-ready layout: leaf x positions and one u-shaped segment per merge.

    Leaves are ordered by tree traversal; each merge contributes a segment
    with x = [xa, xa, xb, xb] and y = [ha, h, h, hb].
    """
    m = len(dendrogram.leaf_ids)
    children = {m + t: (a, b) for t, (a, b, _, _) in enumerate(dendrogram.merges)}
    heights = {m + t: h for t, (_, _, h, _) in enumerate(dendrogram.merges)}

    order = []
    stack = [2 * m - 2] if m > 1 else [0]
    while stack:
        node = stack.pop()
        if node < m:
            order.append(node)
        else:
            a, b = children[node]
            stack.append(b)  # visit a first
            stack.append(a)
    x = {leaf: float(i) for i, leaf in enumerate(order)}
    segments = []
    for t, (a, b, h, _) in enumerate(dendrogram.merges):
        xa, xb = x[a], x[b]
        segments.append({
            "x": [xa, xa, xb, xb],
            "y": [heights.get(a, 0.0), h, h, heights.get(b, 0.0)],
        })
        x[m + t] = 0.5 * (xa + xb)
    return {
        "leaves": [dendrogram.leaf_ids[i] for i in order],
        "leaf_x": [x[i] for i in order],
        "segments": segments,
    }
