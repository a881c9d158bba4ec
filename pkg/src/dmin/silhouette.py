"""Mean silhouette coefficient with Euclidean distances.

Conventions: a singleton cluster has intra-cluster distance a(i) = 0,
and a point with max(a, b) = 0 scores 0 — together these make two
distinct singleton clusters score 1.0 and an all-identical point set
score 0.0.
"""

from __future__ import annotations

import numpy as np


def silhouette_score(points, labels) -> float:
    """Mean over points of (b - a) / max(a, b).

    ``a`` is the mean distance to other points of the same cluster
    (0 for singletons); ``b`` is the smallest mean distance to the
    points of any other cluster.  Needs at least two clusters.
    """
    pts = np.asarray(points, dtype=np.float64)
    labs = np.asarray(labels)
    if pts.ndim != 2 or pts.shape[0] != labs.shape[0]:
        raise ValueError(
            f"points {pts.shape} and labels {labs.shape} do not line up")
    uniq = np.unique(labs)
    if len(uniq) < 2:
        raise ValueError(
            f"silhouette needs at least 2 clusters, got {len(uniq)}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    scores = np.zeros(pts.shape[0])
    for i in range(pts.shape[0]):
        same = (labs == labs[i])
        n_same = same.sum() - 1
        a = dist[i, same].sum() / n_same if n_same > 0 else 0.0
        b = min(dist[i, labs == other].mean()
                for other in uniq if other != labs[i])
        denom = max(a, b)
        scores[i] = (b - a) / denom if denom > 0.0 else 0.0
    return float(scores.mean())
