"""Shared test utilities."""

from collections import deque

import numpy as np


def diameter(mrf) -> int:
    """Longest shortest path (in edges) within any connected component."""
    best = 0
    for s in range(mrf.num_nodes):
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in mrf.neighbors[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        best = max(best, max(dist.values()))
    return best


def max_belief_error(a, b) -> float:
    return max((float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b)), default=0.0)
