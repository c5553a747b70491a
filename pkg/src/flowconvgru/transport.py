"""Exact minimum-cost transportation between two mass distributions.

Solves min sum_ij x_ij * cost_ij subject to row sums = supply, column
sums = demand, x >= 0, by successive shortest augmenting paths with node
potentials (Dijkstra over reduced costs). Supplies and demands must carry
equal total mass. Sizes here are tiny (one node per grid region), so the
dense O(V^2 log V) behaviour per augmentation is irrelevant.
"""

from __future__ import annotations

import heapq

import numpy as np

from .errors import ShapeError

_EPS = 1e-15


def min_cost_transport(supply, demand, cost):
    """Returns (total_cost, flow matrix) for the transportation problem."""
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if supply.ndim != 1 or demand.ndim != 1 or cost.shape != (supply.size, demand.size):
        raise ShapeError(
            f"cost must be {supply.size} x {demand.size} to match supply and demand"
        )
    if np.any(supply < 0) or np.any(demand < 0):
        raise ValueError("supply and demand must be non-negative")
    if np.any(cost < 0) or not np.all(np.isfinite(cost)):
        raise ValueError("costs must be finite and non-negative")
    total_s, total_d = float(supply.sum()), float(demand.sum())
    scale = max(total_s, total_d, 1.0)
    if abs(total_s - total_d) > 1e-9 * scale:
        raise ValueError(f"unbalanced problem: supply {total_s} vs demand {total_d}")

    n_s, n_d = supply.size, demand.size
    flow = np.zeros((n_s, n_d))
    if total_s <= _EPS:
        return 0.0, flow

    # demand rescaled so both sides carry exactly the same mass
    demand = demand * (total_s / total_d)
    s_rem = supply.copy()
    d_rem = demand.copy()
    pot = np.zeros(n_s + n_d)  # node potentials keeping reduced costs >= 0
    tol = _EPS * scale * max(n_s, n_d)

    guard = 0
    while float(s_rem.sum()) > tol:
        guard += 1
        if guard > n_s * n_d + n_s + n_d + 4:
            raise ArithmeticError("transport solver failed to converge")
        dist = np.full(n_s + n_d, np.inf)
        parent = np.full(n_s + n_d, -1, dtype=np.int64)
        done = np.zeros(n_s + n_d, dtype=bool)
        heap = []
        for i in range(n_s):
            if s_rem[i] > tol:
                dist[i] = 0.0
                heapq.heappush(heap, (0.0, i))
        target = -1
        while heap:
            d_u, u = heapq.heappop(heap)
            if done[u] or d_u > dist[u]:
                continue
            done[u] = True
            if u >= n_s and d_rem[u - n_s] > tol:
                target = u
                break
            if u < n_s:
                # forward arcs: source u to every sink
                rc = cost[u] + pot[u] - pot[n_s:]
                for j in range(n_d):
                    nd = d_u + rc[j]
                    if nd < dist[n_s + j] - _EPS:
                        dist[n_s + j] = nd
                        parent[n_s + j] = u
                        heapq.heappush(heap, (nd, n_s + j))
            else:
                # residual arcs: sink back to sources currently feeding it
                j = u - n_s
                for i in range(n_s):
                    if flow[i, j] > tol:
                        nd = d_u + (-cost[i, j] + pot[u] - pot[i])
                        if nd < dist[i] - _EPS:
                            dist[i] = nd
                            parent[i] = u
                            heapq.heappush(heap, (nd, i))
        if target < 0:
            raise ArithmeticError("transport solver found no augmenting path")

        d_t = dist[target]
        pot += np.where(np.isfinite(dist), np.minimum(dist, d_t), d_t)

        # walk the path back to its source, collecting the bottleneck
        path = []
        node = target
        while parent[node] >= 0:
            path.append((int(parent[node]), int(node)))
            node = int(parent[node])
        delta = min(float(s_rem[node]), float(d_rem[target - n_s]))
        for a, b in path:
            if a >= n_s:  # residual arc sink a -> source b undoes flow b -> a
                delta = min(delta, float(flow[b, a - n_s]))
        for a, b in path:
            if a < n_s:
                flow[a, b - n_s] += delta
            else:
                flow[b, a - n_s] -= delta
        s_rem[node] = max(0.0, s_rem[node] - delta)
        d_rem[target - n_s] = max(0.0, d_rem[target - n_s] - delta)

    return float(np.sum(flow * cost)), flow


def emd(p, q, cost) -> float:
    """Earth mover's distance between two equal-mass distributions under
    the given ground cost matrix."""
    total, _ = min_cost_transport(p, q, cost)
    return total
