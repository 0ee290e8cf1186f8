"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest

import protometric as pm

# Six nodes, three leaves; the toy hierarchy used across the suite.
TOY_EDGE_LIST = "a1\tA\na2\tA\nb1\tB\nA\troot\nB\troot\n"


@pytest.fixture
def toy_tax():
    return pm.parse_taxonomy(TOY_EDGE_LIST)


def random_tree_text(n_nodes: int, rng: np.random.Generator,
                     weighted: bool = False) -> str:
    """Edge-list text of a random rooted tree (node 0 is the root)."""
    assert n_nodes >= 2
    lines = []
    for i in range(1, n_nodes):
        parent = int(rng.integers(0, i))
        if weighted:
            w = float(rng.uniform(0.5, 2.0))
            lines.append(f"n{i}\tn{parent}\t{w!r}")
        else:
            lines.append(f"n{i}\tn{parent}")
    return "\n".join(lines) + "\n"


def random_taxonomy(n_nodes: int, rng: np.random.Generator,
                    weighted: bool = False) -> pm.Taxonomy:
    return pm.parse_taxonomy(random_tree_text(n_nodes, rng, weighted))


def random_taxonomy_with_leaves(n_leaves: int, rng: np.random.Generator) -> pm.Taxonomy:
    """Random tree with exactly n_leaves leaf nodes."""
    assert n_leaves >= 2
    n_internal = 1 + int(rng.integers(0, max(1, n_leaves // 2)))
    parents = [None] + [int(rng.integers(0, i)) for i in range(1, n_internal)]
    children = [0] * n_internal
    for p in parents[1:]:
        children[p] += 1
    lines = [f"I{i}\tI{parents[i]}" for i in range(1, n_internal)]
    hosts = [i for i in range(n_internal) if children[i] == 0]
    assert len(hosts) <= n_leaves
    for k in range(n_leaves):
        host = hosts[k] if k < len(hosts) else int(rng.integers(0, n_internal))
        lines.append(f"L{k}\tI{host}")
    return pm.parse_taxonomy("\n".join(lines) + "\n")


def random_leaf_metric(n_leaves: int, rng: np.random.Generator) -> pm.FiniteMetric:
    return pm.cost_matrix(random_taxonomy_with_leaves(n_leaves, rng))


def bfs_tree_distances(tax: pm.Taxonomy) -> np.ndarray:
    """All-pairs distances by breadth-first traversal of the tree adjacency.

    Independent of the ancestor-chain computation in cost_matrix.
    """
    n = tax.n_nodes
    adj = [[] for _ in range(n)]
    for node in tax.nodes:
        if node.parent is not None:
            adj[node.node_id].append((node.parent, node.weight))
            adj[node.parent].append((node.node_id, node.weight))
    D = np.full((n, n), np.inf)
    for src in range(n):
        D[src, src] = 0.0
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v, w in adj[u]:
                    if np.isinf(D[src, v]):
                        D[src, v] = D[src, u] + w
                        nxt.append(v)
            frontier = nxt
    return D


def grid_search_scale(alpha: np.ndarray, n_points: int = 10_000):
    """(best_s, best_f) of f(s) = sum |s*alpha - 1| over a log-spaced grid."""
    positive = alpha[alpha > 0]
    lo = 1e-2 / alpha.max()
    hi = 1e2 / positive.min()
    grid = np.geomspace(lo, hi, n_points)
    f = np.abs(grid[:, None] * alpha[None, :] - 1.0).sum(axis=1)
    best = int(np.argmin(f))
    return float(grid[best]), float(f[best])


def scaled_l1_sum(alpha: np.ndarray, s: float) -> float:
    return float(np.abs(s * alpha - 1.0).sum())


def random_prototype_instance(K: int, m: int, rng: np.random.Generator):
    """(PrototypeSet, tree-derived FiniteMetric) with K classes in R^m."""
    metric = random_leaf_metric(K, rng)
    coords = rng.standard_normal((K, m))
    return pm.PrototypeSet(coords, tuple(range(K))), metric
