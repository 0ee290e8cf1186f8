"""Cost-aware prediction schemes over trained prototypes.

Nearest-prototype lookup goes through an exact KD-tree (bucket size 8,
ties broken towards the lowest prototype index). All supported distance
kinds are strictly increasing in the Euclidean norm, so the Euclidean tree
answers nearest-prototype queries for every kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distortion import PrototypeSet
from .geometry import DistanceSpec
from .model import posterior
from .taxonomy import FiniteMetric, Taxonomy


@dataclass
class _Leaf:
    indices: np.ndarray


@dataclass
class _Split:
    axis: int
    threshold: float
    left: object
    right: object


class PrototypeIndex:
    """Exact nearest-neighbour index over a snapshot of prototype rows.

    Immutable after construction; rebuild after prototype updates. Queries
    return the lowest index among exactly tied candidates.
    """

    def __init__(self, coords: np.ndarray, leaf_size: int = 8):
        coords = np.array(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] < 1:
            raise ValueError("index needs a non-empty (K, m) coordinate matrix")
        if not np.all(np.isfinite(coords)):
            raise ValueError("prototype coordinates must be finite")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.coords = coords
        self.leaf_size = leaf_size
        self._root = self._build(np.arange(coords.shape[0]))

    def _build(self, indices: np.ndarray):
        if indices.size <= self.leaf_size:
            return _Leaf(indices)
        pts = self.coords[indices]
        spread = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spread))
        order = np.argsort(pts[:, axis], kind="stable")
        mid = indices.size // 2
        threshold = float(pts[order[mid], axis])
        return _Split(axis, threshold,
                      self._build(indices[order[:mid]]),
                      self._build(indices[order[mid:]]))

    def query(self, x) -> tuple[int, float]:
        """(index, Euclidean distance) of the exact nearest prototype."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.coords.shape[1],):
            raise ValueError(f"query dimension {x.shape} does not match index "
                             f"dimension ({self.coords.shape[1]},)")
        best = [np.inf, -1]

        def visit(node):
            if isinstance(node, _Leaf):
                diffs = self.coords[node.indices] - x
                sq = np.einsum("ij,ij->i", diffs, diffs)
                for d2, idx in zip(sq, node.indices):
                    if d2 < best[0] or (d2 == best[0] and idx < best[1]):
                        best[0] = d2
                        best[1] = int(idx)
                return
            gap = x[node.axis] - node.threshold
            near, far = (node.left, node.right) if gap < 0 else (node.right, node.left)
            visit(near)
            # Equal-distance candidates across the plane must stay reachable
            # for the lowest-index tie rule, hence <= rather than <.
            if gap * gap <= best[0]:
                visit(far)

        visit(self._root)
        return best[1], float(np.sqrt(best[0]))

    def query_exhaustive(self, x) -> tuple[int, float]:
        """Linear-scan reference with the same tie rule."""
        x = np.asarray(x, dtype=np.float64)
        diffs = self.coords - x
        sq = np.einsum("ij,ij->i", diffs, diffs)
        idx = int(np.argmin(sq))  # argmin takes the first (lowest) index on ties
        return idx, float(np.sqrt(sq[idx]))


def build_index(pi: PrototypeSet, leaf_size: int = 8) -> PrototypeIndex:
    return PrototypeIndex(pi.coords, leaf_size=leaf_size)


@dataclass(frozen=True)
class Prediction:
    node_id: int              # taxonomy node id of the predicted class
    index: int                # position in the scheme's candidate order
    scheme: str               # "max-prob" | "min-expected-cost" | "any-node"
    posterior: np.ndarray     # over leaf classes
    expected_costs: np.ndarray | None = None  # over the candidate set


def predict_max_prob(e, index: PrototypeIndex, pi: PrototypeSet,
                     spec: DistanceSpec) -> Prediction:
    """Class of the nearest prototype == argmax of the posterior."""
    idx, _ = index.query(e)
    return Prediction(node_id=pi.class_map[idx], index=idx, scheme="max-prob",
                      posterior=posterior(e, pi.coords, spec))


def expected_costs(post: np.ndarray, costs: np.ndarray) -> np.ndarray:
    """EC(k) = sum_l posterior_l * costs[k, l] for each candidate row k."""
    post = np.asarray(post, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[1] != post.shape[0]:
        raise ValueError(f"cost rows must cover candidates and columns the "
                         f"posterior support, got {costs.shape} vs {post.shape}")
    return costs @ post


def predict_min_expected_cost(e, pi: PrototypeSet, spec: DistanceSpec,
                              metric: FiniteMetric) -> Prediction:
    """Leaf minimizing the expected cost under the posterior (ties: lowest index)."""
    if metric.size != pi.size:
        raise ValueError("leaf metric size does not match prototype count")
    post = posterior(e, pi.coords, spec)
    ec = expected_costs(post, metric.costs)
    idx = int(np.argmin(ec))
    return Prediction(node_id=pi.class_map[idx], index=idx,
                      scheme="min-expected-cost", posterior=post,
                      expected_costs=ec)


def predict_any_node(e, pi: PrototypeSet, spec: DistanceSpec,
                     metric_all: FiniteMetric, tax: Taxonomy) -> Prediction:
    """Node (leaf or internal) minimizing the expected cost.

    `pi` holds the leaf prototypes in taxonomy leaf order; `metric_all` is
    the all-nodes cost matrix of `tax`. Internal nodes win when the leaf
    posterior is dispersed below them.
    """
    if metric_all.class_names != tax.names:
        raise ValueError("all-nodes metric does not match the taxonomy")
    if pi.size != len(tax.leaf_ids):
        raise ValueError("prototype set must cover exactly the taxonomy leaves")
    leaf_cols = [metric_all.class_names.index(name) for name in tax.leaf_names]
    post = posterior(e, pi.coords, spec)
    ec = expected_costs(post, metric_all.costs[:, leaf_cols])
    idx = int(np.argmin(ec))
    return Prediction(node_id=idx, index=idx, scheme="any-node",
                      posterior=post, expected_costs=ec)
