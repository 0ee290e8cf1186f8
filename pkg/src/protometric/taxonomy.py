"""Class hierarchies and the misclassification-cost metrics they induce.

A taxonomy is a rooted tree whose childless nodes are the leaf classes.
Edges carry positive weights (1.0 unless the file says otherwise), and the
cost of confusing two classes is the weighted length of the unique path
between their nodes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class TaxonomyError(ValueError):
    """Structurally invalid hierarchy or malformed taxonomy file."""


@dataclass(frozen=True)
class TaxonomyNode:
    node_id: int
    name: str
    parent: int | None
    weight: float = 1.0  # weight of the edge to the parent; unused on the root


class Taxonomy:
    """Immutable rooted tree of class nodes.

    Node ids are consecutive integers in document order (order of first
    appearance in the source file). Exactly one node has no parent.
    """

    def __init__(self, nodes: Sequence[TaxonomyNode]):
        nodes = tuple(nodes)
        if not nodes:
            raise TaxonomyError("no nodes")
        for pos, node in enumerate(nodes):
            if node.node_id != pos:
                raise TaxonomyError(
                    f"node ids must be consecutive document positions, got id "
                    f"{node.node_id} at position {pos}"
                )
            if node.parent is not None:
                if not 0 <= node.parent < len(nodes):
                    raise TaxonomyError(f"node '{node.name}' has out-of-range parent")
                if node.parent == node.node_id:
                    raise TaxonomyError(f"cycle detected at '{node.name}' (self parent)")
                if not node.weight > 0:
                    raise TaxonomyError(f"edge weight for '{node.name}' must be positive")
        names = [n.name for n in nodes]
        if len(set(names)) != len(names):
            dup = sorted({m for m in names if names.count(m) > 1})
            raise TaxonomyError(f"duplicate names: {', '.join(dup)}")
        roots = [n.node_id for n in nodes if n.parent is None]
        if len(roots) == 0:
            raise TaxonomyError("cycle detected: every node has a parent, no root")
        if len(roots) > 1:
            raise TaxonomyError(
                "multiple roots: " + ", ".join(nodes[r].name for r in roots)
            )
        self._nodes = nodes
        self._root = roots[0]
        self._name_to_id = {n.name: n.node_id for n in nodes}

        # Reachability check doubles as cycle detection: following parent
        # links from any node must land on the root within n steps.
        children: list[list[int]] = [[] for _ in nodes]
        for n in nodes:
            steps = 0
            cur = n.node_id
            while nodes[cur].parent is not None:
                cur = nodes[cur].parent  # type: ignore[assignment]
                steps += 1
                if steps > len(nodes):
                    raise TaxonomyError(
                        f"cycle detected: '{n.name}' cannot reach the root"
                    )
            if n.parent is not None:
                children[n.parent].append(n.node_id)
        self._children = tuple(tuple(c) for c in children)
        self._leaf_ids = tuple(n.node_id for n in nodes if not children[n.node_id])

    @property
    def nodes(self) -> tuple[TaxonomyNode, ...]:
        return self._nodes

    @property
    def n_nodes(self) -> int:
        return len(self._nodes)

    @property
    def root_id(self) -> int:
        return self._root

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        """Leaf node ids in document order."""
        return self._leaf_ids

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return tuple(self._nodes[i].name for i in self._leaf_ids)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self._nodes)

    def children(self, node_id: int) -> tuple[int, ...]:
        return self._children[node_id]

    def is_leaf(self, node_id: int) -> bool:
        return not self._children[node_id]

    def id_of(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise TaxonomyError(f"unknown class name '{name}'") from None

    def level(self, node_id: int) -> int:
        """Edge count from the root (root is level 0)."""
        steps = 0
        cur = node_id
        while self._nodes[cur].parent is not None:
            cur = self._nodes[cur].parent  # type: ignore[assignment]
            steps += 1
        return steps

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.node_id, "name": n.name, "parent": n.parent, "weight": n.weight}
                for n in self._nodes
            ]
        }

    @staticmethod
    def from_dict(payload: dict) -> "Taxonomy":
        try:
            nodes = [
                TaxonomyNode(int(d["id"]), str(d["name"]),
                             None if d["parent"] is None else int(d["parent"]),
                             float(d.get("weight", 1.0)))
                for d in payload["nodes"]
            ]
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"malformed taxonomy dict: {exc}") from exc
        return Taxonomy(nodes)

    def __repr__(self) -> str:
        return f"Taxonomy({self.n_nodes} nodes, {len(self._leaf_ids)} leaves)"


@dataclass(frozen=True)
class FiniteMetric:
    """Symmetric nonnegative cost matrix over a named class set."""

    class_names: tuple[str, ...]
    costs: np.ndarray  # (K, K) float64

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64)
        if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {costs.shape}")
        if costs.shape[0] != len(self.class_names):
            raise ValueError("class_names length does not match cost matrix size")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def size(self) -> int:
        return len(self.class_names)

    def index_of(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name '{name}'") from None


def parse_taxonomy(text: str, format: str = "edge-list") -> Taxonomy:
    """Parse a taxonomy file.

    edge-list: one ``child<TAB>parent[<TAB>weight]`` line per edge, UTF-8,
    full-line ``#`` comments. json-tree: nested objects
    ``{"name": ..., "children": [...]}`` with optional per-child ``weight``.
    Node ids follow document order (first appearance).
    """
    if format == "edge-list":
        return _parse_edge_list(text)
    if format == "json-tree":
        return _parse_json_tree(text)
    raise TaxonomyError(f"unknown taxonomy format '{format}'")


def _parse_edge_list(text: str) -> Taxonomy:
    parent_of: dict[str, tuple[str, float]] = {}
    order: list[str] = []
    seen: set[str] = set()

    def register(name: str) -> None:
        if name not in seen:
            seen.add(name)
            order.append(name)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise TaxonomyError(f"line {lineno}: expected 'child<TAB>parent[<TAB>weight]'")
        child, parent = parts[0], parts[1]
        weight = 1.0
        if len(parts) == 3:
            try:
                weight = float(parts[2])
            except ValueError:
                raise TaxonomyError(f"line {lineno}: bad weight '{parts[2]}'") from None
            if not weight > 0 or not np.isfinite(weight):
                raise TaxonomyError(f"line {lineno}: weight must be a positive real")
        if child == parent:
            raise TaxonomyError(f"line {lineno}: cycle detected ('{child}' is its own parent)")
        if child in parent_of:
            raise TaxonomyError(f"line {lineno}: duplicate child entry '{child}'")
        parent_of[child] = (parent, weight)
        register(child)
        register(parent)

    if not order:
        raise TaxonomyError("no nodes")
    ids = {name: i for i, name in enumerate(order)}
    nodes = []
    for name in order:
        if name in parent_of:
            pname, w = parent_of[name]
            nodes.append(TaxonomyNode(ids[name], name, ids[pname], w))
        else:
            nodes.append(TaxonomyNode(ids[name], name, None))
    return Taxonomy(nodes)


def _parse_json_tree(text: str) -> Taxonomy:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"invalid JSON: {exc}") from exc

    nodes: list[TaxonomyNode] = []
    seen: set[str] = set()

    def walk(obj, parent_id: int | None) -> None:
        if not isinstance(obj, dict) or "name" not in obj:
            raise TaxonomyError("orphan node: every tree entry needs a 'name'")
        name = obj["name"]
        if not isinstance(name, str) or not name:
            raise TaxonomyError("node names must be non-empty strings")
        if name in seen:
            raise TaxonomyError(f"duplicate names: {name}")
        seen.add(name)
        weight = float(obj.get("weight", 1.0))
        if parent_id is None and "weight" in obj:
            raise TaxonomyError("root node cannot carry an edge weight")
        node_id = len(nodes)
        nodes.append(TaxonomyNode(node_id, name, parent_id, weight))
        children = obj.get("children", [])
        if not isinstance(children, list):
            raise TaxonomyError(f"children of '{name}' must be a list")
        for child in children:
            walk(child, node_id)

    walk(payload, None)
    if not nodes:
        raise TaxonomyError("no nodes")
    return Taxonomy(nodes)


def cost_matrix(tax: Taxonomy, nodes: str = "leaves-only") -> FiniteMetric:
    """Weighted shortest-path cost matrix over leaves or over all nodes.

    Row/column order matches document order of the selected nodes.
    """
    if nodes == "leaves-only":
        selected = list(tax.leaf_ids)
        if len(selected) < 2:
            raise TaxonomyError("leaves-only cost matrix needs at least 2 leaves")
    elif nodes == "all-nodes":
        selected = list(range(tax.n_nodes))
    else:
        raise TaxonomyError(f"unknown node selection '{nodes}'")

    # Distance from the root plus the deepest common ancestor of each pair:
    # D[a, b] = depth[a] + depth[b] - 2 * depth[lca(a, b)]. Writing each
    # node's depth over the (descendants x descendants) block in root-first
    # order leaves exactly the lca depth on every pair.
    n = tax.n_nodes
    depth = np.zeros(n)
    order = sorted(range(n), key=lambda i: (tax.level(i), i))
    for i in order:
        node = tax.nodes[i]
        if node.parent is not None:
            depth[i] = depth[node.parent] + node.weight

    pos = {node_id: p for p, node_id in enumerate(selected)}
    members: list[list[int]] = [[] for _ in range(n)]  # selected nodes per subtree
    for i in reversed(order):
        if i in pos:
            members[i].append(pos[i])
        for child in tax.children(i):
            members[i].extend(members[child])

    K = len(selected)
    lca_depth = np.zeros((K, K))
    for i in order:
        block = members[i]
        if len(block) > 1 or (block and i in pos):
            lca_depth[np.ix_(block, block)] = depth[i]
    sel_depth = depth[list(selected)]
    D = sel_depth[:, None] + sel_depth[None, :] - 2.0 * lca_depth
    np.fill_diagonal(D, 0.0)
    names = tuple(tax.nodes[i].name for i in selected)
    return FiniteMetric(names, D)


@dataclass(frozen=True)
class MetricViolation:
    kind: str  # "asymmetry" | "diagonal" | "non-positive" | "triangle"
    indices: tuple[int, ...]


def validate_metric(D: np.ndarray, tol: float = 0.0) -> list[MetricViolation]:
    """List every metric-axiom violation of a square cost matrix.

    Empty result means D is symmetric, zero on the diagonal, positive off
    the diagonal, and satisfies the triangle inequality. Checks are exact
    by default; pass a small ``tol`` for matrices built from inexact sums.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {D.shape}")
    K = D.shape[0]
    violations: list[MetricViolation] = []

    asym = np.argwhere(np.abs(D - D.T) > tol)
    for i, j in asym:
        if i < j:
            violations.append(MetricViolation("asymmetry", (int(i), int(j))))
    diag = np.argwhere(np.abs(np.diag(D)) > tol).ravel()
    for i in diag:
        violations.append(MetricViolation("diagonal", (int(i),)))
    off = ~np.eye(K, dtype=bool)
    nonpos = np.argwhere(off & (D <= tol))
    for i, j in nonpos:
        violations.append(MetricViolation("non-positive", (int(i), int(j))))
    # triangle: row-at-a-time min-plus with a reused (K, K) buffer; the
    # slow per-triple collection only runs for rows that actually violate
    buffer = np.empty_like(D)
    for i in range(K):
        np.add(D[i][:, None], D, out=buffer)  # buffer[j, k] = D[i,j] + D[j,k]
        if np.any(D[i] > buffer.min(axis=0) + tol):
            bad = D[i][None, :] > buffer + tol
            for j, k in np.argwhere(bad):
                if i != j and j != k and i != k:
                    violations.append(
                        MetricViolation("triangle", (int(i), int(j), int(k))))
    return violations


def metric_to_csv(metric: FiniteMetric) -> str:
    """CSV text with a header row/column of class names."""
    buf = io.StringIO()
    buf.write("," + ",".join(metric.class_names) + "\n")
    for name, row in zip(metric.class_names, metric.costs):
        buf.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
