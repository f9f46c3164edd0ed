"""Node sets, summation-constraint matrices and the orthogonal projector.

A hierarchy is described by an ordered tuple of node identifiers and a list of
summation constraints ``parent = sum(children)``. Each constraint becomes one
row of the constraint matrix ``K`` (``-1`` on the parent, ``+1`` on each child),
so that a node-indexed vector ``y`` is coherent iff ``K @ y == 0``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DisjointHouseholdSets,
    DuplicateNode,
    EmptyPartition,
    SingularConstraintGram,
    UnprunedEmptyLeaf,
)

ROOT = "total"
KINDS = ("two_level", "multi_level", "two_partitions", "crossed")


@dataclass(frozen=True)
class HierarchySpec:
    """Ordered node set plus the summation constraints linking the nodes.

    ``constraints`` holds ``(parent, children)`` pairs in row order.
    ``members`` optionally maps every node to the household ids it aggregates.
    ``empty_leaves`` lists leaf nodes known to aggregate no household; they must
    not appear in ``nodes`` (they are pruned before building ``K``).
    """

    kind: str
    nodes: tuple[str, ...]
    constraints: tuple[tuple[str, tuple[str, ...]], ...]
    members: Mapping[str, frozenset] | None = field(default=None, compare=False)
    empty_leaves: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown hierarchy kind {self.kind!r}")
        seen = set()
        for node in self.nodes:
            if node in seen:
                raise DuplicateNode(f"node {node!r} listed twice")
            seen.add(node)
        for parent, children in self.constraints:
            if not children:
                raise EmptyPartition(f"aggregate node {parent!r} has no children")
            for name in (parent, *children):
                if name not in seen:
                    raise ValueError(f"constraint references unknown node {name!r}")
            if len(set(children)) != len(children) or parent in children:
                raise DuplicateNode(f"constraint on {parent!r} repeats a node")

    @property
    def root(self) -> str:
        return self.nodes[0]

    @property
    def leaves(self) -> tuple[str, ...]:
        parents = {p for p, _ in self.constraints}
        return tuple(n for n in self.nodes if n not in parents)

    def index(self, node: str) -> int:
        return self.nodes.index(node)

    def to_dict(self) -> dict:
        K = build_constraint_matrix(self).matrix
        doc = {
            "kind": self.kind,
            "nodes": list(self.nodes),
            "constraints": K.astype(int).tolist(),
        }
        if self.members is not None:
            doc["members"] = {n: sorted(self.members[n]) for n in self.nodes}
        return doc

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HierarchySpec":
        nodes = tuple(doc["nodes"])
        constraints = []
        for row in doc["constraints"]:
            if len(row) != len(nodes):
                raise DimensionMismatch("constraint row length differs from node count")
            row = [int(v) for v in row]
            parents = [nodes[j] for j, v in enumerate(row) if v == -1]
            children = tuple(nodes[j] for j, v in enumerate(row) if v == 1)
            if len(parents) != 1 or any(v not in (-1, 0, 1) for v in row):
                raise ValueError("each constraint row needs exactly one -1 and entries in {-1,0,1}")
            constraints.append((parents[0], children))
        members = doc.get("members")
        if members is not None:
            members = {k: frozenset(v) for k, v in members.items()}
        return cls(doc["kind"], nodes, tuple(constraints), members)

    @classmethod
    def from_json(cls, text_or_path: str) -> "HierarchySpec":
        text = text_or_path
        if not text_or_path.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


# -- constructors ---------------------------------------------------------------


def two_level(leaves: Sequence[str], root: str = ROOT) -> HierarchySpec:
    """Single root equal to the sum of ``leaves``."""
    leaves = tuple(leaves)
    if not leaves:
        raise EmptyPartition("two-level hierarchy needs at least one leaf")
    return HierarchySpec("two_level", (root, *leaves), ((root, leaves),))


def multi_level(tree: Mapping) -> HierarchySpec:
    """Generic tree given as nested mappings ``{root: {child: {...}, leaf: None}}``.

    Nodes and constraint rows are emitted level by level (breadth first), which
    reproduces the lexicographic layout used for three-level trees.
    """
    if len(tree) != 1:
        raise ValueError("tree must have exactly one root")
    nodes, constraints = [], []
    frontier = list(tree.items())
    nodes.extend(k for k, _ in frontier)
    while frontier:
        nxt = []
        for name, sub in frontier:
            if sub:
                children = tuple(sub.keys())
                constraints.append((name, children))
                nodes.extend(children)
                nxt.extend(sub.items())
        frontier = nxt
    return HierarchySpec("multi_level", tuple(nodes), tuple(constraints))


def two_partitions(part_a: Sequence[str], part_b: Sequence[str], root: str = ROOT) -> HierarchySpec:
    """Two trees sharing the root: ``root = sum(A) = sum(B)``."""
    part_a, part_b = tuple(part_a), tuple(part_b)
    if not part_a or not part_b:
        raise EmptyPartition("both partitions need at least one element")
    return HierarchySpec(
        "two_partitions",
        (root, *part_a, *part_b),
        ((root, part_a), (root, part_b)),
    )


def leaf_name(a: str, b: str) -> str:
    return f"{a}&{b}"


def crossed(
    part_a: Sequence[str],
    part_b: Sequence[str],
    pairs: Iterable[tuple[str, str]] | None = None,
    empty_pairs: Iterable[tuple[str, str]] = (),
    root: str = ROOT,
    members: Mapping[str, frozenset] | None = None,
) -> HierarchySpec:
    """Two crossed partitions with leaves at their intersections.

    ``pairs`` lists the retained (non-empty) intersections; by default every
    pair not in ``empty_pairs`` is kept. Constraint rows follow the order
    root-over-A, each A element over its leaves, root-over-B, each B element
    over its leaves.
    """
    part_a, part_b = tuple(part_a), tuple(part_b)
    if not part_a or not part_b:
        raise EmptyPartition("both partitions need at least one element")
    empty_pairs = {tuple(p) for p in empty_pairs}
    if pairs is None:
        pairs = [(a, b) for a in part_a for b in part_b if (a, b) not in empty_pairs]
    pairs = set(map(tuple, pairs))
    for a, b in pairs:
        if a not in part_a or b not in part_b:
            raise ValueError(f"leaf pair {(a, b)!r} not drawn from the two partitions")
    order = [(a, b) for a in part_a for b in part_b if (a, b) in pairs]
    leaves = tuple(leaf_name(a, b) for a, b in order)
    constraints = [(root, part_a)]
    for a in part_a:
        kids = tuple(leaf_name(a, b) for (aa, b) in order if aa == a)
        if not kids:
            raise EmptyPartition(f"partition element {a!r} has no non-empty intersection")
        constraints.append((a, kids))
    constraints.append((root, part_b))
    for b in part_b:
        kids = tuple(leaf_name(a, b) for (a, bb) in order if bb == b)
        if not kids:
            raise EmptyPartition(f"partition element {b!r} has no non-empty intersection")
        constraints.append((b, kids))
    return HierarchySpec(
        "crossed",
        (root, *part_a, *part_b, *leaves),
        tuple(constraints),
        members,
        frozenset(leaf_name(a, b) for a, b in empty_pairs),
    )


def _groups(partition) -> dict[str, frozenset]:
    if hasattr(partition, "groups"):
        partition = partition.groups()
    return {str(k): frozenset(v) for k, v in partition.items()}


def enumerate_two_level(partition, root: str = ROOT) -> HierarchySpec:
    """Root plus one node per cluster of ``partition`` (a Clustering or mapping)."""
    groups = _groups(partition)
    if not groups:
        raise EmptyPartition("partition has no cluster")
    spec = two_level(list(groups), root)
    members = dict(groups)
    members[root] = frozenset().union(*groups.values())
    return HierarchySpec(spec.kind, spec.nodes, spec.constraints, members)


def enumerate_crossed_nodes(partition_a, partition_b, root: str = ROOT) -> HierarchySpec:
    """Crossed hierarchy of two household partitions, empty intersections pruned.

    Each partition is a ``Clustering`` (or a mapping label -> household ids).
    The returned spec carries the household membership of every node.
    """
    ga, gb = _groups(partition_a), _groups(partition_b)
    all_a = frozenset().union(*ga.values()) if ga else frozenset()
    all_b = frozenset().union(*gb.values()) if gb else frozenset()
    if all_a != all_b:
        raise DisjointHouseholdSets(
            f"partitions cover different households ({len(all_a ^ all_b)} differ)"
        )
    if not ga or not gb:
        raise EmptyPartition("both partitions need at least one cluster")
    members = {root: all_a, **ga, **gb}
    pairs, empty = [], []
    for a, ma in ga.items():
        for b, mb in gb.items():
            inter = ma & mb
            if inter:
                pairs.append((a, b))
                members[leaf_name(a, b)] = frozenset(inter)
            else:
                empty.append((a, b))
    return crossed(list(ga), list(gb), pairs, empty, root, members)


# -- matrices -------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintMatrix:
    matrix: np.ndarray
    nodes: tuple[str, ...]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.matrix, dtype=np.float64).tobytes())
        h.update(str(self.matrix.shape).encode())
        h.update("\x1f".join(self.nodes).encode())
        return h.hexdigest()


def build_constraint_matrix(spec: HierarchySpec) -> ConstraintMatrix:
    """One row per ``(parent, children)`` constraint, columns in ``spec.nodes`` order."""
    stale = spec.empty_leaves & set(spec.nodes)
    if stale:
        raise UnprunedEmptyLeaf(f"empty leaves still listed as nodes: {sorted(stale)}")
    col = {n: j for j, n in enumerate(spec.nodes)}
    K = np.zeros((len(spec.constraints), len(spec.nodes)))
    for i, (parent, children) in enumerate(spec.constraints):
        K[i, col[parent]] = -1.0
        for c in children:
            K[i, col[c]] = 1.0
    K.setflags(write=False)
    return ConstraintMatrix(K, spec.nodes)


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector onto ``Ker(K)``."""

    matrix: np.ndarray
    source_hash: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        return project(self, v)


def build_projector(
    K: ConstraintMatrix, cond_limit: float = 1e12, allow_redundant: bool = True
) -> Projector:
    """``I - K^T (K K^T)^{-1} K``.

    Redundant constraint rows (always present in crossed hierarchies) make
    ``K K^T`` singular; above ``cond_limit`` the pseudo-inverse is used, or
    ``SingularConstraintGram`` is raised when ``allow_redundant`` is false.
    """
    A = np.asarray(K.matrix, dtype=float)
    n = A.shape[1]
    if A.shape[0] == 0:
        P = np.eye(n)
    else:
        G = A @ A.T
        cond = np.linalg.cond(G)
        if np.isfinite(cond) and cond < cond_limit:
            P = np.eye(n) - A.T @ np.linalg.solve(G, A)
        elif allow_redundant:
            P = np.eye(n) - A.T @ np.linalg.pinv(G, rcond=1e-10, hermitian=True) @ A
        else:
            raise SingularConstraintGram(
                f"K K^T condition number {cond:.3g} exceeds {cond_limit:.0e}: redundant constraints"
            )
    P = 0.5 * (P + P.T)
    P.setflags(write=False)
    return Projector(P, K.digest())


def project(p: Projector, v: np.ndarray) -> np.ndarray:
    """Project a node vector, or each row of a ``(T, |nodes|)`` panel."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != p.dim:
        raise DimensionMismatch(f"expected last dimension {p.dim}, got {v.shape[-1]}")
    return v @ p.matrix  # P symmetric
