"""Rooted ordered hierarchies: text and graph-dictionary formats, properties,
exact tree distances and multi-parent resolution.

Text format: one node per line, two spaces of indentation per depth level,
node identifier is the stripped line content. Example::

    root
      a
        b
      c
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DuplicateNodeId,
    EmptyInput,
    IndentJump,
    MultipleParents,
    MultipleRoots,
    NoRoot,
    NoSource,
    ParseError,
    UnknownChild,
    UnknownNode,
)

INDENT = "  "


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Immutable rooted tree with ordered children.

    ``children`` maps every node (leaves included) to a tuple of its children.
    ``labels`` maps node identifiers to display strings; identifiers double as
    labels when omitted.
    """

    root: str
    children: Mapping[str, tuple[str, ...]]
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        kids = {node: tuple(cs) for node, cs in self.children.items()}
        kids.setdefault(self.root, ())
        for cs in list(kids.values()):
            for c in cs:
                kids.setdefault(c, ())
        object.__setattr__(self, "children", kids)
        labels = {n: self.labels.get(n, n) for n in kids}
        object.__setattr__(self, "labels", labels)
        _check_tree(self.root, kids)

    def __eq__(self, other):
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return self.root == other.root and self.children == other.children

    def __hash__(self):
        return hash((self.root, tuple(self.edges)))

    def __len__(self):
        return len(self.children)

    def __contains__(self, node):
        return node in self.children

    def __repr__(self):
        return f"Hierarchy(root={self.root!r}, nodes={len(self)})"

    @cached_property
    def nodes(self) -> tuple[str, ...]:
        """Nodes in pre-order."""
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(self.children[node]))
        return tuple(order)

    @cached_property
    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def parent(self) -> dict[str, str | None]:
        par: dict[str, str | None] = {self.root: None}
        for node, cs in self.children.items():
            for c in cs:
                par[c] = node
        return par

    @cached_property
    def depth(self) -> dict[str, int]:
        dep = {self.root: 0}
        for node in self.nodes[1:]:
            dep[node] = dep[self.parent[node]] + 1
        return dep

    @cached_property
    def subtree_size(self) -> dict[str, int]:
        size = {n: 1 for n in self.nodes}
        for node in reversed(self.nodes[1:]):
            size[self.parent[node]] += size[node]
        return size

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, c) for p in self.nodes for c in self.children[p]]

    @property
    def leaves(self) -> list[str]:
        return [n for n in self.nodes if not self.children[n]]

    def is_leaf(self, node: str) -> bool:
        return not self.children[node]

    def ancestors(self, node: str) -> list[str]:
        """``node`` and its ancestors, from ``node`` up to the root."""
        if node not in self.children:
            raise UnknownNode(f"unknown node {node!r}")
        path = []
        cur: str | None = node
        while cur is not None:
            path.append(cur)
            cur = self.parent[cur]
        return path


def _check_tree(root: str, kids: Mapping[str, Sequence[str]]) -> None:
    seen = {root}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for c in kids[node]:
            if c in seen:
                raise CycleDetected(f"node {c!r} reached twice (cycle or multiple parents)")
            seen.add(c)
            queue.append(c)
    if len(seen) != len(kids):
        stray = sorted(set(kids) - seen)[:5]
        raise NoRoot(f"nodes unreachable from root {root!r}: {stray}")


# -- text format ----------------------------------------------------------


def _indent_level(raw: str, lineno: int) -> tuple[int, str]:
    content = raw.lstrip(" ")
    if content.startswith("\t"):
        raise ParseError("tab characters are not allowed in indentation", lineno)
    spaces = len(raw) - len(content)
    if spaces % len(INDENT):
        raise ParseError(f"indentation of {spaces} spaces is not a multiple of two", lineno)
    return spaces // len(INDENT), content.strip()


def parse_text(text: str) -> Hierarchy:
    """Parse the indentation format into a :class:`Hierarchy`."""
    root = None
    children: dict[str, list[str]] = {}
    stack: list[str] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        raw = raw.rstrip("\r")
        if not raw.strip():
            continue
        level, name = _indent_level(raw.rstrip(), lineno)
        if root is None:
            if level != 0:
                raise IndentJump("first node must not be indented", lineno)
            root = name
            children[name] = []
            stack = [name]
            continue
        if level == 0:
            raise MultipleRoots(f"second top-level node {name!r}", lineno)
        if level > len(stack):
            raise IndentJump(f"indentation jumps from level {len(stack) - 1} to {level}", lineno)
        if name in children:
            raise DuplicateNodeId(f"node {name!r} appears more than once", lineno)
        del stack[level:]
        children[stack[-1]].append(name)
        children[name] = []
        stack.append(name)
    if root is None:
        raise EmptyInput("no nodes in input")
    return Hierarchy(root, children)


def serialize_text(h: Hierarchy) -> str:
    lines = [INDENT * h.depth[n] + h.labels[n] for n in h.nodes]
    return "\n".join(lines) + "\n"


# -- graph dictionary format ------------------------------------------------


def parse_graph_dict(doc: Mapping[str, Sequence[str]]) -> Hierarchy:
    """Build a tree from ``{node: [child, ...]}``; every node must be a key."""
    if not doc:
        raise NoRoot("empty graph dictionary")
    parent: dict[str, str] = {}
    for node, cs in doc.items():
        for c in cs:
            if c not in doc:
                raise UnknownChild(f"child {c!r} of {node!r} is not a key")
            if c in parent:
                raise MultipleParents(f"node {c!r} has parents {parent[c]!r} and {node!r}")
            parent[c] = node
    roots = [n for n in doc if n not in parent]
    reached = set()
    stack = list(roots)
    while stack:
        n = stack.pop()
        reached.add(n)
        stack.extend(doc[n])
    if len(reached) != len(doc):
        raise CycleDetected(f"cycle through {sorted(set(doc) - reached)[:5]}")
    if not roots:
        raise NoRoot("every node has a parent")
    if len(roots) > 1:
        raise MultipleRoots(f"several root candidates: {roots[:5]}")
    return Hierarchy(roots[0], {n: tuple(cs) for n, cs in doc.items()})


def serialize_graph_dict(h: Hierarchy) -> dict[str, list[str]]:
    return {n: list(h.children[n]) for n in h.nodes}


# -- properties ---------------------------------------------------------------


@dataclass(frozen=True)
class TreeProperties:
    num_nodes: int
    num_edges: int
    depth: int
    num_leaves: int
    max_degree: int
    avg_branching_factor: float

    def as_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "depth": self.depth,
            "num_leaves": self.num_leaves,
            "max_degree": self.max_degree,
            "avg_branching_factor": self.avg_branching_factor,
        }


def truncate_ratio(num: int, den: int, digits: int = 1) -> float:
    """``num / den`` truncated (not rounded) to ``digits`` decimals, exactly."""
    if den == 0:
        return 0.0
    scale = 10 ** digits
    return (num * scale // den) / scale


def compute_properties(h: Hierarchy) -> TreeProperties:
    n = len(h)
    leaves = sum(1 for cs in h.children.values() if not cs)
    internal = n - leaves
    return TreeProperties(
        num_nodes=n,
        num_edges=n - 1,
        depth=max(h.depth.values()),
        num_leaves=leaves,
        max_degree=max(len(cs) for cs in h.children.values()),
        avg_branching_factor=truncate_ratio(n - 1, internal),
    )


# -- distances ----------------------------------------------------------------


def tree_distance(h: Hierarchy, u: str, v: str) -> int:
    """Number of edges on the unique ``u``-``v`` path."""
    up = h.ancestors(u)
    vp = h.ancestors(v)
    on_u = {node: i for i, node in enumerate(up)}
    for j, node in enumerate(vp):
        if node in on_u:
            return on_u[node] + j
    raise AssertionError("nodes share no ancestor")  # unreachable for a valid tree


def distance_row(h: Hierarchy, node: str) -> np.ndarray:
    """Tree distances from ``node`` to every node, columns in pre-order.

    Relies on pre-order numbering: the subtree of ``a`` occupies the index
    range ``[index[a], index[a] + subtree_size[a])``.
    """
    idx = h.index
    depths = _depth_array(h)
    lca_depth = np.zeros(len(h), dtype=np.int64)
    for anc in reversed(h.ancestors(node)):
        start = idx[anc]
        lca_depth[start:start + h.subtree_size[anc]] = h.depth[anc]
    return depths + h.depth[node] - 2 * lca_depth


def _depth_array(h: Hierarchy) -> np.ndarray:
    return np.fromiter((h.depth[n] for n in h.nodes), dtype=np.int64, count=len(h))


@dataclass(frozen=True)
class DistanceBatch:
    start: int
    nodes: tuple[str, ...]
    rows: np.ndarray  # shape (len(nodes), N), columns follow Hierarchy.nodes


def all_pairs_distances(h: Hierarchy, batch_rows: int) -> Iterator[DistanceBatch]:
    """Yield the N x N tree-distance matrix in row batches of ``batch_rows``."""
    if batch_rows < 1:
        raise ValueError("batch_rows must be >= 1")
    nodes = h.nodes
    for start in range(0, len(nodes), batch_rows):
        chunk = nodes[start:start + batch_rows]
        rows = np.stack([distance_row(h, n) for n in chunk])
        yield DistanceBatch(start, chunk, rows)


def distance_matrix(h: Hierarchy) -> np.ndarray:
    return np.concatenate([b.rows for b in all_pairs_distances(h, len(h))])


# -- multiple inheritance -----------------------------------------------------


@dataclass(frozen=True)
class MultiParentGraph:
    """Single-source DAG where a node may list several parents.

    ``nodes`` fixes sibling order; ``parents`` maps a node to its parent list.
    """

    nodes: tuple[str, ...]
    parents: Mapping[str, tuple[str, ...]]

    @classmethod
    def from_children(cls, doc: Mapping[str, Sequence[str]]) -> "MultiParentGraph":
        nodes: list[str] = []
        seen = set()
        parents: dict[str, list[str]] = {}
        for node, cs in doc.items():
            for n in (node, *cs):
                if n not in seen:
                    seen.add(n)
                    nodes.append(n)
            for c in cs:
                if c not in doc:
                    raise UnknownChild(f"child {c!r} of {node!r} is not a key")
                parents.setdefault(c, []).append(node)
        return cls(tuple(nodes), {n: tuple(ps) for n, ps in parents.items()})

    def children_of(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {n: [] for n in self.nodes}
        for node in self.nodes:
            for p in self.parents.get(node, ()):
                if p not in kids:
                    raise UnknownNode(f"parent {p!r} of {node!r} is not a node")
                kids[p].append(node)
        return kids

    @property
    def has_multiple_inheritance(self) -> bool:
        return any(len(ps) > 1 for ps in self.parents.values())


def resolve_multi_parent(g: MultiParentGraph) -> Hierarchy:
    """Keep one parent per node: the shallowest, ties broken by pre-order."""
    kids = g.children_of()
    sources = [n for n in g.nodes if not g.parents.get(n)]
    if not sources:
        raise NoSource("every node has a parent")
    indeg = {n: len(g.parents.get(n, ())) for n in g.nodes}
    queue = deque(sources)
    done = 0
    while queue:
        n = queue.popleft()
        done += 1
        for c in kids[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if done != len(g.nodes):
        raise CycleDetected("multi-parent graph contains a cycle")
    if len(sources) > 1:
        raise MultipleRoots(f"several source nodes: {sources[:5]}")
    source = sources[0]

    depth = {source: 0}
    queue = deque([source])
    while queue:
        n = queue.popleft()
        for c in kids[n]:
            if c not in depth:
                depth[c] = depth[n] + 1
                queue.append(c)

    preorder: dict[str, int] = {}
    stack = [source]
    while stack:
        n = stack.pop()
        if n in preorder:
            continue
        preorder[n] = len(preorder)
        stack.extend(reversed(kids[n]))

    tree: dict[str, list[str]] = {n: [] for n in g.nodes}
    for node in g.nodes:
        ps = g.parents.get(node, ())
        if not ps:
            continue
        keep = min(ps, key=lambda p: (depth[p], preorder[p]))
        tree[keep].append(node)
    return Hierarchy(source, tree)
