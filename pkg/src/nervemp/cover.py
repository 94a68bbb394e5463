"""Graphs, subgraph covers, nerve skeletons, trees and variable splits.

Node identifiers are dense integers 0..n-1; every iteration order is fixed
by node / subgraph index so all downstream computations are deterministic.
All objects are immutable values after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedNerve, InvalidInstance


def _norm_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


class Graph:
    """Undirected graph on nodes 0..n-1 without self-loops."""

    __slots__ = ("nodes", "edges")

    def __init__(self, n_nodes: int, edges):
        if n_nodes < 0:
            raise InvalidInstance(f"node count {n_nodes} is negative")
        normed = set()
        for k, (u, v) in enumerate(edges):
            if u == v:
                raise InvalidInstance(f"edge {k} is a self-loop at node {u}")
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise InvalidInstance(f"edge {k} = ({u}, {v}) leaves 0..{n_nodes - 1}")
            normed.add(_norm_edge(u, v))
        self.nodes = tuple(range(n_nodes))
        self.edges = tuple(sorted(normed))

    @property
    def n(self) -> int:
        return len(self.nodes)


class SubgraphCover:
    """A graph with t covering subgraphs and disjoint observable sets S_i."""

    __slots__ = ("graph", "subgraphs", "observables", "_vsets", "_node_subgraphs")

    def __init__(self, graph: Graph, subgraphs, observables):
        subgraphs = tuple(tuple(sorted(set(s))) for s in subgraphs)
        observables = tuple(tuple(sorted(set(s))) for s in observables)
        if len(subgraphs) < 1:
            raise InvalidInstance("a cover needs at least one subgraph")
        if len(observables) != len(subgraphs):
            raise InvalidInstance(
                f"{len(observables)} observable sets for {len(subgraphs)} subgraphs"
            )
        vsets = [frozenset(s) for s in subgraphs]
        for i, s in enumerate(subgraphs):
            for v in s:
                if not (0 <= v < graph.n):
                    raise InvalidInstance(f"subgraph {i} contains undeclared node {v}")
        covered = set().union(*vsets) if vsets else set()
        if covered != set(graph.nodes):
            missing = sorted(set(graph.nodes) - covered)
            raise InvalidInstance(f"nodes {missing} are not covered by any subgraph")
        for i, obs in enumerate(observables):
            for v in obs:
                if v not in vsets[i]:
                    raise InvalidInstance(
                        f"observable {v} of subgraph {i} is not a node of subgraph {i}"
                    )
                for j, vs in enumerate(vsets):
                    if j != i and v in vs:
                        raise InvalidInstance(
                            f"observable {v} of subgraph {i} also lies in subgraph {j}"
                        )
        self.graph = graph
        self.subgraphs = subgraphs
        self.observables = observables
        self._vsets = tuple(vsets)
        node_subgraphs: dict[int, list[int]] = {v: [] for v in graph.nodes}
        for i, s in enumerate(subgraphs):
            for v in s:
                node_subgraphs[v].append(i)
        self._node_subgraphs = {v: tuple(ids) for v, ids in node_subgraphs.items()}

    @property
    def t(self) -> int:
        return len(self.subgraphs)

    def node_set(self, i: int) -> frozenset:
        return self._vsets[i]

    def subgraphs_containing(self, v: int) -> tuple[int, ...]:
        return self._node_subgraphs[v]

    def induced_edges(self, i: int) -> tuple[tuple[int, int], ...]:
        vs = self._vsets[i]
        return tuple(e for e in self.graph.edges if e[0] in vs and e[1] in vs)

    @property
    def s_order(self) -> tuple[int, ...]:
        """All observable nodes, sorted; the coordinate order of R^|S|."""
        return tuple(sorted(v for obs in self.observables for v in obs))

    @property
    def observable_set(self) -> frozenset:
        return frozenset(v for obs in self.observables for v in obs)


@dataclass(frozen=True)
class NerveSkeleton:
    """One node per subgraph, an edge wherever two subgraphs intersect."""

    t: int
    edges: tuple[tuple[int, int], ...]

    def neighbors(self, i: int) -> tuple[int, ...]:
        out = [v if u == i else u for (u, v) in self.edges if i in (u, v)]
        return tuple(sorted(out))

    def is_connected(self) -> bool:
        if self.t <= 1:
            return True
        seen = {0}
        stack = [0]
        adj = {i: set() for i in range(self.t)}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.t


@dataclass(frozen=True)
class SpanningTree:
    """Undirected spanning tree of a nerve skeleton plus its complement."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    complement: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class DirectedTree:
    """Spanning tree with every edge oriented toward the root."""

    root: int
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]  # (tail, head) = (child, parent)
    parent: dict
    children: dict
    complement: tuple[tuple[int, int], ...]

    def postorder(self) -> tuple[int, ...]:
        """Children (in index order) before parents; root last."""
        order = []
        stack = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
            else:
                stack.append((node, True))
                for c in reversed(self.children[node]):
                    stack.append((c, False))
        return tuple(order)

    def subtree_nodes(self, i: int) -> frozenset:
        out = {i}
        stack = [i]
        while stack:
            u = stack.pop()
            for c in self.children[u]:
                out.add(c)
                stack.append(c)
        return frozenset(out)


@dataclass(frozen=True)
class EdgePartition:
    """Variable split (s, x, y, z) of the function held at an edge's tail."""

    edge: tuple[int, int]
    s_vars: tuple[int, ...]
    x_vars: tuple[int, ...]
    y_vars: tuple[int, ...]
    z_vars: tuple[int, ...]


def build_nerve(cover: SubgraphCover) -> NerveSkeleton:
    edges = []
    for i in range(cover.t):
        for j in range(i + 1, cover.t):
            if cover.node_set(i) & cover.node_set(j):
                edges.append((i, j))
    return NerveSkeleton(t=cover.t, edges=tuple(edges))


class _UnionFind:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.p[ra] = rb
        return True


def spanning_tree(
    nerve: NerveSkeleton,
    strategy: str = "bfs",
    cover: SubgraphCover | None = None,
    root: int | None = None,
    seed: int | None = None,
) -> SpanningTree:
    """Spanning tree of the nerve plus its complement edge set.

    Strategies: "bfs" from `root` (default: lowest index), "random" with a
    mandatory seed, and "max_overlap" which picks a maximum-weight tree
    with weight |V_i & V_j| and lexicographic (i, j) tie-breaking.
    """
    if not nerve.is_connected():
        raise DisconnectedNerve("the nerve skeleton is not connected")
    if root is not None and not (0 <= root < nerve.t):
        raise ValueError(f"root {root} is not a nerve node (t = {nerve.t})")
    nodes = tuple(range(nerve.t))
    if nerve.t == 1:
        return SpanningTree(nodes=nodes, edges=(), complement=())
    if strategy == "bfs":
        start = 0 if root is None else root
        adj = {i: [] for i in nodes}
        for u, v in nerve.edges:
            adj[u].append(v)
            adj[v].append(u)
        for i in nodes:
            adj[i].sort()
        seen = {start}
        queue = [start]
        tree = []
        while queue:
            u = queue.pop(0)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    tree.append(_norm_edge(u, w))
                    queue.append(w)
    elif strategy == "random":
        if seed is None:
            raise ValueError("random spanning tree requires a seed")
        rng = np.random.default_rng(seed)
        order = list(nerve.edges)
        rng.shuffle(order)
        uf = _UnionFind(nerve.t)
        tree = [e for e in order if uf.union(*e)]
    elif strategy == "max_overlap":
        if cover is None:
            raise ValueError("max_overlap strategy requires the cover")
        weighted = sorted(
            nerve.edges,
            key=lambda e: (-len(cover.node_set(e[0]) & cover.node_set(e[1])), e),
        )
        uf = _UnionFind(nerve.t)
        tree = [e for e in weighted if uf.union(*e)]
    else:
        raise ValueError(f"unknown spanning tree strategy {strategy!r}")
    tree_set = set(tree)
    complement = tuple(e for e in nerve.edges if e not in tree_set)
    return SpanningTree(nodes=nodes, edges=tuple(sorted(tree_set)), complement=complement)


def direct_tree(stree: SpanningTree, root: int) -> DirectedTree:
    """Orient every tree edge toward `root`."""
    if root not in stree.nodes:
        raise ValueError(f"root {root} is not a tree node")
    adj = {i: [] for i in stree.nodes}
    for u, v in stree.edges:
        adj[u].append(v)
        adj[v].append(u)
    for i in stree.nodes:
        adj[i].sort()
    parent: dict[int, int] = {}
    seen = {root}
    queue = [root]
    while queue:
        u = queue.pop(0)
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                parent[w] = u
                queue.append(w)
    if len(seen) != len(stree.nodes):
        raise InvalidInstance("tree edges do not span all nodes")
    children: dict[int, tuple[int, ...]] = {i: () for i in stree.nodes}
    for child in sorted(parent):
        p = parent[child]
        children[p] = children[p] + (child,)
    edges = tuple((child, parent[child]) for child in sorted(parent))
    return DirectedTree(
        root=root,
        nodes=stree.nodes,
        edges=edges,
        parent=dict(parent),
        children=children,
        complement=stree.complement,
    )


def compute_partitions(cover: SubgraphCover, dtree: DirectedTree) -> dict:
    """EdgePartition for every directed edge of the tree.

    For edge (g_i -> g_j):
      s = S_i;
      x = V_i & (V_j | union of V_k over complement edges (g_i, g_k));
      y = live non-observable variables whose containing subgraphs all lie
          in the subtree rooted at g_i and that are not in x;
      z = the remaining live variables held at g_i.
    """
    observable = cover.observable_set
    comp_neighbors: dict[int, list[int]] = {i: [] for i in dtree.nodes}
    for u, v in dtree.complement:
        comp_neighbors[u].append(v)
        comp_neighbors[v].append(u)
    subtree = {i: dtree.subtree_nodes(i) for i in dtree.nodes}
    partitions: dict[tuple[int, int], EdgePartition] = {}
    live: dict[int, tuple[int, ...]] = {}
    for i in dtree.postorder():
        held = set(cover.node_set(i))
        for c in dtree.children[i]:
            part = partitions[(c, i)]
            held.update(set(live[c]) - set(part.s_vars) - set(part.y_vars))
        live[i] = tuple(sorted(held))
        if i == dtree.root:
            continue
        j = dtree.parent[i]
        shared = cover.node_set(i) & cover.node_set(j)
        for k in comp_neighbors[i]:
            shared = shared | (cover.node_set(i) & cover.node_set(k))
        x_set = frozenset(shared)
        s_set = frozenset(cover.observables[i])
        y_set = frozenset(
            v
            for v in live[i]
            if v not in observable
            and v not in x_set
            and set(cover.subgraphs_containing(v)) <= subtree[i]
        )
        z_set = frozenset(live[i]) - s_set - x_set - y_set
        partitions[(i, j)] = EdgePartition(
            edge=(i, j),
            s_vars=tuple(sorted(s_set)),
            x_vars=tuple(sorted(x_set)),
            y_vars=tuple(sorted(y_set)),
            z_vars=tuple(sorted(z_set)),
        )
    return partitions


def partition_variables(
    cover: SubgraphCover, dtree: DirectedTree, edge: tuple[int, int]
) -> EdgePartition:
    parts = compute_partitions(cover, dtree)
    if edge not in parts:
        raise ValueError(f"edge {edge} is not a directed tree edge")
    return parts[edge]


def held_variables(cover: SubgraphCover, dtree: DirectedTree, node: int) -> tuple[int, ...]:
    """Variables of the function held at `node` during message passing,
    before the node's own observables are fixed."""
    partitions = compute_partitions(cover, dtree)
    live: dict[int, set] = {}
    for i in dtree.postorder():
        vs = set(cover.node_set(i))
        for c in dtree.children[i]:
            part = partitions[(c, i)]
            vs.update(live[c] - set(part.s_vars) - set(part.y_vars))
        live[i] = vs
    return tuple(sorted(live[node]))
