"""Covers, nerves, trees and variable partitions.

The brute-force oracle for nerve construction checks every node pair; the
partition checks replay the worked three-cluster setup where a shared node
is carried along as a z-variable and eliminated one hop later.
"""

import pytest

from nervemp.bench import fixture_eg32, fixture_triangle, gen_random_cover
from nervemp.cover import (
    Graph,
    SubgraphCover,
    build_nerve,
    compute_partitions,
    direct_tree,
    held_variables,
    partition_variables,
    spanning_tree,
)
from nervemp.errors import DisconnectedNerve, InvalidInstance


class TestGraphValidation:
    def test_rejects_self_loop(self):
        with pytest.raises(InvalidInstance):
            Graph(3, [(0, 0)])

    def test_rejects_undeclared_endpoint(self):
        with pytest.raises(InvalidInstance):
            Graph(2, [(0, 5)])

    def test_normalizes_edges(self):
        g = Graph(3, [(2, 0), (0, 2), (1, 2)])
        assert g.edges == ((0, 2), (1, 2))


class TestCoverValidation:
    def test_requires_full_coverage(self):
        g = Graph(3, [(0, 1)])
        with pytest.raises(InvalidInstance, match="not covered"):
            SubgraphCover(g, [(0, 1)], [()])

    def test_observables_must_be_subgraph_nodes(self):
        g = Graph(3, [(0, 1), (1, 2)])
        with pytest.raises(InvalidInstance, match="not a node of subgraph"):
            SubgraphCover(g, [(0, 1), (1, 2)], [(2,), ()])

    def test_observables_must_be_exclusive(self):
        g = Graph(3, [(0, 1), (1, 2)])
        with pytest.raises(InvalidInstance, match="also lies in subgraph"):
            SubgraphCover(g, [(0, 1), (1, 2)], [(1,), ()])

    def test_empty_observable_sets_are_allowed(self):
        g = Graph(2, [(0, 1)])
        cover = SubgraphCover(g, [(0, 1)], [()])
        assert cover.s_order == ()


class TestBuildNerve:
    def test_three_pairwise_overlaps_give_complete_graph(self):
        cover = fixture_triangle().cover
        nerve = build_nerve(cover)
        assert nerve.edges == ((0, 1), (0, 2), (1, 2))

    def test_single_subgraph(self):
        g = Graph(2, [(0, 1)])
        cover = SubgraphCover(g, [(0, 1)], [(0,)])
        nerve = build_nerve(cover)
        assert nerve.t == 1 and nerve.edges == ()

    def test_matches_bruteforce_intersection_oracle(self):
        cover = gen_random_cover(8, seed=123)
        nerve = build_nerve(cover)
        expected = set()
        for i in range(8):
            for j in range(i + 1, 8):
                if any(v in cover.node_set(j) for v in cover.subgraphs[i]):
                    expected.add((i, j))
        assert set(nerve.edges) == expected

    def test_relabeling_symmetry(self):
        cover = gen_random_cover(5, seed=9)
        nerve = build_nerve(cover)
        perm = [3, 0, 4, 1, 2]  # new index of each old subgraph
        cover2 = SubgraphCover(
            cover.graph,
            [cover.subgraphs[perm.index(i)] for i in range(5)],
            [cover.observables[perm.index(i)] for i in range(5)],
        )
        nerve2 = build_nerve(cover2)
        mapped = {tuple(sorted((perm[i], perm[j]))) for i, j in nerve.edges}
        assert set(nerve2.edges) == mapped


class TestSpanningTree:
    def test_complete_graph_leaves_one_complement_edge(self):
        cover = fixture_triangle().cover
        nerve = build_nerve(cover)
        t1 = spanning_tree(nerve, "bfs", cover)
        t2 = spanning_tree(nerve, "random", cover, seed=0)
        for t in (t1, t2):
            assert len(t.edges) == 2 and len(t.complement) == 1
        assert t1.edges != t2.edges or t1.complement != t2.complement

    def test_single_node(self):
        g = Graph(1, [])
        cover = SubgraphCover(g, [(0,)], [(0,)])
        tree = spanning_tree(build_nerve(cover), "bfs", cover)
        assert tree.edges == () and tree.complement == ()

    def test_edge_count_on_random_nerve(self):
        cover = gen_random_cover(12, seed=5, extra_edge_prob=0.4)
        nerve = build_nerve(cover)
        for strategy, kw in (("bfs", {}), ("random", {"seed": 2}), ("max_overlap", {})):
            tree = spanning_tree(nerve, strategy, cover, **kw)
            assert len(tree.edges) == 11
            assert len(tree.complement) == len(nerve.edges) - 11

    def test_max_overlap_prefers_heavier_edges(self):
        # two candidate edges; the heavier overlap must be kept
        g = Graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
        cover = SubgraphCover(
            g, [(0, 1, 2), (1, 2, 3), (2, 3, 4, 5)], [(0,), (), (5,)]
        )
        nerve = build_nerve(cover)
        assert set(nerve.edges) == {(0, 1), (0, 2), (1, 2)}
        tree = spanning_tree(nerve, "max_overlap", cover)
        # |V0 & V1| = 2, |V1 & V2| = 2, |V0 & V2| = 1 -> drop (0, 2)
        assert set(tree.edges) == {(0, 1), (1, 2)}
        assert tree.complement == ((0, 2),)

    def test_disconnected_nerve(self):
        g = Graph(4, [(0, 1), (2, 3)])
        cover = SubgraphCover(g, [(0, 1), (2, 3)], [(0,), (2,)])
        with pytest.raises(DisconnectedNerve):
            spanning_tree(build_nerve(cover), "bfs", cover)

    def test_random_requires_seed(self):
        cover = fixture_triangle().cover
        with pytest.raises(ValueError):
            spanning_tree(build_nerve(cover), "random", cover)


class TestDirectTree:
    def test_path_rooted_at_end(self):
        cover = gen_random_cover(3, seed=1, extra_edge_prob=0.0)
        nerve = build_nerve(cover)
        stree = spanning_tree(nerve, "bfs", cover)
        dt = direct_tree(stree, 2)
        for tail, head in dt.edges:
            assert dt.parent[tail] == head
        # walking parents from any node reaches the root
        for node in dt.nodes:
            seen = set()
            while node != 2:
                assert node not in seen
                seen.add(node)
                node = dt.parent[node]

    def test_triangle_chain_orientation(self):
        # the chain tree 1 - 2 - 0 rooted at 0 orients as 1 -> 2 -> 0
        from nervemp.cover import SpanningTree

        t2 = SpanningTree(nodes=(0, 1, 2), edges=((1, 2), (0, 2)), complement=((0, 1),))
        dt = direct_tree(t2, 0)
        assert set(dt.edges) == {(1, 2), (2, 0)}

    def test_root_has_out_degree_zero(self):
        cover = gen_random_cover(7, seed=3)
        stree = spanning_tree(build_nerve(cover), "bfs", cover)
        for root in range(7):
            dt = direct_tree(stree, root)
            tails = [t for t, _ in dt.edges]
            assert root not in tails
            assert len(dt.edges) == 6


class TestPartitions:
    def test_pinned_two_subgraph_edge(self):
        inst = fixture_eg32()
        stree = spanning_tree(build_nerve(inst.cover), "bfs", inst.cover)
        dt = direct_tree(stree, 1)
        part = partition_variables(inst.cover, dt, (0, 1))
        assert part.s_vars == (0, 1)
        assert part.x_vars == (3,)
        assert part.y_vars == (2,)
        assert part.z_vars == ()

    def test_leaf_with_empty_complement(self):
        cover = gen_random_cover(4, seed=8, extra_edge_prob=0.0)
        stree = spanning_tree(build_nerve(cover), "bfs", cover)
        assert stree.complement == ()
        dt = direct_tree(stree, 0)
        leaf = [i for i in dt.nodes if not dt.children[i] and i != 0][0]
        part = partition_variables(cover, dt, (leaf, dt.parent[leaf]))
        expected_x = sorted(cover.node_set(leaf) & cover.node_set(dt.parent[leaf]))
        assert list(part.x_vars) == expected_x

    def test_triangle_z_variable_rides_one_hop(self):
        """On the chain tree, the shared node of the two lower clusters is
        eliminated at the middle node, while the rider from the far cluster
        survives as a z-variable."""
        cover = fixture_triangle().cover
        from nervemp.cover import SpanningTree

        # chain 1 - 2 - 0 rooted at 0; complement edge (0, 1)
        t2 = SpanningTree(nodes=(0, 1, 2), edges=((1, 2), (0, 2)), complement=((0, 1),))
        dt = direct_tree(t2, 0)
        # nodes: cluster 0 = {0,1,6,7}, cluster 1 = {2,3,6,8}, cluster 2 = {4,5,7,8}
        p12 = partition_variables(cover, dt, (1, 2))
        assert p12.x_vars == (6, 8)  # shared with root cluster and tree head
        assert p12.y_vars == (3,)
        p20 = partition_variables(cover, dt, (2, 0))
        assert p20.x_vars == (7,)
        assert 8 in p20.y_vars  # shared by the two lower clusters only
        assert p20.z_vars == (6,)  # rider owned by the complement edge

    def test_four_way_split_properties(self):
        for seed in range(6):
            cover = gen_random_cover(6, seed=seed, extra_edge_prob=0.35)
            stree = spanning_tree(build_nerve(cover), "bfs", cover)
            for root in (0, 3):
                dt = direct_tree(stree, root)
                parts = compute_partitions(cover, dt)
                for (i, j), part in parts.items():
                    groups = [part.s_vars, part.x_vars, part.y_vars, part.z_vars]
                    flat = [v for g in groups for v in g]
                    assert len(flat) == len(set(flat))  # pairwise disjoint
                    assert set(flat) == set(held_variables(cover, dt, i))
                    assert set(part.x_vars) <= cover.node_set(i)
                    subtree_union = set()
                    for n in dt.subtree_nodes(i):
                        subtree_union |= cover.node_set(n)
                    assert set(part.y_vars) <= subtree_union

    def test_each_variable_eliminated_at_most_once(self):
        for seed in range(6):
            cover = gen_random_cover(6, seed=100 + seed, extra_edge_prob=0.35)
            stree = spanning_tree(build_nerve(cover), "bfs", cover)
            for root in range(cover.t):
                dt = direct_tree(stree, root)
                parts = compute_partitions(cover, dt)
                seen = []
                for part in parts.values():
                    seen.extend(part.y_vars)
                assert len(seen) == len(set(seen))

    def test_unknown_edge_rejected(self):
        cover = fixture_triangle().cover
        stree = spanning_tree(build_nerve(cover), "bfs", cover)
        dt = direct_tree(stree, 0)
        with pytest.raises(ValueError):
            partition_variables(cover, dt, (5, 6))
