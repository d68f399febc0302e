"""Dimension partition tree construction, queries, swaps and storage counts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treedens.dimension_tree import (
    DimensionTree,
    TreeError,
    build_balanced_tree,
    build_linear_tree,
    check_ranks_admissible,
    random_binary_tree,
    storage_complexity,
    swap_nodes,
    swap_nodes_with_map,
    uniform_ranks,
)


def subsets_of(tree):
    return sorted(tree.subset(i) for i in range(len(tree)))


class TestBuilders:
    def test_linear_d3(self):
        tree = build_linear_tree(3, (1, 2, 3))
        assert subsets_of(tree) == [(1,), (1, 2), (1, 2, 3), (2,), (3,)]

    def test_linear_d8_fifteen_nodes(self):
        tree = build_linear_tree(8)
        assert len(tree) == 15
        assert tree.depth() == 7
        # interior nodes are the prefixes {1..k}
        for k in range(2, 9):
            assert tree.find_subset(range(1, k + 1)) is not None

    def test_linear_d2(self):
        tree = build_linear_tree(2, (2, 1))
        assert len(tree) == 3
        assert tree.is_leaf(1) and tree.is_leaf(2)

    def test_linear_rejects_bad_permutation(self):
        with pytest.raises(TreeError):
            build_linear_tree(3, (1, 1, 2))

    def test_balanced_d4(self):
        tree = build_balanced_tree(4)
        assert tree.find_subset([1, 2]) is not None
        assert tree.find_subset([3, 4]) is not None

    def test_balanced_d8_depth3(self):
        tree = build_balanced_tree(8)
        assert len(tree) == 15
        assert tree.depth() == 3

    def test_balanced_d3_ceil_split(self):
        tree = build_balanced_tree(3)
        kids = [tree.subset(c) for c in tree.children(tree.root)]
        assert sorted(kids) == [(1, 2), (3,)]

    def test_random_d2_unique(self):
        tree = random_binary_tree(2, np.random.default_rng(0))
        assert subsets_of(tree) == [(1,), (1, 2), (2,)]

    def test_random_node_count_and_determinism(self):
        a = random_binary_tree(10, np.random.default_rng(42))
        b = random_binary_tree(10, np.random.default_rng(42))
        assert len(a) == 19
        assert a == b

    @given(st.integers(2, 12), st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_random_trees_always_validate(self, d, seed):
        tree = random_binary_tree(d, np.random.default_rng(seed))
        tree.validate()
        assert len(tree) == 2 * d - 1
        assert tree.is_binary()


class TestQueries:
    def setup_method(self):
        self.tree = build_linear_tree(8)

    def test_lca_of_deepest_leaves(self):
        a = self.tree.leaf_of_dim(1)
        b = self.tree.leaf_of_dim(2)
        assert self.tree.subset(self.tree.lca(a, b)) == (1, 2)

    def test_path_length_self(self):
        assert self.tree.path_length(3, 3) == 0

    def test_descendants_of_root(self):
        desc = self.tree.descendants(self.tree.root)
        assert sorted(desc) == list(range(1, len(self.tree)))

    def test_ascendants_end_at_root(self):
        leaf = self.tree.leaf_of_dim(1)
        asc = self.tree.ascendants(leaf)
        assert asc[-1] == self.tree.root
        assert len(asc) == self.tree.level(leaf)

    def test_leaves_and_internal_partition_nodes(self):
        ids = sorted(self.tree.leaves() + self.tree.internal())
        assert ids == list(range(len(self.tree)))

    def test_unknown_node_raises(self):
        with pytest.raises(TreeError):
            self.tree.subset(99)


class TestStorageComplexity:
    def test_rank_one_d2(self):
        tree = build_linear_tree(2)
        ranks = uniform_ranks(tree, 1)
        dims = {i: 5 for i in tree.leaves()}
        assert storage_complexity(tree, ranks, dims) == 11

    def test_monotone_in_ranks_and_dims(self):
        tree = build_balanced_tree(4)
        dims = {i: 5 for i in tree.leaves()}
        base = storage_complexity(tree, uniform_ranks(tree, 2), dims)
        ranks3 = uniform_ranks(tree, 3)
        assert storage_complexity(tree, ranks3, dims) > base
        dims_bigger = {i: 7 for i in tree.leaves()}
        assert storage_complexity(tree, uniform_ranks(tree, 2), dims_bigger) > base

    def test_missing_rank_entry(self):
        tree = build_linear_tree(3)
        ranks = uniform_ranks(tree, 1)
        del ranks[2]
        with pytest.raises(TreeError):
            storage_complexity(tree, ranks, {i: 4 for i in tree.leaves()})

    def test_admissibility(self):
        tree = build_linear_tree(3)
        dims = {i: 4 for i in tree.leaves()}
        bad = uniform_ranks(tree, 1)
        bad[tree.root] = 2
        with pytest.raises(TreeError):
            check_ranks_admissible(tree, bad, dims)
        bad = uniform_ranks(tree, 5)
        with pytest.raises(TreeError):
            check_ranks_admissible(tree, bad, dims)  # leaf rank 5 > 4


class TestSwapNodes:
    def test_chain_swap_creates_34(self):
        tree = build_linear_tree(8)
        t2 = swap_nodes(tree, tree.find_subset([1, 2]), tree.find_subset([4]))
        assert t2.find_subset([3, 4]) is not None
        t2.validate()

    def test_sibling_swap_is_isomorphic(self):
        tree = build_linear_tree(8)
        t2 = swap_nodes(tree, tree.leaf_of_dim(1), tree.leaf_of_dim(2))
        assert subsets_of(t2) == subsets_of(tree)

    def test_linear_to_balanced_sequence(self):
        # the documented four-swap route from the linear to the balanced tree
        tree = build_linear_tree(8)
        tree = swap_nodes(tree, tree.find_subset([1, 2]), tree.find_subset([4]))
        tree = swap_nodes(tree, tree.find_subset([1, 2, 3, 4]), tree.find_subset([6]))
        tree = swap_nodes(tree, tree.find_subset([1, 2, 3, 4]), tree.find_subset([8]))
        tree = swap_nodes(tree, tree.find_subset([5, 6]), tree.find_subset([7]))
        assert subsets_of(tree) == subsets_of(build_balanced_tree(8))

    def test_nested_nodes_rejected(self):
        tree = build_linear_tree(4)
        with pytest.raises(TreeError):
            swap_nodes(tree, tree.find_subset([1, 2]), tree.leaf_of_dim(1))

    def test_swap_involution_on_subset_family(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            tree = random_binary_tree(int(rng.integers(3, 9)), rng)
            pairs = [(i, j) for i in range(1, len(tree)) for j in range(1, len(tree))
                     if i != j and not (tree.subset_mask(i) & tree.subset_mask(j))]
            i, j = pairs[int(rng.integers(len(pairs)))]
            t2, fwd = swap_nodes_with_map(tree, i, j)
            t3 = swap_nodes(t2, fwd[i], fwd[j])
            assert subsets_of(t3) == subsets_of(tree)

    def test_map_preserves_offpath_subsets(self):
        tree = build_linear_tree(6)
        a, b = tree.find_subset([1, 2]), tree.leaf_of_dim(5)
        t2, fwd = swap_nodes_with_map(tree, a, b)
        for old in tree.descendants(a):
            assert t2.subset(fwd[old]) == tree.subset(old)


class TestSerialization:
    def test_round_trip(self):
        tree = random_binary_tree(7, np.random.default_rng(9))
        again = DimensionTree.from_json(tree.to_json())
        assert again == tree

    def test_json_shape(self):
        tree = build_linear_tree(2)
        doc = tree.to_json_dict()
        assert doc["root"] == 0
        assert doc["d"] == 2
        assert doc["nodes"][0]["subset"] == [1, 2]
