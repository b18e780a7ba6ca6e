import itertools

import numpy as np
import pytest

from protoform import phylo as P
from protoform.engine.rng import DetRng


class TestCosine:
    def test_identical_vectors(self):
        m = P.cosine_distance_matrix({"A": [1.0, 2.0], "B": [2.0, 4.0]})
        assert m.d[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        m = P.cosine_distance_matrix({"A": [1.0, 0.0], "B": [0.0, 3.0]})
        assert m.d[0, 1] == pytest.approx(1.0)

    def test_antiparallel(self):
        m = P.cosine_distance_matrix({"A": [1.0, 1.0], "B": [-2.0, -2.0]})
        assert m.d[0, 1] == pytest.approx(2.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(P.PhyloError, match="zero"):
            P.cosine_distance_matrix({"A": [0.0, 0.0], "B": [1.0, 0.0]})

    def test_symmetry_zero_diagonal(self):
        rng = DetRng(4)
        embs = {f"L{i}": [rng.uniform() - 0.5 for _ in range(8)] for i in range(6)}
        m = P.cosine_distance_matrix(embs)
        np.testing.assert_allclose(m.d, m.d.T)
        assert np.all(np.diag(m.d) == 0)


def matrix(labels, entries):
    n = len(labels)
    d = np.zeros((n, n))
    for (i, j), v in entries.items():
        d[i, j] = d[j, i] = v
    return P.DistanceMatrix(labels, d)


class TestWard:
    def test_two_leaves(self):
        t = P.ward_cluster(matrix(["A", "B"], {(0, 1): 3.5}))
        assert sorted(t.leaf_names()) == ["A", "B"]
        assert t.height == 3.5

    def test_three_point_hand_computation(self):
        # d(A,B)=2, d(A,C)=6, d(B,C)=5: merge (A,B) at 2, then
        # d(AB,C) = sqrt((2*36 + 2*25 - 1*4)/3) = sqrt(118/3)
        t = P.ward_cluster(matrix(["A", "B", "C"], {(0, 1): 2.0, (0, 2): 6.0, (1, 2): 5.0}))
        assert t.height == pytest.approx(np.sqrt(118.0 / 3.0), abs=1e-12)
        inner = [c for c in t.children if not c.is_leaf()][0]
        assert sorted(inner.leaf_names()) == ["A", "B"]
        assert inner.height == pytest.approx(2.0, abs=1e-12)

    def test_tie_breaks_to_smallest_label_pair(self):
        t = P.ward_cluster(matrix(["C", "A", "B"], {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0}))
        first = [c for c in t.children if not c.is_leaf()][0]
        assert sorted(first.leaf_names()) == ["A", "B"]

    def test_heights_nondecreasing_on_random_matrices(self):
        rng = DetRng(17)
        for _ in range(25):
            n = 4 + rng.randint(4)
            d = np.zeros((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    d[i, j] = d[j, i] = 0.1 + rng.uniform()
            t = P.ward_cluster(P.DistanceMatrix([f"L{k}" for k in range(n)], d))

            def check(node):
                for c in node.children:
                    if not c.is_leaf():
                        assert c.height <= node.height + 1e-12
                        check(c)
            check(t)

    def test_permutation_equivariance(self):
        rng = DetRng(23)
        n = 5
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = 0.5 + rng.uniform()
        labels = [f"L{k}" for k in range(n)]
        t1 = P.ward_cluster(P.DistanceMatrix(labels, d))
        perm = [3, 0, 4, 1, 2]
        d2 = d[np.ix_(perm, perm)]
        t2 = P.ward_cluster(P.DistanceMatrix([labels[p] for p in perm], d2))
        assert P.topologies_equal(t1, t2)

    def test_asymmetric_rejected(self):
        d = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(P.PhyloError, match="symmetric"):
            P.ward_cluster(P.DistanceMatrix(["A", "B"], d))


class TestConsensus:
    def test_ten_copies_reproduce_topology(self):
        t = P.parse_newick("((A,B),(C,(D,E)));")
        got = P.consensus([P.parse_newick("((A,B),(C,(D,E)));") for _ in range(10)])
        assert P.topologies_equal(got, t)

    def test_two_thirds_clade_retained(self):
        trees = [P.parse_newick("((A,B),C);"),
                 P.parse_newick("((A,B),C);"),
                 P.parse_newick("((A,C),B);")]
        got = P.consensus(trees)
        assert P.topologies_equal(got, P.parse_newick("((A,B),C);"))

    def test_no_majority_gives_star(self):
        trees = [P.parse_newick("((A,B),(C,D));"),
                 P.parse_newick("((A,C),(B,D));"),
                 P.parse_newick("((A,D),(B,C));")]
        got = P.consensus(trees)
        assert got.is_leaf() is False
        assert all(c.is_leaf() for c in got.children)
        assert sorted(got.leaf_names()) == ["A", "B", "C", "D"]

    def test_leaf_set_mismatch_rejected(self):
        with pytest.raises(P.PhyloError, match="leaf set"):
            P.consensus([P.parse_newick("(A,B);"), P.parse_newick("(A,C);")])

    def test_kept_clades_are_nested_or_disjoint(self):
        rng = DetRng(5)
        leaves = [f"L{i}" for i in range(6)]

        def random_tree():
            def build(names):
                if len(names) == 1:
                    return P.TreeNode(name=names[0])
                k = 1 + rng.randint(len(names) - 1)
                return P.TreeNode(children=[build(names[:k]), build(names[k:])])
            order = list(leaves)
            rng.shuffle(order)
            return build(order)

        for _ in range(10):
            trees = [random_tree() for _ in range(5)]
            got = P.consensus(trees)
            clades = sorted(P._clades(got), key=len)
            for a, b in itertools.combinations(clades, 2):
                assert a <= b or b <= a or not (a & b)


def path_disjoint_topology(tree, a, b, c, d):
    """Oracle: pairing xy|zw holds iff the x-y and z-w paths share no node."""
    parent, order = {}, []

    def walk(node):
        order.append(node)
        for ch in node.children:
            parent[id(ch)] = node
            walk(ch)

    walk(tree)
    by_name = {n.name: n for n in tree.leaves()}

    def path_nodes(x, y):
        anc = set()
        n = by_name[x]
        while True:
            anc.add(id(n))
            if id(n) not in parent:
                break
            n = parent[id(n)]
        path = set()
        n = by_name[y]
        while id(n) not in anc:
            path.add(id(n))
            n = parent[id(n)]
        meet = n
        path.add(id(meet))
        n = by_name[x]
        while id(n) != id(meet):
            path.add(id(n))
            n = parent[id(n)]
        return path

    for x, y, z, w in ((a, b, c, d), (a, c, b, d), (a, d, b, c)):
        if not (path_nodes(x, y) & path_nodes(z, w)):
            return frozenset((frozenset((x, y)), frozenset((z, w))))
    return None


def all_five_leaf_binary_trees(leaves):
    """All 15 labeled unrooted binary topologies on five leaves, as
    trifurcating-rooted Newick trees ((p1,p2),middle,(p3,p4))."""
    out = []
    for middle in leaves:
        rest = [l for l in leaves if l != middle]
        a = rest[0]
        for partner in rest[1:]:
            pair1 = (a, partner)
            pair2 = tuple(l for l in rest[1:] if l != partner)
            out.append(P.parse_newick(f"(({pair1[0]},{pair1[1]}),{middle},({pair2[0]},{pair2[1]}));"))
    return out


def brute_force_gqd(gold, test):
    leaves = sorted(gold.leaf_names())
    resolved = differing = 0
    for q in itertools.combinations(leaves, 4):
        tg = path_disjoint_topology(gold, *q)
        if tg is None:
            continue
        resolved += 1
        if path_disjoint_topology(test, *q) != tg:
            differing += 1
    return differing / resolved


class TestGQD:
    def test_identity_zero(self):
        t = P.parse_newick("((A,B),(C,(D,E)));")
        assert P.gqd(t, P.parse_newick("((A,B),(C,(D,E)));")) == 0.0

    def test_all_fifteen_topologies_vs_brute_force(self):
        leaves = ["A", "B", "C", "D", "E"]
        gold = P.parse_newick("((A,B),C,(D,E));")
        trees = all_five_leaf_binary_trees(leaves)
        assert len(trees) == 15
        for t in trees:
            assert P.gqd(gold, t) == pytest.approx(brute_force_gqd(gold, t), abs=1e-12)

    def test_one_swapped_cherry(self):
        gold = P.parse_newick("((A,B),C,(D,E));")
        test = P.parse_newick("((A,C),B,(D,E));")
        assert P.gqd(gold, test) == pytest.approx(brute_force_gqd(gold, test), abs=1e-12)

    def test_reroot_invariance(self):
        gold = P.parse_newick("((A,B),C,(D,E));")
        t1 = P.parse_newick("((A,B),(C,(D,E)));")
        t2 = P.parse_newick("(A,(B,(C,(D,E))));")
        t3 = P.parse_newick("(((A,B),C),(D,E));")
        vals = {P.gqd(gold, t) for t in (t1, t2, t3)}
        assert len(vals) == 1

    def test_symmetric_for_resolved_trees(self):
        t1 = P.parse_newick("((A,B),(C,(D,E)));")
        t2 = P.parse_newick("((A,C),(B,(D,E)));")
        assert P.gqd(t1, t2) == P.gqd(t2, t1)

    def test_unresolved_test_counts_as_difference(self):
        gold = P.parse_newick("((A,B),(C,D));")
        star = P.parse_newick("(A,B,C,D);")
        assert P.gqd(gold, star) == 1.0

    def test_star_gold_rejected(self):
        with pytest.raises(P.PhyloError, match="resolves no quartets"):
            P.gqd(P.parse_newick("(A,B,C,D);"), P.parse_newick("((A,B),(C,D));"))

    def test_leaf_mismatch_rejected(self):
        with pytest.raises(P.PhyloError):
            P.gqd(P.parse_newick("((A,B),(C,D));"), P.parse_newick("((A,B),(C,E));"))


class TestNewick:
    def test_two_leaf_round_trip(self):
        t = P.parse_newick("(A,B);")
        assert sorted(t.leaf_names()) == ["A", "B"]
        assert P.serialize_newick(t) == "(A,B);"

    def test_trifurcating_root(self):
        t = P.parse_newick("((A,B),(C,D),E);")
        assert len(t.children) == 3

    def test_round_trip_random_trees(self):
        rng = DetRng(12)

        def build(names):
            if len(names) == 1:
                return P.TreeNode(name=names[0])
            k = 1 + rng.randint(len(names) - 1)
            return P.TreeNode(children=[build(names[:k]), build(names[k:])])

        for trial in range(25):
            names = [f"L{i}" for i in range(2 + rng.randint(7))]
            t = build(names)
            back = P.parse_newick(P.serialize_newick(t))
            assert P.topologies_equal(t, back)

    def test_heights_serialize_as_branch_lengths(self):
        t = P.ward_cluster(matrix(["A", "B"], {(0, 1): 2.0}))
        assert P.serialize_newick(t) == "(A:2,B:2);"

    def test_unbalanced_parens_report_position(self):
        with pytest.raises(P.PhyloError, match="position"):
            P.parse_newick("((A,B;")

    def test_duplicate_labels_rejected(self):
        with pytest.raises(P.PhyloError, match="duplicate"):
            P.parse_newick("((A,A),B);")

    def test_branch_lengths_parsed(self):
        t = P.parse_newick("(A:0.5,B:1.25);")
        lengths = sorted(c.length for c in t.children)
        assert lengths == [0.5, 1.25]
