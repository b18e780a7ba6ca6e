"""Phylogenetic probing of trained models.

Cosine distances between language embeddings feed Ward agglomerative
clustering; dendrograms from several runs are summarized by a
majority-rule consensus tree and compared against a gold phylogeny with
the Generalized Quartet Distance.  Trees serialize as Newick.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


class PhyloError(Exception):
    pass


@dataclass(frozen=True)
class DistanceMatrix:
    labels: list          # language names, fixed order
    d: np.ndarray         # symmetric, zero diagonal

    def __post_init__(self):
        n = len(self.labels)
        if self.d.shape != (n, n):
            raise PhyloError(f"distance matrix shape {self.d.shape} vs {n} labels")


def cosine_distance_matrix(embeddings: dict) -> DistanceMatrix:
    """1 - cosine similarity for every pair; keys may be LanguageId or str."""
    def label(k):
        return k.name if hasattr(k, "name") and isinstance(k.name, str) else k

    def order(k):
        idx = getattr(k, "index", None)
        return (0, idx, label(k)) if isinstance(idx, int) else (1, 0, label(k))

    keys = sorted(embeddings, key=order)
    vecs = []
    for k in keys:
        v = np.asarray(embeddings[k], dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise PhyloError(f"zero-norm embedding for {label(k)!r}")
        vecs.append(v / norm)
    n = len(vecs)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = 1.0 - float(np.dot(vecs[i], vecs[j]))
    return DistanceMatrix([label(k) for k in keys], d)


@dataclass
class TreeNode:
    name: str | None = None
    children: list = field(default_factory=list)
    height: float | None = None   # merge height for dendrogram internals
    length: float | None = None   # branch length (parsed or serialized)

    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list:
        if self.is_leaf():
            return [self]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def leaf_names(self) -> list:
        return [l.name for l in self.leaves()]


def ward_cluster(m: DistanceMatrix) -> TreeNode:
    """Agglomerative clustering with the Ward (Lance-Williams) update.

    At each step the minimum-distance pair merges, ties broken by the
    lexicographically smallest pair of cluster labels (a cluster's label
    is its smallest leaf name); the merge height is that distance.
    """
    n = len(m.labels)
    if n < 2:
        raise PhyloError("ward_cluster needs at least two languages")
    if not np.allclose(m.d, m.d.T, atol=1e-12) or np.any(np.diag(m.d) != 0):
        raise PhyloError("distance matrix must be symmetric with zero diagonal")

    nodes = {i: TreeNode(name=m.labels[i], height=0.0) for i in range(n)}
    sizes = {i: 1 for i in range(n)}
    labels = {i: m.labels[i] for i in range(n)}
    dist = {frozenset((i, j)): float(m.d[i, j]) for i in range(n) for j in range(i + 1, n)}
    next_id = n
    active = set(range(n))

    while len(active) > 1:
        best = None
        for i, j in combinations(sorted(active), 2):
            d = dist[frozenset((i, j))]
            pair_labels = tuple(sorted((labels[i], labels[j])))
            key = (d, pair_labels)
            if best is None or key < best[0]:
                best = (key, i, j)
        (d_min, _), i, j = best
        new = TreeNode(children=[nodes[i], nodes[j]], height=d_min)
        nodes[next_id] = new
        sizes[next_id] = sizes[i] + sizes[j]
        labels[next_id] = min(labels[i], labels[j])
        active -= {i, j}
        for k in active:
            dik = dist.pop(frozenset((i, k)))
            djk = dist.pop(frozenset((j, k)))
            dij = d_min
            ni, nj, nk = sizes[i], sizes[j], sizes[k]
            d2 = ((ni + nk) * dik ** 2 + (nj + nk) * djk ** 2 - nk * dij ** 2) / (ni + nj + nk)
            dist[frozenset((next_id, k))] = float(np.sqrt(max(d2, 0.0)))
        dist.pop(frozenset((i, j)))
        active.add(next_id)
        next_id += 1

    return nodes[next_id - 1]


def _clades(tree: TreeNode) -> set:
    """Leaf sets of all internal nodes below the root (the root's full set
    and the singletons are trivially present in every tree)."""
    out = set()

    def walk(node):
        names = frozenset(node.leaf_names())
        if not node.is_leaf():
            out.add(names)
            for c in node.children:
                walk(c)
        return names

    walk(tree)
    out.discard(frozenset(tree.leaf_names()))
    return out


def consensus(trees: list, threshold: float = 0.5) -> TreeNode:
    """Majority-rule consensus: keep exactly the clades occurring in more
    than `threshold` of the input trees (threshold >= 0.5 so the kept
    clades are pairwise compatible); heights are dropped."""
    if not trees:
        raise PhyloError("consensus needs at least one tree")
    if threshold < 0.5:
        raise PhyloError("consensus threshold below 0.5 can produce incompatible clades")
    leaf_set = frozenset(trees[0].leaf_names())
    counts: dict = {}
    for t in trees:
        if frozenset(t.leaf_names()) != leaf_set:
            raise PhyloError("consensus input trees must share one leaf set")
        for clade in _clades(t):
            counts[clade] = counts.get(clade, 0) + 1
    kept = [c for c, k in counts.items() if k / len(trees) > threshold]
    kept.sort(key=lambda c: (-len(c), sorted(c)))

    root = TreeNode(children=[TreeNode(name=n) for n in sorted(leaf_set)])
    nodes = {frozenset([n.name]): n for n in root.children}
    nodes[leaf_set] = root
    for clade in kept:
        parent = min((e for e in nodes if clade < e), key=len)
        pnode = nodes[parent]
        members = [n for n in pnode.children if set(n.leaf_names()) <= clade]
        for n in members:
            pnode.children.remove(n)
        fresh = TreeNode(children=members)
        pnode.children.append(fresh)
        pnode.children.sort(key=lambda n: min(n.leaf_names()))
        nodes[clade] = fresh
    return root


def _pairwise_path_lengths(tree: TreeNode) -> dict:
    """Edge-count distances between all leaf pairs (tree viewed as a graph)."""
    parent = {}
    depth = {}

    def walk(node, d):
        depth[id(node)] = d
        for c in node.children:
            parent[id(c)] = node
            walk(c, d + 1)

    walk(tree, 0)
    leaves = tree.leaves()
    dist = {}
    for a, b in combinations(leaves, 2):
        x, y = a, b
        while id(x) != id(y):
            if depth[id(x)] >= depth[id(y)]:
                x = parent[id(x)]
            else:
                y = parent[id(y)]
        d = depth[id(a)] + depth[id(b)] - 2 * depth[id(x)]
        dist[(a.name, b.name)] = d
        dist[(b.name, a.name)] = d
    return dist


def quartet_topology(dist: dict, a, b, c, d):
    """Which pairing the tree induces on {a,b,c,d}: a frozenset of two
    frozensets for a butterfly, or None when unresolved (star)."""
    s_ab = dist[(a, b)] + dist[(c, d)]
    s_ac = dist[(a, c)] + dist[(b, d)]
    s_ad = dist[(a, d)] + dist[(b, c)]
    smallest = min(s_ab, s_ac, s_ad)
    hits = [s == smallest for s in (s_ab, s_ac, s_ad)]
    if sum(hits) != 1:
        return None
    if hits[0]:
        return frozenset((frozenset((a, b)), frozenset((c, d))))
    if hits[1]:
        return frozenset((frozenset((a, c)), frozenset((b, d))))
    return frozenset((frozenset((a, d)), frozenset((b, c))))


def gqd(gold: TreeNode, test: TreeNode) -> float:
    """Generalized Quartet Distance.

    Both trees are treated as unrooted.  Over the quartets the gold tree
    resolves as butterflies, the fraction whose topology differs in the
    test tree (test-unresolved counts as differing).
    """
    gold_leaves = sorted(gold.leaf_names())
    if set(gold_leaves) != set(test.leaf_names()):
        raise PhyloError("gqd needs identical leaf sets")
    if len(gold_leaves) < 4:
        raise PhyloError("gqd needs at least four leaves")
    dg = _pairwise_path_lengths(gold)
    dt = _pairwise_path_lengths(test)
    resolved = 0
    differing = 0
    for a, b, c, d in combinations(gold_leaves, 4):
        tg = quartet_topology(dg, a, b, c, d)
        if tg is None:
            continue
        resolved += 1
        if quartet_topology(dt, a, b, c, d) != tg:
            differing += 1
    if resolved == 0:
        raise PhyloError("gold tree resolves no quartets")
    return differing / resolved


# ---------------------------------------------------------------------------
# Newick


def serialize_newick(tree: TreeNode) -> str:
    """Single line, semicolon-terminated; dendrogram heights become branch
    lengths (parent height minus child height)."""

    def fmt(x: float) -> str:
        return f"{x:.10g}"

    def walk(node, parent_height):
        if node.is_leaf():
            s = node.name or ""
            h = 0.0 if node.height is None else node.height
        else:
            s = "(" + ",".join(walk(c, node.height) for c in node.children) + ")"
            if node.name:
                s += node.name
            h = node.height
        if parent_height is not None and h is not None:
            s += ":" + fmt(parent_height - h)
        elif node.length is not None:
            s += ":" + fmt(node.length)
        return s

    return walk(tree, None) + ";"


def parse_newick(text: str) -> TreeNode:
    """Parse a Newick string; raises PhyloError with the offending position."""
    s = text.strip()
    if not s.endswith(";"):
        raise PhyloError(f"newick at position {len(s)}: missing terminating ';'")
    s = s[:-1]
    pos = 0

    def error(msg):
        raise PhyloError(f"newick at position {pos}: {msg}")

    def parse_name():
        nonlocal pos
        start = pos
        while pos < len(s) and s[pos] not in "(),:;":
            pos += 1
        return s[start:pos].strip()

    def parse_length(node):
        nonlocal pos
        if pos < len(s) and s[pos] == ":":
            pos += 1
            start = pos
            while pos < len(s) and s[pos] not in "(),;":
                pos += 1
            try:
                node.length = float(s[start:pos])
            except ValueError:
                error(f"bad branch length {s[start:pos]!r}")

    def parse_node():
        nonlocal pos
        node = TreeNode()
        if pos < len(s) and s[pos] == "(":
            pos += 1
            while True:
                node.children.append(parse_node())
                if pos >= len(s):
                    error("unbalanced parentheses")
                if s[pos] == ",":
                    pos += 1
                    continue
                if s[pos] == ")":
                    pos += 1
                    break
                error(f"unexpected character {s[pos]!r}")
            name = parse_name()
            node.name = name or None
        else:
            name = parse_name()
            if not name:
                error("empty leaf name")
            node.name = name
        parse_length(node)
        return node

    root = parse_node()
    if pos != len(s):
        error("trailing characters")
    names = root.leaf_names()
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise PhyloError(f"duplicate leaf labels: {sorted(dupes)}")
    return root


def load_newick(path: str) -> TreeNode:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read())


def write_newick(path: str, tree: TreeNode) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_newick(tree) + "\n")


def write_distance_csv(path: str, m: DistanceMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("language," + ",".join(m.labels) + "\n")
        for i, lab in enumerate(m.labels):
            fh.write(lab + "," + ",".join(f"{x:.12g}" for x in m.d[i]) + "\n")


def topologies_equal(a: TreeNode, b: TreeNode) -> bool:
    """Same rooted topology and labels (children order ignored)."""

    def canon(node):
        if node.is_leaf():
            return ("leaf", node.name)
        return ("node", tuple(sorted(canon(c) for c in node.children)))

    return canon(a) == canon(b)
