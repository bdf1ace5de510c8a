"""Agglomerative embedding tree with heterogeneity scores.

Clusters are merged greedily by cosine distance between cluster mean
embeddings.  ``build_tree`` is the heap-based production path;
``reference_build_tree`` recomputes the full distance matrix every round and
serves as the O(N^3) oracle.  Both derive cluster sums from member leaves in
sorted-id order, so their merge decisions are bitwise identical.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .embeddings import PromptSet
from .errors import DataError, UsageError
from .rng import TAG_RANDENC, stream

REFERENCE_MAX_N = 64


@dataclass
class TreeNode:
    node_id: int
    parent: int | None
    children: tuple[int, int] | None
    members: frozenset[str]
    embedding: np.ndarray = field(repr=False)  # float64 mean of member leaves
    raw_score: float
    score: float

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class EmbeddingTree:
    nodes: list[TreeNode]  # indexed by node_id; leaves first, merges after
    root: int
    leaf_of: dict[str, int]
    c_max: float
    inversion_count: int

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def depth(self) -> int:
        """Number of edges on the longest root-to-leaf path."""
        best = 0
        for leaf in self.leaf_of.values():
            best = max(best, len(path_to_root_ids(self, leaf)) - 1)
        return best


def path_to_root_ids(tree: EmbeddingTree, node_id: int) -> list[int]:
    path = [node_id]
    while tree.nodes[path[-1]].parent is not None:
        path.append(tree.nodes[path[-1]].parent)
    return path


def path_to_root(tree: EmbeddingTree, prompt_id: str) -> list[int]:
    """Node ids from the prompt's leaf up to the root (leaf first)."""
    if prompt_id not in tree.leaf_of:
        raise UsageError(f"unknown prompt id {prompt_id!r}")
    return path_to_root_ids(tree, tree.leaf_of[prompt_id])


def _cluster_mean(prompts: PromptSet, members: list[int]) -> np.ndarray:
    """Float64 mean of leaf embeddings, accumulated in sorted-id order.

    One summation path everywhere keeps the heap build and the reference
    build bitwise identical.  Clusters whose members are all bitwise equal
    return the member vector exactly, so duplicated prompt sets get
    exactly-zero merge distances.
    """
    order = sorted(members, key=lambda i: prompts.ids[i])
    rows = prompts.embeddings[order].astype(np.float64)
    if np.all(rows == rows[0]):
        return rows[0].copy()
    return np.sum(rows, axis=0) / rows.shape[0]


def _pair_distance(mean_a: np.ndarray, mean_b: np.ndarray) -> float:
    na = np.linalg.norm(mean_a)
    nb = np.linalg.norm(mean_b)
    if na == 0.0 or nb == 0.0:
        raise DataError("zero-norm cluster mean; cosine distance undefined")
    diff = mean_a / na - mean_b / nb
    return min(2.0, float(np.dot(diff, diff)) / 2.0)


def _tie_key(min_a: str, min_b: str) -> tuple[str, str]:
    # Deterministic order for equal distances: lexicographically smallest
    # (min member id, max member id) over the two clusters' representatives.
    return (min(min_a, min_b), max(min_a, min_b))


def _finalize(
    prompts: PromptSet,
    merges: list[tuple[int, int, float]],
) -> EmbeddingTree:
    """Assemble nodes from leaf order plus a merge sequence, then clamp scores."""
    n = len(prompts)
    nodes: list[TreeNode] = []
    for i, pid in enumerate(prompts.ids):
        nodes.append(
            TreeNode(
                node_id=i,
                parent=None,
                children=None,
                members=frozenset([pid]),
                embedding=prompts.embeddings[i].astype(np.float64),
                raw_score=0.0,
                score=0.0,
            )
        )
    member_idx: dict[int, list[int]] = {i: [i] for i in range(n)}
    for a, b, dist in merges:
        nid = len(nodes)
        idx = member_idx[a] + member_idx[b]
        member_idx[nid] = idx
        emb = _cluster_mean(prompts, idx)
        nodes.append(
            TreeNode(
                node_id=nid,
                parent=None,
                children=(a, b),
                members=nodes[a].members | nodes[b].members,
                embedding=emb,
                raw_score=dist,
                score=dist,
            )
        )
        nodes[a].parent = nid
        nodes[b].parent = nid
    root = len(nodes) - 1
    # Centroid linkage admits score inversions; clamp top-down so that
    # heterogeneity is monotone non-increasing toward the leaves, and count
    # how many nodes the clamp actually changed.
    inversions = 0
    order = [root]
    while order:
        nid = order.pop()
        node = nodes[nid]
        if node.parent is not None and node.raw_score > nodes[node.parent].score:
            node.score = nodes[node.parent].score
            if not node.is_leaf:
                inversions += 1
        if node.children is not None:
            order.extend(node.children)
    leaf_of = {pid: i for i, pid in enumerate(prompts.ids)}
    return EmbeddingTree(
        nodes=nodes,
        root=root,
        leaf_of=leaf_of,
        c_max=nodes[root].score,
        inversion_count=inversions,
    )


def build_tree(prompts: PromptSet) -> EmbeddingTree:
    """Agglomerative clustering over cosine distance of cluster means.

    Heap with lazy deletion: O(N^2 log N) in the number of prompts.
    """
    n = len(prompts)
    means = {i: _cluster_mean(prompts, [i]) for i in range(n)}
    minid = {i: prompts.ids[i] for i in range(n)}
    member_idx = {i: [i] for i in range(n)}
    alive = set(range(n))
    heap: list[tuple[float, tuple[str, str], int, int]] = []
    for ai in range(n):
        for bi in range(ai + 1, n):
            d = _pair_distance(means[ai], means[bi])
            heapq.heappush(heap, (d, _tie_key(minid[ai], minid[bi]), ai, bi))
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(alive) > 1:
        d, _, a, b = heapq.heappop(heap)
        if a not in alive or b not in alive:
            continue
        alive.discard(a)
        alive.discard(b)
        nid = next_id
        next_id += 1
        merges.append((a, b, d))
        member_idx[nid] = member_idx[a] + member_idx[b]
        means[nid] = _cluster_mean(prompts, member_idx[nid])
        minid[nid] = min(minid[a], minid[b])
        for other in alive:
            dn = _pair_distance(means[nid], means[other])
            heapq.heappush(heap, (dn, _tie_key(minid[nid], minid[other]), nid, other))
        alive.add(nid)
    return _finalize(prompts, merges)


def reference_build_tree(prompts: PromptSet) -> EmbeddingTree:
    """Brute-force oracle: full distance matrix recomputed every round."""
    n = len(prompts)
    if n > REFERENCE_MAX_N:
        raise UsageError(f"reference_build_tree is capped at N={REFERENCE_MAX_N}")
    member_idx = {i: [i] for i in range(n)}
    minid = {i: prompts.ids[i] for i in range(n)}
    alive = list(range(n))
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(alive) > 1:
        best = None
        for x in range(len(alive)):
            for y in range(x + 1, len(alive)):
                a, b = alive[x], alive[y]
                ma = _cluster_mean(prompts, member_idx[a])
                mb = _cluster_mean(prompts, member_idx[b])
                d = _pair_distance(ma, mb)
                cand = (d, _tie_key(minid[a], minid[b]), a, b)
                if best is None or cand < best:
                    best = cand
        d, _, a, b = best
        merges.append((a, b, d))
        member_idx[next_id] = member_idx[a] + member_idx[b]
        minid[next_id] = min(minid[a], minid[b])
        alive = [c for c in alive if c not in (a, b)] + [next_id]
        next_id += 1
    return _finalize(prompts, merges)


def structurally_equal(t1: EmbeddingTree, t2: EmbeddingTree, score_tol: float = 1e-9) -> bool:
    """True if the trees agree up to node renumbering."""
    if len(t1) != len(t2) or t1.leaf_of.keys() != t2.leaf_of.keys():
        return False
    s1 = {n.members: n.score for n in t1.nodes}
    s2 = {n.members: n.score for n in t2.nodes}
    if s1.keys() != s2.keys():
        return False
    return all(abs(s1[m] - s2[m]) <= score_tol for m in s1)


def randomize_encodings(prompts: PromptSet, seed: int) -> PromptSet:
    """Same ids, embeddings replaced by independent random unit vectors.

    Used to build the random-clustering ablation tree; leaf generation keeps
    using the true embeddings via shared membership.
    """
    d = prompts.dimension
    rows = np.empty((len(prompts), d), dtype=np.float64)
    for i in range(len(prompts)):
        v = stream(seed, TAG_RANDENC, i).standard_normal(d)
        rows[i] = v / np.linalg.norm(v)
    return PromptSet(prompts.ids, prompts.prompts, rows.astype(np.float32))


def reembed(tree: EmbeddingTree, prompts: PromptSet) -> EmbeddingTree:
    """Copy of the tree with node embeddings recomputed from ``prompts``.

    Structure and scores are preserved; used in ablation mode where selection
    runs on a random-encoding tree but generation conditions on real means.
    """
    if set(tree.leaf_of) != set(prompts.ids):
        raise UsageError("prompt ids do not match tree leaves")
    nodes = []
    for n in tree.nodes:
        idx = [prompts.index_of(pid) for pid in n.members]
        nodes.append(replace(n, embedding=_cluster_mean(prompts, idx)))
    return EmbeddingTree(nodes, tree.root, dict(tree.leaf_of), tree.c_max, tree.inversion_count)


def tree_to_json(tree: EmbeddingTree, extra: dict | None = None) -> str:
    doc = {
        "nodes": [
            {
                "id": n.node_id,
                "parent": n.parent,
                "children": list(n.children) if n.children else [],
                "members": sorted(n.members),
                "score": n.score,
                "raw_score": n.raw_score,
                "embedding": [float(v) for v in n.embedding],
            }
            for n in tree.nodes
        ],
        "root": tree.root,
        "c_max": tree.c_max,
        "inversion_count": tree.inversion_count,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1)


def tree_from_json(text: str) -> EmbeddingTree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed tree JSON: {e}") from e
    try:
        nodes = [None] * len(doc["nodes"])
        for rec in doc["nodes"]:
            node = TreeNode(
                node_id=int(rec["id"]),
                parent=rec["parent"],
                children=tuple(rec["children"]) if rec["children"] else None,
                members=frozenset(rec["members"]),
                embedding=np.asarray(rec["embedding"], dtype=np.float64),
                raw_score=float(rec["raw_score"]),
                score=float(rec["score"]),
            )
            nodes[node.node_id] = node
        leaf_of = {next(iter(n.members)): n.node_id for n in nodes if n.is_leaf}
        return EmbeddingTree(
            nodes=nodes,
            root=int(doc["root"]),
            leaf_of=leaf_of,
            c_max=float(doc["c_max"]),
            inversion_count=int(doc["inversion_count"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed tree JSON: {e}") from e
