"""Class-level output embeddings, sibling rankings, and pair similarity targets.

Each class y carries an embedding row psi(y); unit-normalized rows psi_bar
give pairwise class similarities in [-1, 1]. Sorting classes by embedding
distance yields a per-class ranking whose leading entries are the "sibling"
classes. Training targets o_ij are derived from that structure in one of four
modes:

* ``embedding``      raw similarity psi_bar(y_i) . psi_bar(y_j)
* ``fixed_theta``    1 same class, theta for siblings, -1 otherwise
* ``learned_theta``  like fixed_theta, but theta is re-estimated during training
* ``ksh_binary``     1 same class, -1 otherwise (no sibling level)

Pair categories are directional for evaluation (the query side decides) but
symmetrized for training targets: a pair counts as sibling if either class
ranks the other inside the window.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import squareform, pdist

SAME = "same"
SIBLING = "sibling"
UNRELATED = "unrelated"

MODES = ("embedding", "fixed_theta", "learned_theta", "ksh_binary")


def normalize_rows(matrix):
    """Scale each row to unit Euclidean norm; rejects zero rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if (norms < 1e-15).any():
        bad = int(np.nonzero(norms < 1e-15)[0][0])
        raise ValueError(f"embedding row {bad} has zero norm, cannot normalize")
    return matrix / norms[:, None]


class OutputEmbeddingTable:
    """L x e class embeddings plus a unit-normalized variant.

    ``center_columns=True`` removes the column mean before normalization
    (the usual treatment of real-valued attribute embeddings). The ranking
    and raw similarities use the centered matrix.
    """

    def __init__(self, raw, center_columns=False):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] < 1:
            raise ValueError("embeddings must be a non-empty 2-D matrix")
        if not np.isfinite(raw).all():
            raise ValueError("embeddings contain non-finite entries")
        if center_columns:
            raw = raw - raw.mean(axis=0)
        self.raw = raw
        self.normalized = normalize_rows(raw)
        self.n_classes = raw.shape[0]
        self.embed_dim = raw.shape[1]

    def similarity(self, y_i, y_j):
        """Dot product of unit-normalized embeddings, in [-1, 1]."""
        s = float(self.normalized[y_i] @ self.normalized[y_j])
        return min(1.0, max(-1.0, s))

    def similarity_matrix(self):
        sim = self.normalized @ self.normalized.T
        return np.clip(sim, -1.0, 1.0)


class SiblingRanking:
    """rank[y][y*] = position of class y* in y's ascending-distance ordering.

    Each row is a permutation of 0..L-1 with the class itself at rank 0; ties
    are broken by ascending class id.
    """

    def __init__(self, rank):
        rank = np.asarray(rank, dtype=np.int64)
        L = rank.shape[0]
        if rank.shape != (L, L):
            raise ValueError("rank must be a square matrix")
        if (np.diag(rank) != 0).any():
            raise ValueError("rank[y][y] must be 0")
        expected = np.arange(L)
        if not all((np.sort(row) == expected).all() for row in rank):
            raise ValueError("each rank row must be a permutation of 0..L-1")
        self.rank = rank
        self.n_classes = L

    def __getitem__(self, pair):
        y_i, y_j = pair
        return int(self.rank[y_i, y_j])


def build_sibling_ranking(table):
    """Rank classes for each query class by ascending embedding distance.

    Self is forced to rank 0; ties resolve to the lower class id.
    """
    L = table.n_classes
    if L < 2:
        raise ValueError("need at least 2 classes to rank")
    dist = squareform(pdist(table.raw, "euclidean"))
    np.fill_diagonal(dist, -1.0)  # self strictly first
    rank = np.empty((L, L), dtype=np.int64)
    ids = np.arange(L)
    for y in range(L):
        order = np.lexsort((ids, dist[y]))
        rank[y, order] = ids
    return SiblingRanking(rank)


@dataclass
class PairTargetSpec:
    """How per-pair targets o_ij and categories are produced.

    ``m`` counts the window including the class itself, so the sibling ranks
    are 1..m-1 (m=6 keeps 5 sibling classes). ``theta`` is the fixed sibling
    similarity for ``fixed_theta``; ``theta0``/``lam`` seed and regularize the
    learned variant.
    """

    mode: str
    m: int = 6
    theta: float | None = None
    theta0: float = -0.5
    lam: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mode == "fixed_theta":
            if self.theta is None:
                raise ValueError("fixed_theta mode needs an explicit theta")
            if not -1.0 <= self.theta <= 1.0:
                raise ValueError("theta must lie in [-1, 1]")
        if self.mode == "learned_theta":
            if not -1.0 < self.theta0 < 0.0:
                raise ValueError("theta0 must lie in (-1, 0)")
            if self.lam < 0:
                raise ValueError("lam must be >= 0")


def sibling_class_matrix(ranking, m):
    """Symmetrized L x L boolean matrix of sibling class pairs.

    True where either direction ranks the other within 1..m-1; diagonal is
    False (same class is its own category).
    """
    within = (ranking.rank >= 1) & (ranking.rank <= m - 1)
    sib = within | within.T
    np.fill_diagonal(sib, False)
    return sib


def pair_category(y_i, y_j, ranking, m, symmetric=True):
    """Category of a class pair: same / sibling / unrelated.

    Directional (``symmetric=False``) categorization asks only whether y_j is
    ranked inside y_i's window, which is what evaluation-side weights use.
    """
    if y_i == y_j:
        return SAME
    r_ij = ranking.rank[y_i, y_j]
    hit = 1 <= r_ij <= m - 1
    if symmetric:
        r_ji = ranking.rank[y_j, y_i]
        hit = hit or (1 <= r_ji <= m - 1)
    return SIBLING if hit else UNRELATED


def pair_target(spec, y_i, y_j, ranking, table, theta_current=None):
    """Target similarity o_ij in [-1, 1] and the (symmetrized) pair category."""
    category = pair_category(y_i, y_j, ranking, spec.m, symmetric=True)
    if spec.mode == "embedding":
        return table.similarity(y_i, y_j), category
    if category == SAME:
        return 1.0, category
    if spec.mode == "ksh_binary":
        return -1.0, category
    if category == SIBLING:
        if spec.mode == "fixed_theta":
            return float(spec.theta), category
        theta = spec.theta0 if theta_current is None else theta_current
        if not -1.0 <= theta <= 1.0:
            raise ValueError("theta_current must lie in [-1, 1]")
        return float(theta), category
    return -1.0, category


def class_target_matrix(spec, ranking, table, theta_current=None):
    """L x L matrix of pair targets under ``spec``.

    For embedding mode this is the full similarity matrix; otherwise entries
    are 1 / theta / -1 by symmetrized category.
    """
    if spec.mode == "embedding":
        return table.similarity_matrix()
    L = ranking.n_classes
    out = np.full((L, L), -1.0)
    if spec.mode != "ksh_binary":
        if spec.mode == "fixed_theta":
            theta = float(spec.theta)
        else:
            theta = float(spec.theta0 if theta_current is None else theta_current)
        out[sibling_class_matrix(ranking, spec.m)] = theta
    np.fill_diagonal(out, 1.0)
    return out


def build_taxonomy_embeddings(parents, leaf_classes):
    """Ancestor-indicator embeddings from a parent-pointer forest.

    ``parents[node] = parent id`` with -1 marking roots. Row i gets a 1 in
    column j iff node j is an ancestor of (or equal to) class i's node. Rows
    are unit-normalized; a class node counts as its own ancestor.
    """
    parents = np.asarray(parents, dtype=np.int64)
    n_nodes = parents.size
    if ((parents < -1) | (parents >= n_nodes)).any():
        raise ValueError("parent ids must be -1 or valid node ids")
    leaf_classes = np.asarray(leaf_classes, dtype=np.int64)
    if ((leaf_classes < 0) | (leaf_classes >= n_nodes)).any():
        bad = int(leaf_classes[(leaf_classes < 0) | (leaf_classes >= n_nodes)][0])
        raise ValueError(f"unknown leaf node id {bad}")
    raw = np.zeros((leaf_classes.size, n_nodes), dtype=np.float64)
    for i, leaf in enumerate(leaf_classes):
        node = int(leaf)
        steps = 0
        while node != -1:
            raw[i, node] = 1.0
            node = int(parents[node])
            steps += 1
            if steps > n_nodes:
                raise ValueError(f"cycle detected in hierarchy at node {leaf}")
    return OutputEmbeddingTable(raw)


def per_item_embeddings(table, labels):
    """Row-aligned item embeddings: the class embedding of each item's label."""
    labels = np.asarray(labels, dtype=np.int64)
    if ((labels < 0) | (labels >= table.n_classes)).any():
        raise ValueError("label outside [0, n_classes)")
    return table.raw[labels]


def one_hot(labels, n_classes):
    """One-vs-rest indicator embeddings, one row per item."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out
