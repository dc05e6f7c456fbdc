"""Graph data model, the patched block adjacency, and its edit operations.

The patched adjacency is the block matrix [[A, C], [C^T, B]] where A is the
immutable sparse adjacency of the original graph and C (n x m), B (m x m)
are the dense, trainable border blocks for the m patch nodes. All
operations are pure: they return fresh objects and never write into A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, ValidationError

SPLIT_TRAIN = 0
SPLIT_TEST = 1
SPLIT_OTHER = 2
SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_TEST: "test", SPLIT_OTHER: "other"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


@dataclass
class Graph:
    """Undirected, unweighted node-classified graph.

    adjacency: symmetric binary csr matrix with zero diagonal
    features:  dense (n, d) float array
    labels:    (n,) class indices in [0, num_classes)
    split:     (n,) codes from SPLIT_TRAIN / SPLIT_TEST / SPLIT_OTHER
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: np.ndarray

    def __post_init__(self):
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise ValidationError(f"adjacency must be square, got {a.shape}")
        n = a.shape[0]
        if (abs(a - a.T)).nnz != 0:
            raise ValidationError("adjacency must be symmetric")
        if a.diagonal().any():
            raise ValidationError("adjacency must have a zero diagonal")
        if a.nnz and not np.isin(a.data, (0.0, 1.0)).all():
            raise ValidationError("adjacency must be binary")
        if self.features.shape[0] != n:
            raise ValidationError(
                f"features have {self.features.shape[0]} rows for {n} nodes"
            )
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ValidationError("labels and split must have one entry per node")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(
                f"labels must lie in [0, {self.num_classes})"
            )
        if not np.isin(self.split, list(SPLIT_NAMES)).all():
            raise ValidationError("split contains an unknown tag code")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def train_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_TRAIN)

    def test_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_TEST)

    def undirected_edge_count(self) -> int:
        return self.adjacency.nnz // 2


@dataclass
class PatchedAdjacency:
    """Block adjacency [[A, C], [C^T, B]].

    ``original`` is shared by reference and is never modified; ``border``
    (C) and ``patch_block`` (B) are dense and owned by this instance.
    B is kept symmetric with zero diagonal between operations.
    """

    original: sp.csr_matrix
    border: np.ndarray
    patch_block: np.ndarray

    def __post_init__(self):
        n = self.original.shape[0]
        m = self.border.shape[1] if self.border.ndim == 2 else -1
        if self.border.shape != (n, m) or self.patch_block.shape != (m, m):
            raise ValidationError(
                f"inconsistent block shapes: A {self.original.shape}, "
                f"C {self.border.shape}, B {self.patch_block.shape}"
            )

    @property
    def n(self) -> int:
        return self.original.shape[0]

    @property
    def m(self) -> int:
        return self.border.shape[1]

    @property
    def total(self) -> int:
        return self.n + self.m

    @classmethod
    def zeros(cls, graph: Graph, m: int) -> "PatchedAdjacency":
        """Patched adjacency with m fresh, unconnected patch nodes."""
        n = graph.n
        return cls(
            original=graph.adjacency,
            border=np.zeros((n, m)),
            patch_block=np.zeros((m, m)),
        )

    def to_dense(self) -> np.ndarray:
        """Materialize the full (n+m, n+m) matrix; small graphs only."""
        n, m = self.n, self.m
        full = np.zeros((n + m, n + m))
        full[:n, :n] = self.original.toarray()
        full[:n, n:] = self.border
        full[n:, :n] = self.border.T
        full[n:, n:] = self.patch_block
        return full


@dataclass
class AttackMask:
    """Index view of the attack matrix P for one target node.

    P's row and column ``target`` equal the attack vector
    p = [0]*n + [1]*m and P is zero elsewhere. Only the indices are kept;
    the matrix is never materialized.
    """

    target: int
    n: int
    m: int

    def __post_init__(self):
        if not 0 <= self.target < self.n:
            raise ValidationError(
                f"attack target {self.target} outside original node range [0, {self.n})"
            )

    def flipped_columns(self) -> np.ndarray:
        """Full-matrix column indices whose entry in row ``target`` flips."""
        return np.arange(self.n, self.n + self.m)


@dataclass
class NormalizedAdjacency:
    """D^{-1/2} (M + I) D^{-1/2} held as sparse core plus dense border.

    core   -- (n, n) csr, the normalized original block including self loops
    border -- (n, m) dense, the normalized C block
    corner -- (m, m) dense, the normalized B block including self loops
    degrees -- (n + m,) row sums of M + I
    """

    core: sp.csr_matrix
    border: np.ndarray
    corner: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.core.shape[0]

    @property
    def m(self) -> int:
        return self.border.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        t = self.n + self.m
        return (t, t)

    def dot(self, v: np.ndarray) -> np.ndarray:
        """Product with a dense vector or (n+m, f) matrix."""
        n = self.n
        top_in, bot_in = v[:n], v[n:]
        top = self.core @ top_in
        bot = self.border.T @ top_in
        if self.m:
            top = top + self.border @ bot_in
            bot = bot + self.corner @ bot_in
        return np.concatenate([top, bot], axis=0)

    def row(self, i: int) -> np.ndarray:
        """Dense row i of the full normalized matrix."""
        n = self.n
        if i < n:
            left = np.asarray(self.core[[i], :].todense()).ravel()
            return np.concatenate([left, self.border[i]])
        return np.concatenate([self.border[:, i - n], self.corner[i - n]])

    def to_dense(self) -> np.ndarray:
        n, m = self.n, self.m
        full = np.zeros((n + m, n + m))
        full[:n, :n] = self.core.toarray()
        full[:n, n:] = self.border
        full[n:, :n] = self.border.T
        full[n:, n:] = self.corner
        return full


def _as_blocks(adj) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    if isinstance(adj, PatchedAdjacency):
        return adj.original, adj.border, adj.patch_block
    if isinstance(adj, Graph):
        adj = adj.adjacency
    if sp.issparse(adj):
        a = adj.tocsr()
    else:
        a = sp.csr_matrix(np.asarray(adj, dtype=float))
    n = a.shape[0]
    return a, np.zeros((n, 0)), np.zeros((0, 0))


def normalize(adj) -> NormalizedAdjacency:
    """Degree-normalized adjacency D^{-1/2} (M + I) D^{-1/2}.

    Accepts a PatchedAdjacency, a Graph, or a plain (sparse or dense)
    square matrix. Works on continuous entries; the added self loops keep
    every degree >= 1 so the inverse square root is always defined.
    """
    a, c, b = _as_blocks(adj)
    n, m = a.shape[0], c.shape[1]
    if a.nnz and a.data.min() < 0 or (c.size and c.min() < 0) or (b.size and b.min() < 0):
        raise ValidationError("normalize requires nonnegative entries")

    deg_top = np.asarray(a.sum(axis=1)).ravel() + c.sum(axis=1) + 1.0
    deg_bot = c.sum(axis=0) + b.sum(axis=1) + 1.0
    degrees = np.concatenate([deg_top, deg_bot])
    inv_sqrt = 1.0 / np.sqrt(degrees)
    s_top, s_bot = inv_sqrt[:n], inv_sqrt[n:]

    core = (a + sp.eye(n, format="csr")).tocoo()
    core.data *= s_top[core.row] * s_top[core.col]
    border = c * s_top[:, None] * s_bot[None, :]
    corner = (b + np.eye(m)) * np.outer(s_bot, s_bot)
    return NormalizedAdjacency(core.tocsr(), border, corner, degrees)


def attack_flip(adj: PatchedAdjacency, target: int) -> PatchedAdjacency:
    """Flip the target node's connections to every patch node.

    Row/column ``target`` of the border block becomes 1 - previous value;
    nothing else moves. Applying the operation twice restores the input,
    which is how the un-attack is performed.
    """
    mask = AttackMask(target=target, n=adj.n, m=adj.m)
    border = adj.border.copy()
    border[mask.target, :] = 1.0 - border[mask.target, :]
    return PatchedAdjacency(adj.original, border, adj.patch_block)


def l2_project_patch_columns(adj: PatchedAdjacency, radius: float) -> PatchedAdjacency:
    """Project every patch node's incident-edge vector onto the L2 ball.

    For patch node j the vector is column j of [C; B] with B's diagonal
    excluded. Columns are scaled simultaneously, then B is symmetrized by
    averaging; because averaging alone can push a column back outside the
    ball, the project/symmetrize pair repeats until all columns fit
    (alternating projection onto two convex sets, converges fast).
    """
    if radius <= 0:
        raise ConfigError(f"projection radius must be positive, got {radius}")
    c = adj.border.copy()
    b = adj.patch_block.copy()
    m = adj.m
    if m == 0:
        return PatchedAdjacency(adj.original, c, b)
    for _ in range(1000):
        col_sq = (c * c).sum(axis=0) + (b * b).sum(axis=0) - np.diag(b) ** 2
        norms = np.sqrt(np.maximum(col_sq, 0.0))
        over = norms > radius * (1.0 + 1e-12)
        if not over.any():
            break
        scale = np.where(over, radius / np.where(norms > 0, norms, 1.0), 1.0)
        c *= scale[None, :]
        b *= scale[None, :]
        b = (b + b.T) / 2.0
    return PatchedAdjacency(adj.original, c, b)


def clip01_and_zero_diag(adj: PatchedAdjacency) -> PatchedAdjacency:
    """Clamp border entries to [0, 1] and remove patch self loops."""
    c = np.clip(adj.border, 0.0, 1.0)
    b = np.clip(adj.patch_block, 0.0, 1.0)
    np.fill_diagonal(b, 0.0)
    return PatchedAdjacency(adj.original, c, b)


def zero_patch_diag(adj: PatchedAdjacency) -> PatchedAdjacency:
    """Remove patch self loops without clamping (clipping-ablation path)."""
    b = adj.patch_block.copy()
    np.fill_diagonal(b, 0.0)
    return PatchedAdjacency(adj.original, adj.border.copy(), b)


def binarize(adj: PatchedAdjacency, threshold: float = 0.5) -> PatchedAdjacency:
    """Threshold border entries: strictly greater than ``threshold`` -> 1."""
    c = (adj.border > threshold).astype(float)
    b = (adj.patch_block > threshold).astype(float)
    return PatchedAdjacency(adj.original, c, b)


def largest_connected_component(g: Graph) -> Graph:
    """Induced subgraph on the largest component, indices compacted.

    Size ties go to the component containing the lowest original node
    index. Feature/label/split rows are carried over.
    """
    if g.n == 0:
        raise ValidationError("cannot take the largest component of an empty graph")
    count, labels = connected_components(g.adjacency, directed=False)
    sizes = np.bincount(labels, minlength=count)
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    # first occurrence of each candidate label = its lowest node index
    pick = min(candidates, key=lambda lab: int(np.argmax(labels == lab)))
    keep = np.flatnonzero(labels == pick)
    sub = g.adjacency[keep][:, keep].tocsr()
    return Graph(
        adjacency=sub,
        features=g.features[keep],
        labels=g.labels[keep],
        num_classes=g.num_classes,
        split=g.split[keep],
    )
