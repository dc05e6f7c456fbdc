"""Two-layer graph convolutional victim model.

Forward pass: Z = softmax(A_hat relu(A_hat X W0) W1) with
A_hat = D^{-1/2} (M + I) D^{-1/2}. Besides training and prediction this
module provides the two adjacency derivatives the attack needs, both exact
through the degree normalization (degrees depend on the perturbed entries,
and that term is not negligible):

* the Jacobian of one node's output row with respect to its own adjacency
  row/column, and
* the gradient of the training-node cross-entropy (optionally excluding
  one node) with respect to every raw adjacency entry.

Writing phi for a scalar output and P = d phi / d A_hat, the chain rule
through the normalization collapses to

    d phi / d M[u, v] = P[u, v] / sqrt(d_u d_v) + q_u,
    q_u = -((P o A_hat) 1 + (P o A_hat)^T 1)_u / (2 d_u),

which never requires materializing P: every contraction reduces to
products with the hybrid sparse-core/dense-border operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import ConfigError, ValidationError
from .graph import Graph, NormalizedAdjacency, PatchedAdjacency, normalize

log = logging.getLogger(__name__)


@dataclass
class GcnParams:
    """Trained weight matrices of the victim model."""

    w0: np.ndarray  # (d, hidden)
    w1: np.ndarray  # (hidden, K)

    def __post_init__(self):
        if self.w0.ndim != 2 or self.w1.ndim != 2 or self.w0.shape[1] != self.w1.shape[0]:
            raise ValidationError(
                f"inconsistent weight shapes {self.w0.shape} / {self.w1.shape}"
            )
        if not (np.isfinite(self.w0).all() and np.isfinite(self.w1).all()):
            raise ValidationError("weights must be finite")

    @property
    def hidden(self) -> int:
        return self.w0.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w1.shape[1]


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _as_normalized(adj) -> NormalizedAdjacency:
    if isinstance(adj, NormalizedAdjacency):
        return adj
    return normalize(adj)


@dataclass
class ForwardState:
    """Intermediate activations of one forward pass, reused by gradients."""

    norm: NormalizedAdjacency
    h0: np.ndarray  # X @ W0
    s: np.ndarray   # A_hat @ h0 (pre-activation)
    h: np.ndarray   # relu(s)
    g: np.ndarray   # h @ W1
    u: np.ndarray   # A_hat @ g (logits)
    z: np.ndarray   # softmax rows


def build_forward_state(adj, x: np.ndarray, params: GcnParams,
                        h0: np.ndarray | None = None) -> ForwardState:
    """Run the forward pass keeping activations.

    ``h0`` may be passed in when X @ W0 was already computed (it does not
    depend on the adjacency, which is what changes inside the attack).
    """
    norm = _as_normalized(adj)
    if h0 is None:
        h0 = x @ params.w0
    if h0.shape[0] != norm.shape[0]:
        raise ValidationError(
            f"feature rows {h0.shape[0]} do not match adjacency size {norm.shape[0]}"
        )
    s = norm.dot(h0)
    h = np.maximum(s, 0.0)
    g = h @ params.w1
    u = norm.dot(g)
    return ForwardState(norm=norm, h0=h0, s=s, h=h, g=g, u=u, z=row_softmax(u))


def forward(adj, x: np.ndarray, params: GcnParams) -> np.ndarray:
    """Probability matrix Z; ``adj`` may be raw or already normalized."""
    return build_forward_state(adj, x, params).z


def predict_labels(z: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(z, axis=1)


def predicted_label(adj, x: np.ndarray, params: GcnParams, i: int) -> int:
    return int(np.argmax(forward(adj, x, params)[i]))


def masked_loss(adj, x: np.ndarray, params: GcnParams, labels: np.ndarray,
                train_idx: np.ndarray, exclude: int | None = None) -> float:
    """Summed cross-entropy over the training nodes, minus the excluded one."""
    rows = _loss_rows(train_idx, exclude)
    if rows.size == 0:
        return 0.0
    state = build_forward_state(adj, x, params)
    logz = row_log_softmax(state.u[rows])
    return float(-logz[np.arange(rows.size), labels[rows]].sum())


def _loss_rows(train_idx: np.ndarray, exclude: int | None) -> np.ndarray:
    train_idx = np.asarray(train_idx)
    if exclude is None:
        return train_idx
    return train_idx[train_idx != exclude]


def _degree_scale(norm: NormalizedAdjacency):
    d = norm.degrees
    return d, 1.0 / np.sqrt(d)


def output_jacobian_wrt_adj_row(adj, x: np.ndarray, params: GcnParams, i: int,
                                state: ForwardState | None = None) -> np.ndarray:
    """d Z[i, c] / d (row i of the raw adjacency), one row per class.

    Entry j accounts for the symmetric coupling: positions (i, j) and
    (j, i) move together (the diagonal position moves once). Differentiates
    through the degree normalization.
    """
    if state is None:
        state = build_forward_state(adj, x, params)
    norm, h0, s, h, g, u, z = (state.norm, state.h0, state.s, state.h,
                               state.g, state.u, state.z)
    total = norm.shape[0]
    if not 0 <= i < total:
        raise ValidationError(f"node {i} outside patched range [0, {total})")
    k = params.num_classes
    d, inv_sqrt = _degree_scale(norm)

    # dZ[i, c] / dU[i, :] for every class c at once
    r_mat = -np.outer(z[i], z[i])
    r_mat[np.diag_indices(k)] += z[i]
    rw = r_mat @ params.w1.T            # (K, hidden)

    a = norm.row(i)
    relu_m = (s > 0.0).astype(float)
    ab = norm.dot(a[:, None] * relu_m)  # A_hat @ (diag(a) relu') once for all classes

    hrw = h @ rw.T                      # (total, K)
    gr = g @ r_mat.T
    abh0rw = (ab * h0) @ rw.T
    h0rmi = (h0 * relu_m[i]) @ rw.T
    rmh0i = (relu_m * h0[i]) @ rw.T
    r_u = r_mat @ u[i]
    r_gi = r_mat @ g[i]

    v_row = a[:, None] * hrw
    v_row[i] += r_u
    v_col = a[:, None] * gr + abh0rw
    q = -(v_row + v_col) / (2.0 * d[:, None])

    p_row = gr + a[i] * h0rmi           # P[i, :] per class
    p_col = a[:, None] * rmh0i          # P[:, i] per class
    p_col[i] += r_gi

    jac = inv_sqrt[i] * inv_sqrt[:, None] * (p_row + p_col) + q[i][None, :] + q
    jac[i] = inv_sqrt[i] ** 2 * p_row[i] + q[i]
    return jac.T


def _loss_upstream(state: ForwardState, labels: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """dL/dU for the summed cross-entropy over ``rows``."""
    r = np.zeros_like(state.u)
    r[rows] = state.z[rows]
    r[rows, labels[rows]] -= 1.0
    return r


def loss_grad_wrt_patch_blocks(adj, x: np.ndarray, params: GcnParams,
                               labels: np.ndarray, train_idx: np.ndarray,
                               exclude: int | None = None,
                               state: ForwardState | None = None) -> np.ndarray:
    """Gradient of masked_loss w.r.t. every raw adjacency entry.

    Returns the full (n+m, n+m) array with entries treated as independent
    variables; callers apply the attack's masking (zero original block,
    zero target row/column, symmetrize).
    """
    if state is None:
        state = build_forward_state(adj, x, params)
    rows = _loss_rows(train_idx, exclude)
    total = state.norm.shape[0]
    if rows.size == 0:
        return np.zeros((total, total))
    d, inv_sqrt = _degree_scale(state.norm)
    r, t, ta, ra = _loss_backward(state, params, labels, rows)
    q = _loss_degree_term(state, r, t, ta, ra, d)
    p = r @ state.g.T + t @ state.h0.T
    return p * np.outer(inv_sqrt, inv_sqrt) + q[:, None]


def _loss_backward(state, params, labels, rows):
    r = _loss_upstream(state, labels, rows)
    ra = state.norm.dot(r)                       # A_hat^T R (A_hat symmetric)
    t = (ra @ params.w1.T) * (state.s > 0.0)
    ta = state.norm.dot(t)
    return r, t, ta, ra


def _loss_degree_term(state, r, t, ta, ra, d):
    v_row = (r * state.u).sum(axis=1) + (t * state.s).sum(axis=1)
    v_col = (ra * state.g).sum(axis=1) + (ta * state.h0).sum(axis=1)
    return -(v_row + v_col) / (2.0 * d)


def loss_grad_masked_border(adj, x: np.ndarray, params: GcnParams,
                            labels: np.ndarray, train_idx: np.ndarray,
                            exclude: int | None = None,
                            state: ForwardState | None = None
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Masked, symmetrized loss gradient restricted to the border blocks.

    Equivalent to masking loss_grad_wrt_patch_blocks (zero original block,
    zero row/column ``exclude``, (g + g^T)/2) and reading off the C and B
    blocks, but computed without the (n+m)^2 intermediate.
    """
    if state is None:
        state = build_forward_state(adj, x, params)
    norm = state.norm
    n, m = norm.n, norm.m
    rows = _loss_rows(train_idx, exclude)
    if rows.size == 0 or m == 0:
        return np.zeros((n, m)), np.zeros((m, m))
    d, inv_sqrt = _degree_scale(norm)
    r, t, ta, ra = _loss_backward(state, params, labels, rows)
    q = _loss_degree_term(state, r, t, ta, ra, d)

    # P restricted to the patch columns / patch rows
    p_cols = r @ state.g[n:].T + t @ state.h0[n:].T     # (n+m, m)
    p_rows = r[n:] @ state.g.T + t[n:] @ state.h0.T     # (m, n+m)
    grad_cols = p_cols * np.outer(inv_sqrt, inv_sqrt[n:]) + q[:, None]
    grad_rows = p_rows * np.outer(inv_sqrt[n:], inv_sqrt) + q[n:, None]

    g_border = (grad_cols[:n] + grad_rows[:, :n].T) / 2.0
    if exclude is not None and exclude < n:
        g_border[exclude, :] = 0.0
    g_patch = (grad_cols[n:] + grad_cols[n:].T) / 2.0
    return g_border, g_patch


def train(g: Graph, cfg: TrainConfig | None = None) -> GcnParams:
    """Full-batch training with adaptive-moment gradient descent.

    Deterministic given cfg.seed. Weight decay is applied to the first
    layer only, the usual convention for this architecture.
    """
    cfg = cfg or TrainConfig()
    train_idx = g.train_nodes()
    if train_idx.size == 0:
        raise ConfigError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    w0 = _glorot(rng, g.d, cfg.hidden)
    w1 = _glorot(rng, cfg.hidden, g.num_classes)

    norm = normalize(g)
    ax = norm.dot(g.features)           # fixed adjacency: propagate X once
    onehot_rows = (np.arange(train_idx.size), g.labels[train_idx])

    adam = _AdamState([w0, w1], cfg.learning_rate)
    for epoch in range(cfg.epochs):
        s = ax @ w0
        h = np.maximum(s, 0.0)
        u = norm.dot(h @ w1)
        z = row_softmax(u)

        r = np.zeros_like(u)
        r[train_idx] = z[train_idx]
        r[train_idx[onehot_rows[0]], onehot_rows[1]] -= 1.0
        r /= train_idx.size

        dg = norm.dot(r)
        dw1 = h.T @ dg
        ds = (dg @ w1.T) * (s > 0.0)
        dw0 = ax.T @ ds + cfg.weight_decay * w0
        adam.step([w0, w1], [dw0, dw1])

        if log.isEnabledFor(logging.DEBUG) and (epoch + 1) % 20 == 0:
            losses = -row_log_softmax(u[train_idx])[onehot_rows]
            log.debug("epoch %d train loss %.4f", epoch + 1, losses.mean())
    return GcnParams(w0=w0, w1=w1)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _AdamState:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, grad, m, v in zip(params, grads, self.m, self.v):
            m += (1 - self.beta1) * (grad - m)
            v += (1 - self.beta2) * (grad * grad - v)
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
