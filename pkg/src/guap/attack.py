"""Patch optimization: the iterative perturbation inner loop and the
epoch-level outer loop with projection, clipping, binarization and ASR
tracking.

Per attacked node the inner loop alternates two updates on the
accumulated perturbation of the target's patch connections:

1. a minimum-perturbation step toward the decision boundary of the
   closest other class, computed from the output Jacobian w.r.t. the
   target's adjacency row (first n entries zeroed, scaled by
   1 + overshoot), and
2. a descent step on the cross-entropy of all other training nodes, whose
   gradient is masked to the border blocks and symmetrized.

Both are evaluated on the current clipped perturbed matrix.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .config import AttackHyper
from .data import PatchArtifact
from .errors import ConfigError, DegenerateGradientError, ValidationError
from .features import FeatureStats, fit_feature_stats, sample_patch_features
from .gcn import (GcnParams, build_forward_state, loss_grad_masked_border,
                  output_jacobian_wrt_adj_row, predict_labels)
from .graph import (Graph, PatchedAdjacency, attack_flip, binarize,
                    clip01_and_zero_diag, l2_project_patch_columns, normalize,
                    zero_patch_diag)

log = logging.getLogger(__name__)


@dataclass
class IgpResult:
    """Perturbation of the border blocks for one target attack.

    The implied full perturbation [[0, dC], [dC^T, dB]] has an exactly
    zero original block and is symmetric by construction.
    """

    delta_border: np.ndarray
    delta_patch: np.ndarray
    iterations: int
    success: bool


def igp(adj_attacked: PatchedAdjacency, x_new: np.ndarray, params: GcnParams,
        target: int, hyper: AttackHyper, *, clean_pred: int,
        labels: np.ndarray, train_idx: np.ndarray,
        h0: np.ndarray | None = None) -> IgpResult:
    """Iterative perturbation of one attacked adjacency.

    ``adj_attacked`` is the patched adjacency with the target's border row
    already flipped; ``clean_pred`` is the target's prediction on the
    clean graph. Raises DegenerateGradientError when no class offers a
    nonzero boundary gradient.
    """
    n, m = adj_attacked.n, adj_attacked.m
    if not 0 <= target < n:
        raise ValidationError(f"target {target} outside original node range [0, {n})")
    d_border = np.zeros((n, m))
    d_patch = np.zeros((m, m))
    iterations = 0
    fooled = False
    for _ in range(hyper.max_iter):
        current = _apply_delta(adj_attacked, d_border, d_patch)
        state = build_forward_state(current, x_new, params, h0=h0)
        if int(np.argmax(state.z[target])) != clean_pred:
            fooled = True
            break
        v = _boundary_step(current, x_new, params, target, clean_pred, state)
        v[:n] = 0.0
        d_border[target] += (1.0 + hyper.overshoot) * v[n:]

        mid = _apply_delta(adj_attacked, d_border, d_patch)
        mid_state = build_forward_state(mid, x_new, params, h0=h0)
        g_border, g_patch = loss_grad_masked_border(
            mid, x_new, params, labels, train_idx, exclude=target, state=mid_state)
        d_border -= hyper.step * g_border
        d_patch -= hyper.step * g_patch
        iterations += 1
    else:
        final = _apply_delta(adj_attacked, d_border, d_patch)
        final_state = build_forward_state(final, x_new, params, h0=h0)
        fooled = int(np.argmax(final_state.z[target])) != clean_pred
    return IgpResult(delta_border=d_border, delta_patch=d_patch,
                     iterations=iterations, success=fooled)


def _apply_delta(adj: PatchedAdjacency, d_border, d_patch) -> PatchedAdjacency:
    """Clipped perturbed matrix the loop evaluates gradients on."""
    return PatchedAdjacency(
        adj.original,
        np.clip(adj.border + d_border, 0.0, 1.0),
        np.clip(adj.patch_block + d_patch, 0.0, 1.0),
    )


def _boundary_step(current, x_new, params, target, pred, state) -> np.ndarray:
    """Minimum perturbation of the target's adjacency row that reaches the
    closest class boundary: v = |df_k| / ||dw_k||^2 * dw_k."""
    jac = output_jacobian_wrt_adj_row(current, x_new, params, target, state=state)
    df = state.z[target] - state.z[target, pred]
    dw = jac - jac[pred]
    norms = np.linalg.norm(dw, axis=1)
    norms[pred] = 0.0
    candidates = np.flatnonzero(norms > 0.0)
    if candidates.size == 0:
        raise DegenerateGradientError(
            f"all boundary gradients vanish for target {target}")
    ratios = np.abs(df[candidates]) / norms[candidates]
    k = candidates[int(np.argmin(ratios))]
    return (np.abs(df[k]) / norms[k] ** 2) * dw[k]


def sample_training_nodes(train_idx: np.ndarray, rate: float, epoch: int,
                          seed: int) -> np.ndarray:
    """Fresh uniform subset of ceil(rate * |V_L|) nodes for one epoch."""
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"sample rate must be in (0, 1], got {rate}")
    train_idx = np.asarray(train_idx)
    count = math.ceil(rate * train_idx.size)
    rng = np.random.Generator(np.random.Philox(key=[seed, epoch]))
    return rng.permutation(train_idx)[:count]


def asr(adj: PatchedAdjacency, x_new: np.ndarray, params: GcnParams,
        nodes: np.ndarray, clean_labels: np.ndarray,
        h0: np.ndarray | None = None) -> float:
    """Fraction of nodes whose prediction flips under their own attack.

    Each node is evaluated independently: flip its patch connections,
    predict, compare with the clean-graph prediction.
    """
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        raise ValidationError("attack success rate over an empty node set is undefined")
    changed = 0
    for i in nodes:
        flipped = attack_flip(adj, int(i))
        state = build_forward_state(flipped, x_new, params, h0=h0)
        if int(np.argmax(state.z[i])) != clean_labels[i]:
            changed += 1
    return changed / nodes.size


@dataclass
class EpochSnapshot:
    """Post-epoch state passed to the optional progress callback."""

    epoch: int
    continuous: PatchedAdjacency   # after projection/clip, before binarize
    binarized: PatchedAdjacency
    asr: float
    igp_calls: int


def guap(g: Graph, params: GcnParams, hyper: AttackHyper, seed: int = 0,
         epoch_callback=None) -> PatchArtifact:
    """Train the adversarial patch and return the best binarized state.

    Starts from empty border blocks and generated patch features; every
    epoch iterates a (possibly sampled) shuffle of the training set,
    perturbing each not-yet-fooled target, un-attacking, projecting each
    patch column onto the L2 ball and clipping. The matrix is binarized at
    the end of each epoch, its training-set ASR recorded, and the epoch
    with the highest ASR (earliest on ties) is returned.
    """
    started = time.perf_counter()
    m = hyper.resolve_m(g.n)
    train_idx = g.train_nodes()
    if train_idx.size == 0:
        raise ConfigError("graph has no training nodes")

    stats = fit_feature_stats(g.features)
    x_patch = sample_patch_features(stats, m, seed)
    x_new = np.vstack([g.features, x_patch])
    h0 = x_new @ params.w0

    clean_z = build_forward_state(g, g.features, params).z
    clean_pred = predict_labels(clean_z)

    adj = PatchedAdjacency.zeros(g, m)
    best_asr = -1.0
    best_epoch = -1
    best = binarize(adj, hyper.binarize_threshold)
    trace: list[float] = []
    igp_calls = 0
    skipped_degenerate = 0

    for epoch in range(hyper.max_epoch):
        for i in sample_training_nodes(train_idx, hyper.sample_rate, epoch, seed):
            i = int(i)
            attacked = attack_flip(adj, i)
            state = build_forward_state(attacked, x_new, params, h0=h0)
            if int(np.argmax(state.z[i])) != clean_pred[i]:
                continue  # this target is already fooled
            if m == 0:
                continue
            try:
                result = igp(attacked, x_new, params, i, hyper,
                             clean_pred=clean_pred[i], labels=g.labels,
                             train_idx=train_idx, h0=h0)
            except DegenerateGradientError:
                skipped_degenerate += 1
                log.warning("degenerate boundary gradient, skipping node %d "
                            "for epoch %d", i, epoch)
                continue
            igp_calls += 1
            perturbed = PatchedAdjacency(
                adj.original,
                attacked.border + result.delta_border,
                attacked.patch_block + result.delta_patch,
            )
            adj = attack_flip(perturbed, i)  # un-attack
            adj = l2_project_patch_columns(adj, hyper.radius)
            if hyper.clip:
                adj = clip01_and_zero_diag(adj)
            else:
                adj = zero_patch_diag(adj)

        continuous = adj
        adj = binarize(adj, hyper.binarize_threshold)
        epoch_asr = asr(adj, x_new, params, train_idx, clean_pred, h0=h0)
        trace.append(epoch_asr)
        if epoch_asr > best_asr:
            best_asr = epoch_asr
            best_epoch = epoch
            best = adj
        log.info("epoch %2d: train ASR %.4f (best %.4f @ %d, igp calls %d)",
                 epoch, epoch_asr, best_asr, best_epoch, igp_calls)
        if epoch_callback is not None:
            epoch_callback(EpochSnapshot(epoch=epoch, continuous=continuous,
                                         binarized=adj, asr=epoch_asr,
                                         igp_calls=igp_calls))

    return PatchArtifact(
        x_patch=x_patch,
        border=best.border,
        patch_block=best.patch_block,
        stats=stats,
        hyper=hyper,
        asr_trace=trace,
        best_epoch=best_epoch,
        seed=seed,
        dataset="",
        igp_calls=igp_calls,
        runtime_seconds=time.perf_counter() - started,
    )
