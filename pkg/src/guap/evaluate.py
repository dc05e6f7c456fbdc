"""End-to-end evaluation: ASR / accuracy-change reports, ablation
baselines, hyperparameter sweeps, and the same-architecture retraining
check.

acc_patched is measured on the patched-but-unattacked graph (patch
present, nobody flipped); its difference to the clean accuracy is the
unnoticeability metric. ASR is reported on both the training and the test
split.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .attack import asr, guap
from .config import AttackHyper, TrainConfig
from .data import EvalReport, PatchArtifact, write_sweep_csv
from .errors import ValidationError
from .features import fit_feature_stats, sample_patch_features
from .gcn import GcnParams, build_forward_state, predict_labels, train
from .graph import Graph, PatchedAdjacency, attack_flip

log = logging.getLogger(__name__)

SWEEP_AXES = ("patch_fraction", "radius", "sample_rate")


def patch_edge_count(artifact: PatchArtifact) -> int:
    """Undirected edges incident to the patch: ones in C plus half of B."""
    return int(np.count_nonzero(artifact.border)
               + np.count_nonzero(artifact.patch_block) // 2)


def evaluate_patch(artifact: PatchArtifact, g: Graph, params: GcnParams,
                   x_patch: np.ndarray | None = None) -> EvalReport:
    """Full report for a fixed patch against a fixed model."""
    if artifact.n != g.n or (artifact.m and artifact.x_patch.shape[1] != g.d):
        raise ValidationError(
            f"artifact dimensions ({artifact.n} nodes, feature dim "
            f"{artifact.x_patch.shape[1]}) do not match the graph "
            f"({g.n} nodes, feature dim {g.d})")
    started = time.perf_counter()
    x_patch = artifact.x_patch if x_patch is None else x_patch
    x_new = np.vstack([g.features, x_patch])
    adj = PatchedAdjacency(g.adjacency, artifact.border, artifact.patch_block)
    h0 = x_new @ params.w0

    clean_z = build_forward_state(g, g.features, params).z
    clean_pred = predict_labels(clean_z)
    patched_state = build_forward_state(adj, x_new, params, h0=h0)
    patched_pred = predict_labels(patched_state.z[:g.n])

    test_idx = g.test_nodes()
    train_idx = g.train_nodes()
    acc_clean = float((clean_pred[test_idx] == g.labels[test_idx]).mean())
    acc_patched = float((patched_pred[test_idx] == g.labels[test_idx]).mean())

    if artifact.m == 0:
        asr_train, asr_test = 0.0, 0.0
        attacked_pred = clean_pred.copy()
    else:
        asr_train = asr(adj, x_new, params, train_idx, clean_pred, h0=h0)
        asr_test, attacked_pred = _asr_with_outcomes(
            adj, x_new, params, test_idx, clean_pred, h0)
    outcomes = [(int(i), int(clean_pred[i]), int(attacked_pred[i])) for i in test_idx]

    return EvalReport(
        asr_train=asr_train,
        asr_test=asr_test,
        acc_clean=acc_clean,
        acc_patched=acc_patched,
        delta_acc=acc_patched - acc_clean,
        outcomes=outcomes,
        runtime_seconds=time.perf_counter() - started,
        config=_config_echo(artifact),
        seed=artifact.seed,
    )


def _asr_with_outcomes(adj, x_new, params, nodes, clean_pred, h0):
    attacked_pred = clean_pred.copy()
    changed = 0
    for i in nodes:
        flipped = attack_flip(adj, int(i))
        state = build_forward_state(flipped, x_new, params, h0=h0)
        attacked_pred[i] = int(np.argmax(state.z[i]))
        changed += attacked_pred[i] != clean_pred[i]
    return changed / nodes.size, attacked_pred


def _config_echo(artifact: PatchArtifact) -> dict:
    return {
        "dataset": artifact.dataset,
        "m": artifact.m,
        "seed": artifact.seed,
        "best_epoch": artifact.best_epoch,
        "igp_calls": artifact.igp_calls,
        "hyper": artifact.hyper.to_dict(),
    }


def baseline_no_edges(g: Graph, params: GcnParams, m: int, seed: int,
                      hyper: AttackHyper | None = None) -> EvalReport:
    """Patch nodes with generated features but no trained edges.

    Attacking still flips the target's connections to all m patch nodes,
    so the flip mechanics are exercised with B = C = 0.
    """
    artifact = make_baseline_artifact(g, m, seed, hyper)
    return evaluate_patch(artifact, g, params)


def baseline_random_edges(g: Graph, params: GcnParams, m: int,
                          edge_budget: int | None = None,
                          edge_prob: float | None = None,
                          seed: int = 0,
                          hyper: AttackHyper | None = None) -> EvalReport:
    """Bernoulli border/patch edges instead of trained ones.

    Either ``edge_prob`` is given directly, or ``edge_budget`` calibrates
    it so the expected undirected edge count matches a reference patch:
    prob = budget / (n*m + m*(m-1)/2).
    """
    if (edge_budget is None) == (edge_prob is None):
        raise ValidationError("give exactly one of edge_budget or edge_prob")
    positions = g.n * m + m * (m - 1) // 2
    prob = edge_prob if edge_prob is not None else min(1.0, edge_budget / max(positions, 1))
    if not 0.0 <= prob <= 1.0:
        raise ValidationError(f"edge probability must be in [0, 1], got {prob}")
    artifact = make_baseline_artifact(g, m, seed, hyper, edge_prob=prob)
    return evaluate_patch(artifact, g, params)


def make_baseline_artifact(g: Graph, m: int, seed: int,
                           hyper: AttackHyper | None = None,
                           edge_prob: float = 0.0) -> PatchArtifact:
    stats = fit_feature_stats(g.features)
    x_patch = sample_patch_features(stats, m, seed)
    rng = np.random.Generator(np.random.Philox(key=[seed, 1 << 32]))
    border = (rng.random((g.n, m)) < edge_prob).astype(float)
    upper = np.triu((rng.random((m, m)) < edge_prob).astype(float), k=1)
    patch_block = upper + upper.T
    return PatchArtifact(
        x_patch=x_patch, border=border, patch_block=patch_block, stats=stats,
        hyper=hyper or AttackHyper(m=m), asr_trace=[], best_epoch=-1,
        seed=seed, dataset="",
    )


def regenerate_features_eval(artifact: PatchArtifact, g: Graph,
                             params: GcnParams, new_seed: int) -> EvalReport:
    """Re-sample patch features from the stored stats, keep B and C."""
    x_patch = sample_patch_features(artifact.stats, artifact.m, new_seed)
    report = evaluate_patch(artifact, g, params, x_patch=x_patch)
    report.config["feature_seed"] = new_seed
    return report


def transfer_retrain_check(artifact: PatchArtifact, g: Graph,
                           train_cfg: TrainConfig, new_seed: int) -> EvalReport:
    """Evaluate the fixed patch against a freshly retrained victim."""
    cfg = replace(train_cfg, seed=new_seed)
    new_params = train(g, cfg)
    report = evaluate_patch(artifact, g, new_params)
    report.config["retrain_seed"] = new_seed
    return report


@dataclass
class SweepPoint:
    """Aggregated results of the repeats at one swept value."""

    value: float
    asr_train_mean: float
    asr_test_mean: float
    delta_acc_mean: float
    patch_edges_mean: float


SWEEP_CSV_HEADER = ["value", "asr_train_mean", "asr_test_mean",
                    "delta_acc_mean", "patch_edges_mean"]


def sweep(g: Graph, params: GcnParams, hyper: AttackHyper, axis: str,
          values, seeds, workers: int = 1) -> list[SweepPoint]:
    """One guap run per (value, seed); means per value.

    ``axis`` is one of patch_fraction / radius / sample_rate. Points are
    independent; ``workers`` > 1 runs them in separate processes.
    """
    if axis not in SWEEP_AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    values = list(values)
    seeds = list(seeds)
    if not values:
        raise ValidationError("sweep needs at least one value")
    tasks = [(g, params, _override(hyper, axis, value), seed)
             for value in values for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    points = []
    per_value = len(seeds)
    for vi, value in enumerate(values):
        chunk = results[vi * per_value:(vi + 1) * per_value]
        points.append(SweepPoint(
            value=float(value),
            asr_train_mean=float(np.mean([r[0] for r in chunk])),
            asr_test_mean=float(np.mean([r[1] for r in chunk])),
            delta_acc_mean=float(np.mean([r[2] for r in chunk])),
            patch_edges_mean=float(np.mean([r[3] for r in chunk])),
        ))
    return points


def _override(hyper: AttackHyper, axis: str, value) -> AttackHyper:
    if axis == "patch_fraction":
        return replace(hyper, patch_fraction=float(value), m=None)
    return replace(hyper, **{axis: float(value)})


def _sweep_task(task):
    g, params, hyper, seed = task
    artifact = guap(g, params, hyper, seed=seed)
    report = evaluate_patch(artifact, g, params)
    return (report.asr_train, report.asr_test, report.delta_acc,
            patch_edge_count(artifact))


def sweep_to_csv(points: list[SweepPoint], path) -> None:
    rows = [(p.value, p.asr_train_mean, p.asr_test_mean, p.delta_acc_mean,
             p.patch_edges_mean) for p in points]
    write_sweep_csv(path, SWEEP_CSV_HEADER, rows)
