"""Patch-node feature generation.

Each feature dimension gets an independent Gaussian fit; binary feature
matrices are detected and samples are thresholded back to {0, 1}. For a
binary dimension with one-rate p the fitted Gaussian has mean p and
variance p(1-p), so a thresholded sample is 1 with probability
0.5 * (1 - erf((0.5 - p) / sqrt(2 p (1-p)))), which stays close to p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class FeatureStats:
    """Per-dimension sample mean/variance plus a binary-data flag."""

    mean: np.ndarray
    var: np.ndarray
    binary: bool

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ValidationError("mean and var must be 1-d arrays of equal length")
        if self.var.size and self.var.min() < 0:
            raise ValidationError("variances must be nonnegative")

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def fit_feature_stats(x: np.ndarray) -> FeatureStats:
    """Per-dimension mean and population variance over all rows of x."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError(f"need a nonempty (n, d) matrix, got shape {x.shape}")
    binary = bool(np.isin(x, (0.0, 1.0)).all())
    return FeatureStats(mean=x.mean(axis=0), var=x.var(axis=0), binary=binary)


def sample_patch_features(stats: FeatureStats, m: int, seed: int) -> np.ndarray:
    """Draw an (m, d) feature matrix from the per-dimension Gaussians.

    Each dimension uses its own counter-based stream keyed by
    (seed, dimension), so regeneration is reproducible and independent of
    evaluation order. Zero-variance dimensions emit the mean. Binary stats
    threshold at 0.5 (sample >= 0.5 becomes 1).
    """
    if m < 0:
        raise ValidationError(f"m must be >= 0, got {m}")
    d = stats.d
    out = np.empty((m, d))
    if m > 0:
        std = np.sqrt(stats.var)
        for j in range(d):
            if std[j] == 0.0:
                out[:, j] = stats.mean[j]
            else:
                rng = np.random.Generator(np.random.Philox(key=[seed, j]))
                out[:, j] = stats.mean[j] + std[j] * rng.standard_normal(m)
    if stats.binary:
        out = (out >= 0.5).astype(float)
    return out


def binarized_one_probability(p: float) -> float:
    """Probability that a thresholded Gaussian N(p, p(1-p)) sample is 1."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"rate must lie strictly inside (0, 1), got {p}")
    return 0.5 * (1.0 - math.erf((0.5 - p) / math.sqrt(2.0 * p * (1.0 - p))))
