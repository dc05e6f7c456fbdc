"""Configuration dataclasses for victim-model training and attack runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigError


@dataclass
class TrainConfig:
    """Victim GCN training settings.

    Defaults reproduce the usual two-layer setup for citation benchmarks:
    16 hidden units, Adam at 0.01 with 5e-4 weight decay, 200 full-batch
    epochs, no dropout.
    """

    hidden: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.hidden <= 0:
            raise ConfigError(f"hidden must be positive, got {self.hidden}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackHyper:
    """Hyperparameters of the patch optimization.

    ``m`` fixes the patch size directly; when ``m`` is None it is resolved
    as round(patch_fraction * n). ``clip`` disables the per-step [0,1]
    clamp (ablation switch); the zero diagonal is enforced regardless.
    """

    max_epoch: int = 50
    max_iter: int = 30
    radius: float = 10.0
    overshoot: float = 0.02
    step: float = 10.0
    sample_rate: float = 1.0
    binarize_threshold: float = 0.5
    patch_fraction: float | None = 0.01
    m: int | None = None
    clip: bool = True

    def __post_init__(self):
        for name in ("max_epoch", "max_iter", "radius", "overshoot", "step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError(f"sample_rate must be in (0, 1], got {self.sample_rate}")
        if self.m is None and self.patch_fraction is None:
            raise ConfigError("one of m or patch_fraction must be set")
        if self.m is not None and self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")

    def resolve_m(self, n: int) -> int:
        """Patch node count for a graph of n original nodes."""
        if self.m is not None:
            return self.m
        m = int(round(self.patch_fraction * n))
        if m == 0 and self.patch_fraction > 0:
            raise ConfigError(
                f"patch_fraction {self.patch_fraction} resolves to zero patch nodes for n={n}"
            )
        return m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackHyper":
        return cls(**d)
