"""Simulated human experts with a controllable label-noise rate.

Expert answers are keyed by (seed, instance_id) rather than by draw order,
so training and evaluation always see the same answer for the same
instance, in any processing order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SimulatedExpert:
    noise_rate: float
    n_classes: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")
        if self.n_classes < 2:
            raise ValueError("need at least two categories")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def label_for(self, y_true: int, instance_id: int) -> int:
        """Expert answer: y with probability 1 - noise_rate, else a uniform wrong label."""
        y = int(y_true)
        if not 0 <= y < self.n_classes:
            raise ValueError(f"category {y} out of range for {self.n_classes} classes")
        rng = np.random.default_rng([self.seed, int(instance_id)])
        if rng.random() < self.noise_rate:
            offset = int(rng.integers(1, self.n_classes))
            return (y + offset) % self.n_classes
        return y

    def labels_for(self, y_true, instance_ids=None) -> np.ndarray:
        y = np.asarray(y_true, dtype=np.int64)
        ids = np.arange(y.shape[0]) if instance_ids is None else np.asarray(instance_ids)
        return np.array([self.label_for(int(t), int(i)) for t, i in zip(y, ids)], dtype=np.int64)


def expert_onehot(label: int, n_classes: int) -> np.ndarray:
    m = int(label)
    if not 0 <= m < n_classes:
        raise ValueError(f"category {m} out of range for {n_classes} classes")
    v = np.zeros(n_classes)
    v[m] = 1.0
    return v


def onehot_rows(labels, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError("category out of range")
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out
