"""Quality-to-depth mapping with one min-max normalizer shared by all modalities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DepthNormalizer:
    v_min: float
    v_max: float
    k: int

    @property
    def degenerate(self) -> bool:
        return self.v_max <= self.v_min

    def to_dict(self) -> dict:
        return {"v_min": self.v_min, "v_max": self.v_max, "k": self.k}


def fit_normalizer(qualities, k: int) -> DepthNormalizer:
    """Pool ``1 - quality`` over every sample and modality jointly."""
    pool = 1.0 - np.asarray(qualities, dtype=float).reshape(-1)
    if pool.size == 0:
        raise ValueError("cannot fit a depth normalizer on an empty pool")
    if int(k) < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    return DepthNormalizer(float(pool.min()), float(pool.max()), int(k))


def assign_depths(qualities, norm: DepthNormalizer) -> np.ndarray:
    """Integer depths in [1, K]; works on one sample's (M,) qualities or an (N, M) batch."""
    q = np.asarray(qualities, dtype=float)
    if norm.degenerate or norm.k == 1:
        return np.ones(q.shape, dtype=np.int64)
    v = np.clip(1.0 - q, norm.v_min, norm.v_max)
    scaled = 1.0 + (norm.k - 1) * (v - norm.v_min) / (norm.v_max - norm.v_min)
    # round half up
    return np.clip(np.floor(scaled + 0.5), 1, norm.k).astype(np.int64)


def depth_for(quality: float, norm: DepthNormalizer) -> int:
    """Scalar reference implementation of :func:`assign_depths`."""
    if norm.degenerate or norm.k == 1:
        return 1
    v = min(max(1.0 - quality, norm.v_min), norm.v_max)
    return int(math.floor(1.0 + (norm.k - 1) * (v - norm.v_min) / (norm.v_max - norm.v_min) + 0.5))


def shift_depths(depths, delta: int, k: int | None = None) -> np.ndarray:
    """Depth-minus-one / depth-plus-one variants; the floor is 1, the cap (if given) is K + 1."""
    d = np.maximum(np.asarray(depths, dtype=np.int64) + delta, 1)
    if k is not None:
        d = np.minimum(d, k + 1)
    return d
