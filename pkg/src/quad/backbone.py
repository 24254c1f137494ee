"""Gated unimodal blocks and the concatenation classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class BlockParams:
    W: T.Value   # (d, d)
    b: T.Value   # (d,)

    def check(self, d: int) -> None:
        if self.W.shape != (d, d) or self.b.shape != (d,):
            raise T.ShapeError("block", self.W.shape, self.b.shape, detail=f"expected ({d}, {d}) and ({d},)")


@dataclass
class ForwardTrace:
    """Per-modality intermediate features, gate vectors and predicted block parameters."""

    intermediates: list = field(default_factory=list)   # per modality: [I^1, ..., I^{D+1}]
    gates: list = field(default_factory=list)           # per modality: [q^1, ..., q^D]
    params: list = field(default_factory=list)          # per modality: [BlockParams, ...]
    logits: T.Value | None = None

    @property
    def features(self) -> list:
        return [seq[-1] for seq in self.intermediates]

    def depths(self) -> list:
        return [len(g) for g in self.gates]


def block_forward(feat: T.Value, theta: BlockParams) -> tuple[T.Value, T.Value]:
    """q = sigmoid(W I + b); returns (q * I, q)."""
    d = feat.shape[0] if feat.data.ndim == 1 else -1
    if feat.data.ndim != 1:
        raise T.ShapeError("block", feat.shape, detail="features must be rank-1")
    theta.check(d)
    q = T.sigmoid(T.add(T.matvec(theta.W, feat), theta.b))
    return T.mul(q, feat), q


@dataclass
class Classifier:
    W: T.Value   # (C, sum d_m)
    b: T.Value   # (C,)

    @classmethod
    def init(cls, n_classes: int, width: int, rng: np.random.Generator, scale: float = 0.01) -> "Classifier":
        return cls(T.parameter(rng.standard_normal((n_classes, width)) * scale),
                   T.parameter(np.zeros(n_classes)))

    def parameters(self) -> list:
        return [self.W, self.b]


def classify(features: list, clf: Classifier, n_modalities: int | None = None) -> T.Value:
    """Logits from an affine map over the concatenated per-modality features."""
    if n_modalities is not None and len(features) != n_modalities:
        raise ValueError(f"expected {n_modalities} modality features, got {len(features)}")
    if any(f is None for f in features):
        raise ValueError("missing modality features")
    return T.add(T.matvec(clf.W, T.concat(features)), clf.b)
