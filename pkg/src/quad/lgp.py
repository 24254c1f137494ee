"""Depth-by-depth block parameter prediction.

A single LSTM cell reads the concatenation of every modality's latest features
(modalities whose network already ended contribute their final output), and a
per-modality affine decoder turns the cell output into the next block's
``(W, b)``. Each active block's rectified improvement in feature-level quality
is accumulated as a gain that training maximises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import BlockParams, Classifier, ForwardTrace, block_forward, classify
from .nfce import PrototypeBank, feature_quality_value

GATES = ("input", "forget", "output", "cell")
SHARED_FIXED = "shared-fixed"
PER_SAMPLE_RANDOM = "per-sample-random"


@dataclass
class LstmUnit:
    """Each gate maps ``[x, h]`` (width ``in_dim + hdim``) to ``hdim`` with its own matrix and bias."""

    weights: dict
    biases: dict
    in_dim: int
    hdim: int

    @classmethod
    def init(cls, in_dim: int, hdim: int, rng: np.random.Generator) -> "LstmUnit":
        bound = 1.0 / np.sqrt(hdim)
        weights = {g: T.parameter(rng.uniform(-bound, bound, (hdim, in_dim + hdim))) for g in GATES}
        biases = {g: T.parameter(np.zeros(hdim)) for g in GATES}
        return cls(weights, biases, in_dim, hdim)

    def parameters(self) -> list:
        return [self.weights[g] for g in GATES] + [self.biases[g] for g in GATES]


def init_states(hdim: int, mode: str = SHARED_FIXED, seed: int = 0, sample_index: int = 0):
    """Initial ``(h, c)``: N(0, 0.1^2) draws, shared by all samples or re-drawn per sample."""
    if hdim < 1:
        raise ValueError("hdim must be >= 1")
    if mode == SHARED_FIXED:
        rng = np.random.default_rng([seed, 0x5EED])
    elif mode == PER_SAMPLE_RANDOM:
        rng = np.random.default_rng([seed, 0x5EED, 1, int(sample_index)])
    else:
        raise ValueError(f"unknown state mode {mode!r}")
    return 0.1 * rng.standard_normal(hdim), 0.1 * rng.standard_normal(hdim)


def lstm_step(x: T.Value, state: tuple, unit: LstmUnit):
    """Standard LSTM cell; returns ``(o, (h', c'))`` with ``o = h'``."""
    h, c = (s if isinstance(s, T.Value) else T.constant(s) for s in state)
    if x.shape != (unit.in_dim,) or h.shape != (unit.hdim,) or c.shape != (unit.hdim,):
        raise T.ShapeError("lstm_step", x.shape, h.shape, c.shape,
                           detail=f"expected ({unit.in_dim},) and ({unit.hdim},)")
    xh = T.concat([x, h])
    pre = {g: T.add(T.matvec(unit.weights[g], xh), unit.biases[g]) for g in GATES}
    i = T.sigmoid(pre["input"])
    f = T.sigmoid(pre["forget"])
    o = T.sigmoid(pre["output"])
    g = T.tanh(pre["cell"])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, (h_new, c_new)


@dataclass
class ParamDecoder:
    """Affine map hdim -> d*(d+1), held as a (d*d)-row weight block and a d-row bias block."""

    w_proj: T.Value   # (d*d, hdim)
    w_bias: T.Value   # (d*d,)
    b_proj: T.Value   # (d, hdim)
    b_bias: T.Value   # (d,)
    d: int

    @classmethod
    def init(cls, d: int, hdim: int, rng: np.random.Generator, scale: float = 0.01) -> "ParamDecoder":
        std = scale / np.sqrt(hdim)
        return cls(T.parameter(rng.standard_normal((d * d, hdim)) * std),
                   T.parameter(np.zeros(d * d)),
                   T.parameter(rng.standard_normal((d, hdim)) * std),
                   T.parameter(np.zeros(d)),
                   d)

    def __call__(self, o: T.Value) -> BlockParams:
        flat = T.add(T.matvec(self.w_proj, o), self.w_bias)
        return BlockParams(T.reshape(flat, (self.d, self.d)), T.add(T.matvec(self.b_proj, o), self.b_bias))

    def parameters(self) -> list:
        return [self.w_proj, self.w_bias, self.b_proj, self.b_bias]


@dataclass
class GainLedger:
    gains: list = field(default_factory=list)   # one scalar Value per depth
    total: T.Value | None = None

    def values(self) -> list:
        return [g.item() for g in self.gains]


def greedy_forward(features: list, depths, unit: LstmUnit | None, decoders: list | None,
                   bank: PrototypeBank, classes: list, state: tuple,
                   clf: Classifier | None = None, static_blocks: list | None = None):
    """Run every modality's dynamic-depth network for one sample.

    ``classes[m]`` is the class index used for modality m's feature-level
    quality. With ``static_blocks`` (per modality, a list of BlockParams) the
    blocks use those parameters instead of the LSTM/decoder prediction.
    Returns ``(trace, ledger)``; ``trace.logits`` is set when ``clf`` is given.
    """
    depths = [int(d) for d in depths]
    n_mod = len(features)
    if len(depths) != n_mod or min(depths) < 1:
        raise ValueError(f"invalid depth plan {depths} for {n_mod} modalities")
    current = [f if isinstance(f, T.Value) else T.constant(f) for f in features]
    trace = ForwardTrace([[x] for x in current], [[] for _ in range(n_mod)], [[] for _ in range(n_mod)])
    quality = [feature_quality_value(x, bank, m, classes[m]) for m, x in enumerate(current)]
    ledger = GainLedger()
    total = None
    for t in range(max(depths)):
        active = [m for m in range(n_mod) if t < depths[m]]
        if static_blocks is None:
            o, state = lstm_step(T.concat(current), state, unit)
        per_mod = []
        for m in active:
            theta = static_blocks[m][t] if static_blocks is not None else decoders[m](o)
            nxt, q = block_forward(current[m], theta)
            q_new = feature_quality_value(nxt, bank, m, classes[m])
            per_mod.append(T.mean(T.relu(T.sub(q_new, quality[m]))))
            current[m], quality[m] = nxt, q_new
            trace.intermediates[m].append(nxt)
            trace.gates[m].append(q)
            trace.params[m].append(theta)
        gain = per_mod[0]
        for g in per_mod[1:]:
            gain = T.add(gain, g)
        gain = T.scale(gain, 1.0 / len(active))
        ledger.gains.append(gain)
        total = gain if total is None else T.add(total, gain)
    ledger.total = total
    if clf is not None:
        trace.logits = classify(current, clf, n_mod)
    return trace, ledger


def sparsity_loss(traces: list) -> T.Value:
    """Mean over samples of the summed L1 norms of every gate vector."""
    total = None
    for tr in traces:
        for gates in tr.gates:
            for q in gates:
                n = T.l1_norm(q)
                total = n if total is None else T.add(total, n)
    if total is None:
        return T.constant(0.0)
    return T.scale(total, 1.0 / len(traces))
