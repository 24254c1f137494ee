"""Prototype-based, classifier-free quality estimation.

Class-by-modality prototypes start as class means of encoded training features
and are then refined by gradient ascent on a robustness objective that rewards
cross-modality agreement within a class and angular separation between classes.
The refined prototypes serve as fixed references: a sample's modality-level
quality comes from a softmax over cosine similarities to the prototypes, its
feature-level quality from a per-coordinate softmax over negated absolute
distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import MultimodalDataset, MultimodalSample

INITIALIZED = "initialized-mu"
OPTIMIZED = "optimized-omega"
BANK_FORMAT = "quad-prototype-bank v1"


def softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class EncoderSet:
    """One dimension-preserving ``tanh(A x + b)`` encoder per modality.

    Each encoder is stored as a single ``(d + 1, d)`` matrix ``[A^T; b]`` so a
    whole batch is encoded with one matmul against ``[X, 1]``.
    """

    weights: list

    @classmethod
    def identity(cls, dims) -> "EncoderSet":
        return cls([np.vstack([np.eye(d), np.zeros((1, d))]) for d in dims])

    @property
    def dims(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights)

    def encode(self, m: int, x: np.ndarray) -> np.ndarray:
        w = self.weights[m]
        return np.tanh(x @ w[:-1] + w[-1])

    def encode_value(self, m: int, x: T.Value) -> T.Value:
        """Differentiable single-vector encoding with the weights held constant."""
        w = self.weights[m]
        return T.tanh(T.add(T.matvec(T.constant(w[:-1].T), x), T.constant(w[-1])))


@dataclass
class PrototypeBank:
    prototypes: list            # per modality, (C, d_m)
    encoders: EncoderSet
    stage: str = INITIALIZED
    history: list = field(default_factory=list)
    compare_encoded: bool = False

    @property
    def n_classes(self) -> int:
        return self.prototypes[0].shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.prototypes)

    @property
    def dims(self) -> tuple:
        return tuple(p.shape[1] for p in self.prototypes)

    def embed(self, m: int, x: np.ndarray) -> np.ndarray:
        return self.encoders.encode(m, x) if self.compare_encoded else np.asarray(x, dtype=float)

    def embed_value(self, m: int, x: T.Value) -> T.Value:
        return self.encoders.encode_value(m, x) if self.compare_encoded else x

    def save(self, path) -> None:
        save_bank(self, path)


def _class_average_matrix(labels: np.ndarray, n_classes: int) -> np.ndarray:
    avg = np.zeros((n_classes, len(labels)))
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            raise ValueError(f"class {c} has no training samples")
        avg[c, idx] = 1.0 / len(idx)
    return avg


def _augmented(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def init_prototypes(train: MultimodalDataset, encoders: EncoderSet | None = None,
                    compare_encoded: bool = False) -> PrototypeBank:
    """Class means of encoded training features."""
    if encoders is None:
        encoders = EncoderSet.identity(train.dims)
    avg = _class_average_matrix(train.labels, train.n_classes)
    protos = [avg @ encoders.encode(m, x) for m, x in enumerate(train.modalities)]
    return PrototypeBank(protos, encoders, INITIALIZED, [], compare_encoded)


def _pad_to(u: T.Value, width: int) -> T.Value:
    d = u.data.shape[1]
    if d == width:
        return u
    return T.matmul(u, T.constant(np.eye(d, width)))


def rob_objective(mus: list, mi: str = "cosine", encoded: list | None = None,
                  labels: np.ndarray | None = None, rng: np.random.Generator | None = None,
                  batch: int = 16) -> T.Value:
    """Robustness objective over per-modality prototype matrices ``mus[m]`` of shape (C, d_m).

    The first term rewards agreement between modalities of the same class; with
    ``mi="cosine"`` it is the cosine between paired prototypes, with
    ``mi="infonce"`` an InfoNCE estimate over per-class batches of encoded
    samples. The second term is the mean log-softmax of each prototype's
    self-similarity against its similarities to the other classes' prototypes.
    """
    n_mod = len(mus)
    n_cls = mus[0].data.shape[0]
    units = [T.normalize_rows(mu) for mu in mus]
    width = max(u.data.shape[1] for u in units)
    padded = [_pad_to(u, width) for u in units]

    terms = []
    if n_mod > 1:
        agree = []
        for i in range(n_mod):
            for j in range(n_mod):
                if i == j:
                    continue
                if mi == "cosine":
                    agree.append(T.sum_(T.mul(padded[i], padded[j])))
                elif mi == "infonce":
                    agree.append(_infonce(encoded, labels, i, j, width, n_cls, rng, batch))
                else:
                    raise ValueError(f"unknown mutual-information surrogate {mi!r}")
        total = agree[0]
        for a in agree[1:]:
            total = T.add(total, a)
        terms.append(T.scale(total, 1.0 / (n_cls * n_mod * n_mod)))

    eye = T.constant(np.eye(n_cls))
    sep = None
    for u in units:
        sims = T.matmul(u, T.transpose(u))
        logp = T.log(T.softmax(sims))
        s = T.sum_(T.mul(logp, eye))
        sep = s if sep is None else T.add(sep, s)
    terms.append(T.scale(sep, 1.0 / (n_cls * n_mod)))
    return terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])


def _infonce(encoded, labels, i, j, width, n_cls, rng, batch) -> T.Value:
    if encoded is None or labels is None:
        raise ValueError("the infonce surrogate needs encoded samples and labels")
    rng = rng or np.random.default_rng(0)
    total = None
    for c in range(n_cls):
        idx = np.flatnonzero(labels == c)
        take = np.sort(rng.choice(idx, size=min(batch, len(idx)), replace=False))
        sel = np.zeros((len(take), len(labels)))
        sel[np.arange(len(take)), take] = 1.0
        hi = _pad_to(T.normalize_rows(T.matmul(T.constant(sel), encoded[i])), width)
        hj = _pad_to(T.normalize_rows(T.matmul(T.constant(sel), encoded[j])), width)
        logits = T.matmul(hi, T.transpose(hj))
        logp = T.log(T.softmax(logits))
        k = len(take)
        est = T.add(T.scale(T.sum_(T.mul(logp, T.constant(np.eye(k)))), 1.0 / k),
                    T.constant(np.log(k)))
        total = est if total is None else T.add(total, est)
    return total


def optimize_prototypes(bank: PrototypeBank, train: MultimodalDataset, epochs: int = 200,
                        lr: float = 1e-3, tol: float = 1e-7, mi: str = "cosine",
                        seed: int = 0,
                        callback: Callable[[int, PrototypeBank], None] | None = None) -> PrototypeBank:
    """Adam ascent on the robustness objective, back-propagated through the class means.

    The encoders are the free parameters; prototypes are recomputed from them
    every epoch. ``callback(epoch, bank)`` sees the bank before each update
    (epoch 0 is the initial state) and once more after the final one.
    """
    if bank.stage != INITIALIZED:
        raise ValueError(f"prototype bank already in stage {bank.stage!r}")
    avg = T.constant(_class_average_matrix(train.labels, train.n_classes))
    xs = [T.constant(_augmented(x)) for x in train.modalities]
    params = [T.parameter(w) for w in bank.encoders.weights]
    state = T.AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    history: list[float] = []

    def forward():
        encoded = [T.tanh(T.matmul(x, p)) for x, p in zip(xs, params)]
        mus = [T.matmul(avg, h) for h in encoded]
        return mus, rob_objective(mus, mi, encoded, train.labels, rng)

    def snapshot(mus) -> PrototypeBank:
        return PrototypeBank([mu.data.copy() for mu in mus],
                             EncoderSet([p.data.copy() for p in params]),
                             INITIALIZED, list(history), bank.compare_encoded)

    for epoch in range(epochs):
        mus, obj = forward()
        val = obj.item()
        if not np.isfinite(val):
            raise T.NumericalError(f"robustness objective became {val} at epoch {epoch}; "
                                   f"last finite values {history[-3:]}")
        history.append(val)
        if callback is not None:
            callback(epoch, snapshot(mus))
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break
        T.zero_grad(params)
        T.backward(T.neg(obj))
        T.adam_step(params, state)
    else:
        mus, obj = forward()
        history.append(obj.item())
        if callback is not None:
            callback(epochs, snapshot(mus))

    out = snapshot(mus)
    out.history = history
    out.stage = OPTIMIZED
    return out


# quality estimation ---------------------------------------------------------------

def _check_dim(bank: PrototypeBank, m: int, x) -> None:
    if np.shape(x)[-1] != bank.dims[m]:
        raise ValueError(f"modality {m}: input dimension {np.shape(x)[-1]} != prototype dimension {bank.dims[m]}")


def cosine_to_prototypes(z: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``z`` (or of a single vector) with each prototype row."""
    pn = np.sqrt((protos * protos).sum(axis=1)) + T.COSINE_EPS
    zn = np.sqrt((z * z).sum(axis=-1, keepdims=True)) + T.COSINE_EPS
    return (z @ protos.T) / (zn * pn)


def modality_probs(x: np.ndarray, bank: PrototypeBank, m: int) -> np.ndarray:
    """Softmax over classes of cosine similarity to modality ``m``'s prototypes."""
    _check_dim(bank, m, x)
    return softmax_np(cosine_to_prototypes(bank.embed(m, x), bank.prototypes[m]))


def feature_probs(x: np.ndarray, bank: PrototypeBank, m: int) -> np.ndarray:
    """``(d, C)``: per coordinate, softmax over classes of the negated distance to each prototype."""
    _check_dim(bank, m, x)
    z = bank.embed(m, np.asarray(x, dtype=float))
    return softmax_np(-np.abs(z[:, None] - bank.prototypes[m].T))


def true_class_prob(p: np.ndarray, label: int | None = None, reference: np.ndarray | None = None):
    """Probability at the true class, or at the argmax of ``reference`` (default ``p``) without a label."""
    p = np.asarray(p, dtype=float)
    n_cls = p.shape[-1]
    if label is None:
        ref = p if reference is None else np.asarray(reference)
        if ref.ndim != 1:
            raise ValueError("inference-mode class selection needs a single probability vector")
        label = int(np.argmax(ref))
    elif not 0 <= label < n_cls:
        raise ValueError(f"label {label} out of range for {n_cls} classes")
    return p[..., label]


@dataclass
class QualityReport:
    modality_quality: np.ndarray     # (M,)
    feature_quality: list            # M arrays of shape (d_m,)
    class_probs_v: list              # M arrays of shape (C,)
    class_probs_f: list              # M arrays of shape (d_m, C)


def estimate_quality(sample: MultimodalSample, bank: PrototypeBank, use_label: bool = False) -> QualityReport:
    pv, pf, dv, df = [], [], [], []
    label = sample.label if use_label else None
    for m, x in enumerate(sample.features):
        p = modality_probs(x, bank, m)
        f = feature_probs(x, bank, m)
        pv.append(p)
        pf.append(f)
        dv.append(float(true_class_prob(p, label)))
        df.append(true_class_prob(f, label, reference=p))
    return QualityReport(np.array(dv), df, pv, pf)


def modality_quality(dataset: MultimodalDataset, bank: PrototypeBank, use_label: bool = False) -> np.ndarray:
    """Vectorised modality-level quality, shape (N, M)."""
    out = np.empty((len(dataset), dataset.n_modalities))
    for m, x in enumerate(dataset.modalities):
        _check_dim(bank, m, x)
        p = softmax_np(cosine_to_prototypes(bank.embed(m, x), bank.prototypes[m]))
        cls = dataset.labels if use_label else p.argmax(axis=1)
        out[:, m] = p[np.arange(len(p)), cls]
    return out


def predicted_classes(sample: MultimodalSample, bank: PrototypeBank) -> list:
    """Per modality, the argmax class of the modality-level probabilities."""
    return [int(np.argmax(modality_probs(x, bank, m))) for m, x in enumerate(sample.features)]


def feature_quality_value(feat: T.Value, bank: PrototypeBank, m: int, cls: int) -> T.Value:
    """Differentiable feature-level quality of ``feat`` at class ``cls``."""
    d = feat.data.shape[0]
    z = bank.embed_value(m, feat)
    n_cls = bank.n_classes
    spread = T.matmul(T.reshape(z, (d, 1)), T.constant(np.ones((1, n_cls))))
    probs = T.softmax(T.neg(T.abs_(T.sub(spread, T.constant(bank.prototypes[m].T)))))
    onehot = np.zeros((n_cls, 1))
    onehot[cls, 0] = 1.0
    return T.reshape(T.matmul(probs, T.constant(onehot)), (d,))


def noise_probe(bank: PrototypeBank, clean_means, sigma) -> np.ndarray:
    """(C, M) scores: mean over coordinates of exp(-r^2 / 2 sigma^2), r = prototype - clean mean.

    ``sigma`` is a scalar, or one entry per modality holding a scalar or a
    per-coordinate array (noise added in raw units has a different scale on
    each standardised coordinate).
    """
    n_mod = bank.n_modalities
    sigmas = list(sigma) if isinstance(sigma, (list, tuple)) or np.ndim(sigma) > 0 else [sigma] * n_mod
    if len(sigmas) != n_mod:
        raise ValueError(f"expected {n_mod} sigma entries, got {len(sigmas)}")
    out = np.empty((bank.n_classes, n_mod))
    for m, (proto, clean, sg) in enumerate(zip(bank.prototypes, clean_means, sigmas)):
        sg = np.asarray(sg, dtype=float)
        if np.any(sg <= 0):
            raise ValueError("sigma must be positive")
        r = proto - clean
        out[:, m] = np.exp(-(r * r) / (2.0 * sg * sg)).mean(axis=1)
    return out


# persistence ---------------------------------------------------------------------

def save_bank(bank: PrototypeBank, path) -> None:
    """Plain-text matrix file: a header line, then one dims line and row-major values per matrix."""
    lines = [f"# {BANK_FORMAT}",
             f"stage {bank.stage}",
             f"compare_encoded {int(bank.compare_encoded)}",
             f"modalities {bank.n_modalities}"]
    for kind, mats in (("prototype", bank.prototypes), ("encoder", bank.encoders.weights)):
        for m, a in enumerate(mats):
            lines.append(f"{kind} {m} {a.shape[0]} {a.shape[1]}")
            lines.append(" ".join(repr(float(v)) for v in a.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bank(path) -> PrototypeBank:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# {BANK_FORMAT}":
        raise ValueError(f"{path}: not a prototype bank file")
    stage = lines[1].split()[1]
    compare = bool(int(lines[2].split()[1]))
    n_mod = int(lines[3].split()[1])
    mats: dict = {"prototype": [None] * n_mod, "encoder": [None] * n_mod}
    i = 4
    while i < len(lines):
        kind, m, r, c = lines[i].split()
        vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        mats[kind][int(m)] = vals.reshape(int(r), int(c))
        i += 2
    return PrototypeBank(mats["prototype"], EncoderSet(mats["encoder"]), stage, [], compare)


# classifier-based confidence baseline ----------------------------------------------------

@dataclass
class SoftmaxRegression:
    """Per-modality multinomial logistic regression, trained full-batch with Adam."""

    weights: list = field(default_factory=list)   # per modality, (d_m + 1, C)

    @classmethod
    def fit(cls, train: MultimodalDataset, epochs: int = 300, lr: float = 0.05,
            l2: float = 1e-4) -> "SoftmaxRegression":
        ws = []
        y = np.eye(train.n_classes)[train.labels]
        for x in train.modalities:
            xa = _augmented(x)
            w = T.parameter(np.zeros((xa.shape[1], train.n_classes)))
            state = T.AdamState(lr=lr)
            for _ in range(epochs):
                p = softmax_np(xa @ w.data)
                w.grad = xa.T @ (p - y) / len(xa) + l2 * w.data
                T.adam_step([w], state)
            ws.append(w.data.copy())
        return cls(ws)

    def probs(self, m: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return softmax_np(_augmented(x) @ self.weights[m])

    def confidence(self, dataset: MultimodalDataset, kind: str = "mcp") -> np.ndarray:
        """(N, M) maximum-class (``mcp``) or true-class (``tcp``) probabilities."""
        out = np.empty((len(dataset), dataset.n_modalities))
        for m, x in enumerate(dataset.modalities):
            p = self.probs(m, x)
            cls = p.argmax(axis=1) if kind == "mcp" else dataset.labels
            out[:, m] = p[np.arange(len(p)), cls]
        return out
