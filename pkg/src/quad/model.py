"""The assembled dynamic multimodal classifier and its checkpoint format."""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import BlockParams, Classifier
from .data import MultimodalDataset
from .gcnd import DepthNormalizer, assign_depths, fit_normalizer, shift_depths
from .lgp import SHARED_FIXED, LstmUnit, ParamDecoder, greedy_forward, init_states
from .nfce import (EncoderSet, PrototypeBank, SoftmaxRegression, cosine_to_prototypes, init_prototypes,
                   modality_quality, optimize_prototypes, softmax_np)

VARIANTS = ("full", "wo-gcnd", "wo-lgp", "depth-minus-1", "depth-plus-1", "cls-confidence")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    k: int = 3
    hdim: int = 64
    proto_epochs: int = 200
    proto_lr: float = 1e-3
    epochs: int = 100
    lr: float = 1e-4
    decay_every: int = 50
    decay_factor: float = 0.5
    batch_size: int = 32
    patience: int = 30
    seed: int = 0
    use_gain: bool = True
    use_sparsity: bool = True
    gain_label_mode: bool = False
    depth_label_mode: bool = False
    state_mode: str = SHARED_FIXED
    mi: str = "cosine"
    compare_encoded: bool = False
    variant: str = "full"

    def validate(self) -> None:
        for name in ("k", "hdim", "epochs", "batch_size", "decay_every", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.proto_epochs < 0:
            raise ValueError("proto_epochs must be >= 0")
        if self.lr <= 0 or self.proto_lr <= 0 or self.decay_factor <= 0:
            raise ValueError("learning rates and decay factor must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    def replace(self, **changes) -> "TrainConfig":
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


class QuadModel:
    """Prototype bank + depth normalizer + hypernetwork (or static blocks) + classifier."""

    def __init__(self, config: TrainConfig, bank: PrototypeBank, normalizer: DepthNormalizer,
                 n_classes: int, dims: tuple, confidence: SoftmaxRegression | None = None):
        config.validate()
        self.config = config
        self.bank = bank
        self.normalizer = normalizer
        self.n_classes = n_classes
        self.dims = tuple(dims)
        self.confidence = confidence
        rng = np.random.default_rng([config.seed, 7])
        hdim = config.hdim
        self.unit = LstmUnit.init(sum(self.dims), hdim, rng)
        self.decoders = [ParamDecoder.init(d, hdim, rng) for d in self.dims]
        self.clf = Classifier.init(n_classes, sum(self.dims), rng)
        self.static_blocks = None
        if config.variant == "wo-lgp":
            self.static_blocks = [
                [BlockParams(T.parameter(rng.standard_normal((d, d)) * 0.01 / np.sqrt(d)),
                             T.parameter(np.zeros(d))) for _ in range(config.k + 1)]
                for d in self.dims]
        self.h0, self.c0 = init_states(hdim, SHARED_FIXED, config.seed)

    @property
    def n_modalities(self) -> int:
        return len(self.dims)

    def parameters(self) -> list:
        params = list(self.clf.parameters())
        if self.static_blocks is not None:
            for blocks in self.static_blocks:
                for b in blocks:
                    params += [b.W, b.b]
        else:
            params += self.unit.parameters()
            for dec in self.decoders:
                params += dec.parameters()
        return params

    # depth and class selection --------------------------------------------------

    def quality(self, dataset: MultimodalDataset, use_label: bool = False) -> np.ndarray:
        """(N, M) modality-level quality driving the depth plan."""
        if self.config.variant == "cls-confidence":
            return self.confidence.confidence(dataset, "tcp" if use_label else "mcp")
        return modality_quality(dataset, self.bank, use_label)

    def depth_plan(self, dataset: MultimodalDataset, use_label: bool = False) -> np.ndarray:
        k = self.config.k
        variant = self.config.variant
        if variant == "wo-gcnd":
            return np.full((len(dataset), self.n_modalities), k, dtype=np.int64)
        depths = assign_depths(self.quality(dataset, use_label), self.normalizer)
        if variant == "depth-minus-1":
            depths = shift_depths(depths, -1)
        elif variant == "depth-plus-1":
            depths = shift_depths(depths, +1, k)
        return depths

    def quality_classes(self, dataset: MultimodalDataset, use_label: bool = False) -> np.ndarray:
        """(N, M) class index at which feature-level quality is read."""
        if use_label:
            return np.repeat(dataset.labels[:, None], self.n_modalities, axis=1)
        out = np.empty((len(dataset), self.n_modalities), dtype=np.int64)
        for m, x in enumerate(dataset.modalities):
            out[:, m] = cosine_to_prototypes(self.bank.embed(m, x), self.bank.prototypes[m]).argmax(axis=1)
        return out

    def initial_state(self, sample_index: int = 0):
        if self.config.state_mode == SHARED_FIXED:
            return self.h0, self.c0
        return init_states(self.config.hdim, self.config.state_mode, self.config.seed, sample_index)

    # forward ---------------------------------------------------------------------

    def forward(self, features, depths, classes, sample_index: int = 0):
        return greedy_forward(features, depths, self.unit, self.decoders, self.bank, list(classes),
                              self.initial_state(sample_index), self.clf, self.static_blocks)

    @contextmanager
    def frozen(self):
        """Temporarily stop recording graphs for the model parameters."""
        params = self.parameters()
        saved = [(p.requires_grad, p._grad) for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield
        finally:
            for p, (flag, grad) in zip(params, saved):
                p.requires_grad, p._grad = flag, grad

    def run(self, dataset: MultimodalDataset, depths: np.ndarray | None = None):
        """Inference over a dataset: returns (logits (N, C), depths (N, M), traces)."""
        depths = self.depth_plan(dataset) if depths is None else depths
        classes = self.quality_classes(dataset)
        logits = np.empty((len(dataset), self.n_classes))
        traces = []
        with self.frozen():
            for i in range(len(dataset)):
                feats = [x[i] for x in dataset.modalities]
                trace, ledger = self.forward(feats, depths[i], classes[i], i)
                logits[i] = trace.logits.data
                traces.append((trace, ledger))
        return logits, depths, traces

    def predict_proba(self, dataset: MultimodalDataset) -> np.ndarray:
        return softmax_np(self.run(dataset)[0])

    def predict(self, dataset: MultimodalDataset) -> np.ndarray:
        return self.run(dataset)[0].argmax(axis=1)

    def predicted_params(self, dataset: MultimodalDataset, modality: int, depth: int = 1) -> np.ndarray:
        """(N, d*(d+1)) flattened block parameters at ``depth`` for ``modality`` (samples too shallow get NaN)."""
        _, _, traces = self.run(dataset)
        d = self.dims[modality]
        out = np.full((len(dataset), d * (d + 1)), np.nan)
        for i, (trace, _) in enumerate(traces):
            blocks = trace.params[modality]
            if len(blocks) >= depth:
                th = blocks[depth - 1]
                out[i] = np.concatenate([th.W.data.reshape(-1), th.b.data])
        return out

    # parameter snapshots ---------------------------------------------------------

    def state_arrays(self) -> list:
        return [p.data.copy() for p in self.parameters()]

    def load_state_arrays(self, arrays: list) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise T.ShapeError("load_state", p.data.shape, a.shape)
            p.data[...] = a

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def run_prototype_stage(train: MultimodalDataset, config: TrainConfig, callback=None) -> PrototypeBank:
    bank = init_prototypes(train, EncoderSet.identity(train.dims), config.compare_encoded)
    if config.proto_epochs == 0:
        bank.stage = "optimized-omega"
        return bank
    return optimize_prototypes(bank, train, config.proto_epochs, config.proto_lr, mi=config.mi,
                               seed=config.seed, callback=callback)


def build_model(train: MultimodalDataset, config: TrainConfig, bank: PrototypeBank | None = None) -> QuadModel:
    """Prototype stage (unless a bank is supplied), then fit the depth normalizer on training quality."""
    config.validate()
    if bank is None:
        bank = run_prototype_stage(train, config)
    confidence = None
    if config.variant == "cls-confidence":
        confidence = SoftmaxRegression.fit(train)
        pool = confidence.confidence(train, "tcp" if config.depth_label_mode else "mcp")
    else:
        pool = modality_quality(train, bank, config.depth_label_mode)
    normalizer = fit_normalizer(pool, config.k)
    return QuadModel(config, bank, normalizer, train.n_classes, train.dims, confidence)


# checkpoints ---------------------------------------------------------------------

def save_model(model: QuadModel, path) -> None:
    arrays = {f"param_{i}": a for i, a in enumerate(model.state_arrays())}
    for m, (p, w) in enumerate(zip(model.bank.prototypes, model.bank.encoders.weights)):
        arrays[f"prototype_{m}"] = p
        arrays[f"encoder_{m}"] = w
    if model.confidence is not None:
        for m, w in enumerate(model.confidence.weights):
            arrays[f"confidence_{m}"] = w
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "config_hash": model.config.digest(),
        "normalizer": model.normalizer.to_dict(),
        "n_classes": model.n_classes,
        "dims": list(model.dims),
        "bank_stage": model.bank.stage,
        "compare_encoded": model.bank.compare_encoded,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> QuadModel:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        config = TrainConfig.from_dict(meta["config"])
        if config.digest() != meta["config_hash"]:
            raise ValueError(f"{path}: config hash mismatch")
        n_mod = len(meta["dims"])
        bank = PrototypeBank([z[f"prototype_{m}"] for m in range(n_mod)],
                             EncoderSet([z[f"encoder_{m}"] for m in range(n_mod)]),
                             meta["bank_stage"], [], meta["compare_encoded"])
        confidence = None
        if "confidence_0" in z.files:
            confidence = SoftmaxRegression([z[f"confidence_{m}"] for m in range(n_mod)])
        nm = meta["normalizer"]
        model = QuadModel(config, bank, DepthNormalizer(nm["v_min"], nm["v_max"], nm["k"]),
                          meta["n_classes"], tuple(meta["dims"]), confidence)
        n_params = len(model.parameters())
        model.load_state_arrays([z[f"param_{i}"] for i in range(n_params)])
    return model
