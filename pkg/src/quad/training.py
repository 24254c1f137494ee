"""Two-stage training, metrics and ablation variants."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .data import MultimodalDataset, Splits
from .lgp import sparsity_loss
from .model import QuadModel, TrainConfig, build_model
from .nfce import OPTIMIZED, PrototypeBank

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "loss", "loss_task", "gain", "loss_sparsity", "val_acc")


class TrainingDiverged(T.NumericalError):
    def __init__(self, msg, model, history):
        super().__init__(msg)
        self.model = model
        self.history = history


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")
    stopped_early: bool = False

    def write_csv(self, path, delimiter: str = ",") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [f"{r[c]:.10g}" for c in HISTORY_COLUMNS[1:]])


def batch_loss(model: QuadModel, dataset: MultimodalDataset, idx, depths, classes):
    """Mean cross-entropy, mean quality gain and sparsity over a batch; returns (loss, parts)."""
    cfg = model.config
    task = gain = None
    traces = []
    for i in idx:
        feats = [x[i] for x in dataset.modalities]
        trace, ledger = model.forward(feats, depths[i], classes[i], int(i))
        ce = T.cross_entropy(trace.logits, int(dataset.labels[i]))
        task = ce if task is None else T.add(task, ce)
        gain = ledger.total if gain is None else T.add(gain, ledger.total)
        traces.append(trace)
    n = len(idx)
    task = T.scale(task, 1.0 / n)
    gain = T.scale(gain, 1.0 / n)
    sparse = sparsity_loss(traces)
    loss = task
    if cfg.use_gain:
        loss = T.sub(loss, gain)
    if cfg.use_sparsity:
        loss = T.add(loss, sparse)
    return loss, (task.item(), gain.item(), sparse.item())


def accuracy(model: QuadModel, dataset: MultimodalDataset) -> float:
    return float(np.mean(model.predict(dataset) == dataset.labels))


def train(model: QuadModel, splits: Splits, config: TrainConfig | None = None) -> History:
    """Main stage: Adam with step decay on L_task - gain + L_sparsity, keeping the best-validation weights."""
    cfg = config or model.config
    if model.bank.stage != OPTIMIZED:
        raise RuntimeError("prototype stage must finish before the main stage")
    tr = splits.train
    rng = np.random.default_rng([cfg.seed, 11])
    depths = model.depth_plan(tr, cfg.depth_label_mode)
    classes = model.quality_classes(tr, cfg.gain_label_mode)
    params = model.parameters()
    state = T.AdamState(lr=cfg.lr)
    hist = History()
    best = model.state_arrays()
    last_good = best
    since_best = 0
    for epoch in range(cfg.epochs):
        state.lr = T.step_decay(cfg.lr, epoch, cfg.decay_every, cfg.decay_factor)
        order = rng.permutation(len(tr))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, parts = batch_loss(model, tr, idx, depths, classes)
            val = loss.item()
            if not np.isfinite(val):
                model.load_state_arrays(last_good)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", model, hist)
            T.zero_grad(params)
            T.backward(loss)
            T.adam_step(params, state)
            sums += len(idx) * np.array((val,) + parts)
        last_good = model.state_arrays()
        means = sums / len(tr)
        val_acc = accuracy(model, splits.val) if len(splits.val) else float("nan")
        hist.rows.append(dict(zip(HISTORY_COLUMNS, (epoch, *means, val_acc))))
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, means[0], val_acc)
        # ties move the checkpoint to the later (further trained) weights but do not reset patience
        improved = hist.best_epoch < 0 or val_acc > hist.best_val_acc
        if improved or val_acc == hist.best_val_acc:
            hist.best_epoch, hist.best_val_acc = epoch, val_acc
            best = last_good
        since_best = 0 if improved else since_best + 1
        if since_best >= cfg.patience:
            hist.stopped_early = True
            break
    model.load_state_arrays(best)
    return hist


def fit(splits: Splits, config: TrainConfig, bank: PrototypeBank | None = None):
    """Both stages end to end; returns (model, history)."""
    model = build_model(splits.train, config, bank)
    return model, train(model, splits, config)


# metrics ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float
    weighted_f1: float
    macro_f1: float
    confusion: np.ndarray
    f1: float | None = None
    auc: float | None = None

    def as_dict(self) -> dict:
        out = {"acc": self.acc, "weighted_f1": self.weighted_f1, "macro_f1": self.macro_f1}
        if self.f1 is not None:
            out["f1"] = self.f1
        if self.auc is not None:
            out["auc"] = self.auc
        return out


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    denom = pred + true
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def roc_auc(y_true, score) -> float:
    """Binary AUC from the Mann-Whitney rank statistic (ties get mid-ranks)."""
    y = np.asarray(y_true)
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("AUC is defined for binary labels only")
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(score)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def metrics_from_predictions(y_true, y_pred, n_classes: int, score=None) -> MetricsReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    f1s = per_class_f1(cm)
    support = cm.sum(axis=1)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan")
    weighted = float((f1s * support).sum() / support.sum()) if support.sum() else float("nan")
    present = support > 0
    macro = float(f1s[present].mean()) if present.any() else float("nan")
    f1 = auc = None
    if n_classes == 2:
        f1 = float(f1s[1])
        if score is not None:
            auc = roc_auc(y_true, score)
    return MetricsReport(acc, weighted, macro, cm, f1, auc)


def evaluate(model: QuadModel, dataset: MultimodalDataset, auc: bool | None = None) -> MetricsReport:
    """ACC / weighted F1 / macro F1, plus binary F1 and AUC when C == 2."""
    if auc and model.n_classes > 2:
        raise ValueError(f"AUC requested for {model.n_classes} classes; it is defined for binary tasks only")
    logits = model.run(dataset)[0]
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    score = probs[:, 1] if model.n_classes == 2 else None
    return metrics_from_predictions(dataset.labels, logits.argmax(axis=1), model.n_classes, score)


def ablate(tag: str, splits: Splits, config: TrainConfig, bank: PrototypeBank | None = None):
    """Train the named variant under ``config``'s seeds and report test metrics; returns (report, model)."""
    cfg = config.replace(variant=tag)
    cfg.validate()
    model, _ = fit(splits, cfg, bank)
    return evaluate(model, splits.test), model
