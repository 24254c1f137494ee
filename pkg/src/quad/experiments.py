"""Experiment drivers behind the command-line harness.

Every driver takes an :class:`ExperimentConfig`, derives all randomness from
its seeds and returns plain rows, so CSV output is a pure function of the
config. Noise placement follows ``noise_mode``:

* ``test``: train on clean data; corrupt the standardised test split.
* ``train``: corrupt the raw train and validation splits; test stays clean.
* ``both``: corrupt the raw data of every split before standardisation.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plots
from .config import ExperimentConfig
from .costs import model_cost
from .data import (DatasetSpec, MultimodalDataset, NoiseSpec, Splits, Standardizer, check_labels_seen,
                   generate_synthetic, inject_noise, read_tabular, split)
from .model import QuadModel, run_prototype_stage
from .nfce import SoftmaxRegression, modality_quality, noise_probe
from .training import evaluate, fit

log = logging.getLogger(__name__)

METRIC_ORDER = ("acc", "weighted_f1", "macro_f1", "f1", "auc", "mean_flops")


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("QUAD_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return path


# data ---------------------------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig) -> MultimodalDataset:
    if cfg.data == "tabular":
        delim = "\t" if cfg.delimiter in ("tab", "\\t") else cfg.delimiter
        return read_tabular(cfg.tabular_paths, cfg.label_path, delim, cfg.header)
    spec = DatasetSpec(cfg.modalities, cfg.classes, tuple(cfg.dims), cfg.n_samples, tuple(cfg.separation),
                       cfg.data_seed)
    return generate_synthetic(spec)


def noise_spec(cfg: ExperimentConfig, sigma: float, modalities=None) -> NoiseSpec:
    # one seed for every sigma: the same rows and the same unit draws, only the scale changes
    mods = cfg.noise_modalities if modalities is None else modalities
    return NoiseSpec(tuple(mods), float(sigma), cfg.noise_fraction, seed=cfg.seed * 1_000_003 + 101)


def _standardise(train, val, test) -> Splits:
    check_labels_seen(train, val)
    check_labels_seen(train, test)
    sc = Standardizer.fit(train)
    return Splits(sc.transform(train), sc.transform(val), sc.transform(test), sc)


def make_splits(raw: MultimodalDataset, cfg: ExperimentConfig, sigma: float = 0.0) -> Splits:
    """Split ``raw`` and place noise of scale ``sigma`` according to ``cfg.noise_mode``."""
    if cfg.noise_mode == "both" and sigma > 0:
        raw = inject_noise(raw, noise_spec(cfg, sigma))
    train, val, test = split(raw, cfg.split, cfg.seed)
    if cfg.noise_mode == "train" and sigma > 0:
        train = inject_noise(train, noise_spec(cfg, sigma))
        val = inject_noise(val, replace(noise_spec(cfg, sigma), seed=noise_spec(cfg, sigma).seed + 1))
    sp = _standardise(train, val, test)
    if cfg.noise_mode == "test" and sigma > 0:
        sp = replace(sp, test=inject_noise(sp.test, noise_spec(cfg, sigma)))
    return sp


def corrupt_test(test: MultimodalDataset, cfg: ExperimentConfig, sigma: float) -> MultimodalDataset:
    return inject_noise(test, noise_spec(cfg, sigma)) if sigma > 0 else test


# sweeps ---------------------------------------------------------------------------------

@dataclass
class CellResult:
    sigma: float
    variant: str
    status: str = "ok"
    metrics: dict = field(default_factory=dict)
    error: str = ""


@dataclass
class SweepResult:
    sigmas: tuple
    variants: tuple
    cells: list

    def cell(self, sigma: float, variant: str) -> CellResult:
        for c in self.cells:
            if c.sigma == sigma and c.variant == variant:
                return c
        raise KeyError((sigma, variant))

    def acc(self, sigma: float, variant: str) -> float:
        c = self.cell(sigma, variant)
        return c.metrics["acc"] if c.status == "ok" else float("nan")

    def rows(self) -> list:
        out = []
        for s in self.sigmas:
            for v in self.variants:
                c = self.cell(s, v)
                if c.status != "ok":
                    out.append((s, v, "acc", "", "failed: " + c.error.replace("\n", " ")))
                    continue
                keys = [k for k in METRIC_ORDER if k in c.metrics]
                keys += sorted(k for k in c.metrics if k not in METRIC_ORDER)
                out.extend((s, v, k, c.metrics[k], "ok") for k in keys)
        return out


def _cell_metrics(model: QuadModel, test: MultimodalDataset) -> dict:
    metrics = evaluate(model, test).as_dict()
    metrics.update({k: v for k, v in model_cost(model, test).as_dict().items() if k != "n_parameters"})
    return metrics


def _train_job(job):
    """Worker entry point: one training run evaluated at one or more test-noise levels."""
    cfg, variant, train_sigma, eval_sigmas, cell_dir = job
    results = []
    try:
        raw = load_dataset(cfg)
        sp = make_splits(raw, cfg, train_sigma if cfg.noise_mode != "test" else 0.0)
        model, hist = fit(sp, cfg.train.replace(variant=variant))
        if cell_dir is not None:
            Path(cell_dir).mkdir(parents=True, exist_ok=True)
            hist.write_csv(Path(cell_dir) / "history.csv")
        for s in eval_sigmas:
            test = corrupt_test(sp.test, cfg, s) if cfg.noise_mode == "test" else sp.test
            results.append(CellResult(s, variant, "ok", _cell_metrics(model, test)))
    except Exception as err:   # a failed cell is recorded and the sweep carries on
        log.warning("cell %s failed: %s", variant, err)
        results = [CellResult(s, variant, "failed", {}, f"{type(err).__name__}: {err}") for s in eval_sigmas]
    return results


def _run_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_train_job, jobs))


def run_grid(cfg: ExperimentConfig, sigmas, variants, out_dir=None, workers: int | None = None) -> SweepResult:
    """Train and evaluate every (sigma, variant) cell with shared seeds.

    With test-time noise the training data does not depend on sigma, so each
    variant is trained once and evaluated at every sigma.
    """
    sigmas, variants = tuple(float(s) for s in sigmas), tuple(variants)
    workers = num_workers() if workers is None else workers
    root = None if out_dir is None else Path(out_dir) / "cells"
    jobs = []
    for v in variants:
        if cfg.noise_mode == "test":
            jobs.append((cfg, v, 0.0, sigmas, None if root is None else root / v))
        else:
            jobs.extend((cfg, v, s, (s,), None if root is None else root / f"{v}_sigma{fmt(s)}") for s in sigmas)
    cells = [c for res in _run_jobs(jobs, workers) for c in res]
    return SweepResult(sigmas, variants, cells)


def write_sweep(result: SweepResult, out_dir, name: str, title: str) -> list:
    out = Path(out_dir)
    csv_path = write_rows(out / f"{name}.csv", ("sigma", "variant", "metric", "value", "status"), result.rows())
    series = {v: [(s, result.acc(s, v)) for s in result.sigmas] for v in result.variants}
    svg = plots.line_plot(out / f"{name}_accuracy.svg", series, title, "noise sigma", "test accuracy")
    written = [csv_path, svg]
    written += sorted(p for p in (out / "cells").rglob("*.csv")) if (out / "cells").exists() else []
    return written


# confidence probe ---------------------------------------------------------------------------

@dataclass
class ConfidenceProbe:
    methods: tuple
    clean: dict      # method -> (N, M) confidences from the clean-trained arm
    noisy: dict      # method -> (N, M) confidences from the noise-trained arm

    def shift(self, method: str) -> float:
        return float(np.mean(np.abs(self.clean[method] - self.noisy[method])))

    def rows(self) -> list:
        return [(m, float(self.clean[m].mean()), float(self.noisy[m].mean()), self.shift(m)) for m in self.methods]

    def report(self, sigma: float) -> str:
        lines = [f"confidence shift on a fixed clean test set, training noise sigma = {sigma:g}",
                 f"{'method':<10} {'clean':>7} {'noisy':>7} {'shift':>7}"]
        lines += [f"{m:<10} {c:7.3f} {n:7.3f} {s:7.3f}" for m, c, n, s in self.rows()]
        return "\n".join(lines) + "\n"


def probe_confidence(cfg: ExperimentConfig, sigma: float) -> ConfidenceProbe:
    """Confidence on one clean test set from estimators fitted on clean vs. noised training data.

    ``nfce`` and ``nfce-tcp`` read the prototype-based modality quality
    (predicted-class and true-class); ``cls-mcp`` and ``cls-tcp`` use a
    per-modality softmax regression.
    """
    raw = load_dataset(cfg)
    train, _, test = split(raw, cfg.split, cfg.seed)
    arms = {}
    for arm, tr in (("clean", train), ("noisy", inject_noise(train, noise_spec(cfg, sigma)) if sigma > 0 else train)):
        sc = Standardizer.fit(tr)
        tr_s, te_s = sc.transform(tr), sc.transform(test)
        bank = run_prototype_stage(tr_s, cfg.train)
        reg = SoftmaxRegression.fit(tr_s)
        arms[arm] = {
            "nfce-mcp": modality_quality(te_s, bank),
            "nfce-tcp": modality_quality(te_s, bank, use_label=True),
            "cls-mcp": reg.confidence(te_s, "mcp"),
            "cls-tcp": reg.confidence(te_s, "tcp"),
        }
    methods = ("nfce-mcp", "nfce-tcp", "cls-mcp", "cls-tcp")
    return ConfidenceProbe(methods, arms["clean"], arms["noisy"])


def write_confidence(probe: ConfidenceProbe, sigma: float, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_rows(out / "confidence.csv", ("method", "mean_clean", "mean_noisy", "mean_abs_shift"),
                          probe.rows())]
    report = out / "confidence_report.txt"
    report.write_text(probe.report(sigma), encoding="utf-8")
    written.append(report)
    for m in probe.methods:
        written.append(plots.histogram(out / f"confidence_{m}.svg",
                                       {"clean-trained": probe.clean[m].ravel().tolist(),
                                        f"sigma={sigma:g}-trained": probe.noisy[m].ravel().tolist()},
                                       20, 0.0, 1.0, f"test confidence ({m})", "confidence"))
    return written


# prototype denoising probe --------------------------------------------------------------------

@dataclass
class PrototypeTrajectory:
    epochs: list
    objective: list
    scores: list      # per epoch, (C, M) probe scores

    def mean_scores(self) -> np.ndarray:
        return np.array([s.mean() for s in self.scores])

    def rows(self) -> list:
        out = []
        for e, obj, s in zip(self.epochs, self.objective, self.scores):
            out.append((e, obj, float(s.mean()), *s.T.ravel().tolist()))
        return out


def probe_prototypes(cfg: ExperimentConfig, sigma: float) -> PrototypeTrajectory:
    """Run the prototype stage on sigma-noised synthetic data, probing prototypes against the clean means.

    The probe works in standardised space, where noise of raw scale sigma has
    per-coordinate scale ``sigma / std``.
    """
    if cfg.data != "synthetic":
        raise ValueError("the prototype probe needs synthetic data with known clean class means")
    if sigma <= 0:
        raise ValueError("the prototype probe needs sigma > 0")
    raw = inject_noise(load_dataset(cfg), noise_spec(cfg, sigma))
    train, _, _ = split(raw, cfg.split, cfg.seed)
    sc = Standardizer.fit(train)
    tr = sc.transform(train)
    probe_sigma = [sigma / sd for sd in sc.stds]
    traj = PrototypeTrajectory([], [], [])

    def record(epoch, bank):
        traj.epochs.append(epoch)
        traj.scores.append(noise_probe(bank, tr.centers, probe_sigma))

    bank = run_prototype_stage(tr, cfg.train, callback=record)
    if not traj.epochs:   # no optimisation budget: the trajectory is the initial state alone
        record(0, bank)
    traj.objective = list(bank.history[:len(traj.epochs)]) or [float("nan")]
    return traj


def write_trajectory(traj: PrototypeTrajectory, n_classes: int, n_modalities: int, out_dir) -> list:
    out = Path(out_dir)
    header = ["epoch", "objective", "probe_mean"] + [f"probe_c{c}_m{m}" for m in range(n_modalities)
                                                     for c in range(n_classes)]
    csv_path = write_rows(out / "prototype_probe.csv", header, traj.rows())
    svg = plots.line_plot(out / "prototype_probe.svg",
                          {"mean probe score": list(zip(traj.epochs, traj.mean_scores().tolist()))},
                          "prototype probe score during optimisation", "epoch", "score")
    return [csv_path, svg]


# depth and cost diagnostics ------------------------------------------------------------------------

def max_depth(model: QuadModel) -> int:
    return model.config.k + (1 if model.config.variant == "depth-plus-1" else 0)


def diagnose_depth(model: QuadModel, test: MultimodalDataset, cfg: ExperimentConfig, sigmas) -> list:
    """Rows ``(sigma, modality, mean depth, fraction at depth 1..Dmax)`` under test-time noise."""
    dmax = max_depth(model)
    rows = []
    for s in sigmas:
        depths = model.depth_plan(corrupt_test(test, cfg, float(s)))
        for m in range(model.n_modalities):
            col = depths[:, m]
            rows.append((float(s), m, float(col.mean()), *[float(np.mean(col == d)) for d in range(1, dmax + 1)]))
    return rows


def write_depth(rows: list, dmax: int, n_modalities: int, out_dir) -> list:
    out = Path(out_dir)
    header = ["sigma", "modality", "mean_depth"] + [f"frac_depth_{d}" for d in range(1, dmax + 1)]
    csv_path = write_rows(out / "depth.csv", header, rows)
    series = {f"modality {m}": [(r[0], r[2]) for r in rows if r[1] == m] for m in range(n_modalities)}
    svg = plots.line_plot(out / "depth.svg", series, "mean assigned depth under test noise", "noise sigma",
                          "mean depth")
    return [csv_path, svg]


def flops_rows(model: QuadModel, test: MultimodalDataset, cfg: ExperimentConfig, sigmas) -> list:
    rows = []
    for s in sigmas:
        rep = model_cost(model, corrupt_test(test, cfg, float(s)))
        rows.append((float(s), rep.mean_flops, rep.min_flops, rep.max_flops, *rep.mean_depth, rep.n_parameters))
    return rows


def write_flops(rows: list, n_modalities: int, out_dir) -> list:
    header = ["sigma", "mean_flops", "min_flops", "max_flops"] + [f"mean_depth_{m}" for m in range(n_modalities)]
    header.append("n_parameters")
    return [write_rows(Path(out_dir) / "flops.csv", header, rows)]
