"""``quad`` command-line harness.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
Every command appends a line to ``<out>/manifest.jsonl``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from . import plots
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .data import DataError, write_tabular
from .manifest import RunManifest
from .model import VARIANTS, load_model, save_model
from .tensor import NumericalError
from .training import fit

log = logging.getLogger("quad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _list(text: str) -> str:
    return ",".join(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="training, split and noise seed")
    common.add_argument("--out", type=Path, default=Path("quad-out"), help="output directory")
    common.add_argument("--sigma", type=_list, help="comma-separated noise levels")
    common.add_argument("--variant", type=_list, help="comma-separated variants: " + ", ".join(VARIANTS))
    common.add_argument("--k", type=int, help="maximum depth K")
    common.add_argument("--hdim", type=int, help="hypernetwork hidden size")
    common.add_argument("--model", type=Path, help="checkpoint from 'quad train'")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="quad", description="Quality-aware dynamic-depth multimodal classifier harness.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen-data": "write the configured dataset as delimiter-separated files",
        "train": "train one model and write a checkpoint, history and test metrics",
        "evaluate": "evaluate a checkpoint on the test split at each sigma",
        "sweep-noise": "train and evaluate every (sigma, variant) cell",
        "ablate": "compare variants across the sigma grid",
        "probe-confidence": "confidence shift of clean- vs noise-trained quality estimators",
        "probe-prototypes": "prototype probe scores during prototype optimisation",
        "diagnose-depth": "assigned depth per modality across test noise levels",
        "flops": "analytic per-sample FLOPs and parameter count",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.sigma:
        over["sigmas"] = args.sigma
    if args.variant:
        over["variants"] = args.variant
    if args.k is not None:
        over["k"] = args.k
    if args.hdim is not None:
        over["hdim"] = args.hdim
    cfg = apply_overrides(cfg, over)
    cfg.validate()
    return cfg


# commands: each returns the list of written artifact paths ------------------------------

def cmd_gen_data(cfg, args, out):
    return write_tabular(ex.load_dataset(cfg), out / "data", "\t" if cfg.delimiter in ("tab", "\\t") else cfg.delimiter)


def _metric_rows(sigma_metrics):
    rows = []
    for s, metrics in sigma_metrics:
        rows.extend((s, k, v) for k, v in metrics.items())
    return rows


def cmd_train(cfg, args, out):
    sp = ex.make_splits(ex.load_dataset(cfg), cfg, cfg.train_sigma)
    model, hist = fit(sp, cfg.train.replace(variant=cfg.variants[0]))
    save_model(model, out / "model.npz")
    hist.write_csv(out / "history.csv")
    metrics = ex._cell_metrics(model, sp.test)
    written = [out / "model.npz", out / "history.csv",
               ex.write_rows(out / "metrics.csv", ("sigma", "metric", "value"),
                             _metric_rows([(cfg.train_sigma, metrics)]))]
    print(f"best epoch {hist.best_epoch}, val acc {hist.best_val_acc:.3f}, test acc {metrics['acc']:.3f}")
    return written


def _model_and_test(cfg, args):
    sp = ex.make_splits(ex.load_dataset(cfg), cfg, 0.0)
    if args.model is not None:
        return load_model(args.model), sp.test
    log.info("no --model given; training one from the config")
    model, _ = fit(sp, cfg.train.replace(variant=cfg.variants[0]))
    return model, sp.test


def cmd_evaluate(cfg, args, out):
    if args.model is None:
        raise UsageError("evaluate needs --model")
    model, test = _model_and_test(cfg, args)
    rows = [(s, ex._cell_metrics(model, ex.corrupt_test(test, cfg, s))) for s in cfg.sigmas]
    for s, m in rows:
        print(f"sigma {s:g}: acc {m['acc']:.3f}")
    return [ex.write_rows(out / "metrics.csv", ("sigma", "metric", "value"), _metric_rows(rows))]


def _report_sweep(result):
    for s in result.sigmas:
        print(f"sigma {s:g}: " + ", ".join(f"{v} {result.acc(s, v):.3f}" for v in result.variants))
    failed = [c for c in result.cells if c.status != "ok"]
    for c in failed:
        log.warning("cell sigma=%g variant=%s failed: %s", c.sigma, c.variant, c.error)
    if failed and len(failed) == len(result.cells):
        raise NumericalError("every sweep cell failed")


def cmd_sweep_noise(cfg, args, out):
    result = ex.run_grid(cfg, cfg.sigmas, cfg.variants, out)
    written = ex.write_sweep(result, out, "sweep", "test accuracy under noise")
    _report_sweep(result)
    return written


def cmd_ablate(cfg, args, out):
    variants = cfg.variants if args.variant or len(cfg.variants) > 1 else VARIANTS
    result = ex.run_grid(cfg, cfg.sigmas, variants, out)
    written = ex.write_sweep(result, out, "ablation", "variant accuracy under noise")
    written.append(plots.bar_plot(out / "ablation_bars.svg", [f"sigma={s:g}" for s in result.sigmas],
                                  {v: [result.acc(s, v) for s in result.sigmas] for v in result.variants},
                                  "variant accuracy", "noise level", "test accuracy"))
    _report_sweep(result)
    return written


def _probe_sigma(cfg) -> float:
    return float(cfg.sigmas[-1])


def cmd_probe_confidence(cfg, args, out):
    sigma = _probe_sigma(cfg)
    probe = ex.probe_confidence(cfg, sigma)
    print(probe.report(sigma), end="")
    return ex.write_confidence(probe, sigma, out)


def cmd_probe_prototypes(cfg, args, out):
    sigma = _probe_sigma(cfg)
    traj = ex.probe_prototypes(cfg, sigma)
    scores = traj.mean_scores()
    print(f"probe score {scores[0]:.4f} -> {scores[-1]:.4f} over {traj.epochs[-1]} epochs")
    return ex.write_trajectory(traj, cfg.classes, cfg.modalities, out)


def cmd_diagnose_depth(cfg, args, out):
    model, test = _model_and_test(cfg, args)
    rows = ex.diagnose_depth(model, test, cfg, cfg.sigmas)
    for r in rows:
        print(f"sigma {r[0]:g} modality {r[1]}: mean depth {r[2]:.3f}")
    return ex.write_depth(rows, ex.max_depth(model), model.n_modalities, out)


def cmd_flops(cfg, args, out):
    model, test = _model_and_test(cfg, args)
    rows = ex.flops_rows(model, test, cfg, cfg.sigmas)
    for r in rows:
        print(f"sigma {r[0]:g}: {r[1]:.0f} FLOPs per sample, {r[-1]} parameters")
    return ex.write_flops(rows, model.n_modalities, out)


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate,
    "sweep-noise": cmd_sweep_noise, "ablate": cmd_ablate, "probe-confidence": cmd_probe_confidence,
    "probe-prototypes": cmd_probe_prototypes, "diagnose-depth": cmd_diagnose_depth, "flops": cmd_flops,
}


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args)
    out = args.out.resolve()
    out.mkdir(parents=True, exist_ok=True)
    written = COMMANDS[args.command](cfg, args, out)
    seeds = {"seed": cfg.seed, "data_seed": cfg.data_seed, "noise_seed": ex.noise_spec(cfg, 0.0).seed}
    manifest = RunManifest(args.command, cfg.snapshot(), seeds, ex.load_dataset(cfg).fingerprint(), str(out))
    manifest.add_all(written)
    manifest.append()
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except SystemExit as err:   # --help
        return int(err.code or 0)
    except (UsageError, ConfigError) as err:
        print(f"quad: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print(f"quad: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"quad: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"quad: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
