"""Per-sample FLOPs follow the assigned depths, so noisier inputs cost more.

Trains a small model briefly and prints the analytic cost at several noise levels.
"""

from quad import experiments as ex
from quad.config import ExperimentConfig, apply_overrides
from quad.costs import block_flops
from quad.training import fit

print("one gated block on a 4-dim modality:", block_flops(4), "FLOPs")

cfg = apply_overrides(ExperimentConfig(), {"dims": "16,16,16", "n_samples": 600, "epochs": 2, "hdim": 16})
splits = ex.make_splits(ex.load_dataset(cfg), cfg)
model, _ = fit(splits, cfg.train)
for row in ex.flops_rows(model, splits.test, cfg, (0.0, 1.0, 5.0)):
    sigma, mean, lo, hi, *depths, n_params = row
    print(f"sigma {sigma:>4}: mean {mean:,.0f} FLOPs (min {lo:,}, max {hi:,}), "
          f"mean depth {[round(d, 2) for d in depths]}, {n_params:,} parameters")
