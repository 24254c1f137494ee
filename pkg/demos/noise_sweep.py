"""Accuracy of the full model and the static-block ablation across test noise.

Each variant is trained once on clean data and evaluated at every noise level;
the tidy CSV and an SVG line plot land in ./demo-out/sweep.
"""

from quad import experiments as ex
from quad.config import ExperimentConfig, apply_overrides

cfg = apply_overrides(ExperimentConfig(), {
    "dims": "8,8,8", "n_samples": 600, "separation": "1,1,1", "split": "0.3,0.1,0.6",
    "noise_fraction": 0.5, "hdim": 16, "epochs": 15,
})
result = ex.run_grid(cfg, (0.0, 5.0, 10.0), ("full", "wo-lgp"), out_dir="demo-out/sweep")
for path in ex.write_sweep(result, "demo-out/sweep", "sweep", "test accuracy under noise"):
    print("wrote", path)
for v in result.variants:
    accs = [f"{result.acc(s, v):.3f}" for s in result.sigmas]
    print(f"{v:>7}: " + "  ".join(accs))
