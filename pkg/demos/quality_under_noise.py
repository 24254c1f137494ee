"""How prototype-based quality reacts when one modality is corrupted.

Builds a small synthetic set, refines the class prototypes on the training
split, then reads the modality-level quality and the assigned depth of each
test sample before and after Gaussian noise hits modality 0.
"""

import numpy as np

from quad.data import DatasetSpec, NoiseSpec, generate_synthetic, inject_noise, prepare
from quad.gcnd import assign_depths, fit_normalizer
from quad.model import TrainConfig, run_prototype_stage
from quad.nfce import modality_quality

splits = prepare(generate_synthetic(DatasetSpec(3, 4, (16, 16, 16), 600, (6.0, 6.0, 6.0), 0)), (0.6, 0.2, 0.2), 0)
bank = run_prototype_stage(splits.train, TrainConfig(proto_epochs=100))
norm = fit_normalizer(modality_quality(splits.train, bank), k=3)
print(f"prototype objective {bank.history[0]:.3f} -> {bank.history[-1]:.3f}")

for sigma in (0.0, 1.0, 3.0, 5.0):
    test = splits.test if sigma == 0 else inject_noise(splits.test, NoiseSpec((0,), sigma, 1.0, seed=1))
    q = modality_quality(test, bank)
    depth = assign_depths(q, norm)
    print(f"sigma {sigma:>3}: quality per modality {np.round(q.mean(axis=0), 3)}, "
          f"mean depth {np.round(depth.mean(axis=0), 2)}")
