"""Analytic per-sample FLOP accounting.

Counts follow a multiply-add cost model:

* gated block on a ``d``-dim modality: ``2 d^2 + 4 d`` (gate affine, sigmoid, gating)
* one LSTM step: ``8 h (sum d + h)`` for the four gate affines plus ``9 h``
  for bias adds and the cell/hidden updates
* decoder for one block: ``2 h d (d + 1)``
* classifier: ``2 C sum d``

Quality estimation against the prototypes is not counted, so that these
numbers stay comparable to plain dynamic-depth networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LSTM_ELEMENTWISE = 9


def block_flops(d: int) -> int:
    return 2 * d * d + 4 * d


def lstm_flops(in_dim: int, hdim: int) -> int:
    return 8 * hdim * (in_dim + hdim) + LSTM_ELEMENTWISE * hdim


def decoder_flops(d: int, hdim: int) -> int:
    return 2 * hdim * d * (d + 1)


def classifier_flops(n_classes: int, dims) -> int:
    return 2 * n_classes * int(sum(dims))


def sample_flops(depths, dims, hdim: int, n_classes: int, hypernetwork: bool = True) -> int:
    """FLOPs for one sample with per-modality ``depths``."""
    depths = [int(d) for d in depths]
    total = classifier_flops(n_classes, dims)
    for d, depth in zip(dims, depths):
        per_block = block_flops(d) + (decoder_flops(d, hdim) if hypernetwork else 0)
        total += depth * per_block
    if hypernetwork:
        total += max(depths) * lstm_flops(int(sum(dims)), hdim)
    return total


@dataclass
class CostReport:
    mean_flops: float
    min_flops: int
    max_flops: int
    mean_depth: tuple
    n_parameters: int

    def as_dict(self) -> dict:
        out = {"mean_flops": self.mean_flops, "min_flops": self.min_flops, "max_flops": self.max_flops,
               "n_parameters": self.n_parameters}
        for m, d in enumerate(self.mean_depth):
            out[f"mean_depth_{m}"] = d
        return out


def cost_report(depths: np.ndarray, dims, hdim: int, n_classes: int, n_parameters: int,
                hypernetwork: bool = True) -> CostReport:
    depths = np.asarray(depths)
    per = np.array([sample_flops(row, dims, hdim, n_classes, hypernetwork) for row in depths])
    return CostReport(float(per.mean()), int(per.min()), int(per.max()),
                      tuple(float(v) for v in depths.mean(axis=0)), int(n_parameters))


def model_cost(model, dataset, depths=None) -> CostReport:
    """Average the cost model over ``dataset`` under ``model``'s depth plan."""
    depths = model.depth_plan(dataset) if depths is None else depths
    return cost_report(depths, model.dims, model.config.hdim, model.n_classes, model.n_parameters(),
                       hypernetwork=model.static_blocks is None)
