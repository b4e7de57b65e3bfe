"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_coords: int
    worst_param: str
    worst_index: int

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def grad_check(
    loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    rng: np.random.Generator,
    n_coords: int = 200,
    step: float = 1e-5,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    `loss_and_grads` evaluates the loss and its gradients at the current
    parameter values; parameters are perturbed in place for the probes and
    restored. At least n_coords coordinates are sampled uniformly over all
    parameters (all of them when there are fewer). Relative error uses
    max(|fd|, |analytic|, rel_floor) as denominator; the floor keeps
    finite-difference noise on near-zero gradients from dominating.
    """
    _, grads = loss_and_grads()
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    k = min(n_coords, total)
    coords = rng.choice(total, size=k, replace=False)
    bounds = np.concatenate(([0], np.cumsum(sizes)))

    worst = (0.0, "", 0)
    for c in np.sort(coords):
        gi = int(np.searchsorted(bounds, c, side="right") - 1)
        name = names[gi]
        flat_idx = int(c - bounds[gi])
        p = params[name].ravel()
        saved = p[flat_idx]
        p[flat_idx] = saved + step
        loss_plus, _ = loss_and_grads()
        p[flat_idx] = saved - step
        loss_minus, _ = loss_and_grads()
        p[flat_idx] = saved
        fd = (loss_plus - loss_minus) / (2.0 * step)
        an = float(np.asarray(grads[name]).ravel()[flat_idx])
        rel = abs(fd - an) / max(abs(fd), abs(an), rel_floor)
        if rel > worst[0]:
            worst = (rel, name, flat_idx)
    return GradCheckReport(worst[0], k, worst[1], worst[2])
