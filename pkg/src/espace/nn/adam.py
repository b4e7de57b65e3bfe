"""Adam with bias correction and lazy row-wise updates for embedding tables.

Rows (or whole groups) that receive no gradient in a step are left
untouched, moments included; this is the usual sparse-embedding variant
and differs from dense Adam, which would keep decaying stale moments.
"""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from . import kernels
from .params import AdamState


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    sparse_rows: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """One optimizer step over every named gradient.

    `sparse_rows[name]` restricts the update of that (2-D) parameter to the
    given unique rows. Names absent from `grads` are skipped entirely.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    sparse_rows = sparse_rows or {}
    for name, g in grads.items():
        p = params[name]
        m, v = state.slots(name, p.shape)
        rows = sparse_rows.get(name)
        if rows is not None:
            kernels.adam_rows(
                p, g, m, v, rows, state.lr, state.beta1, state.beta2, state.eps, bc1, bc2
            )
        else:
            kernels.adam_dense(
                p.ravel(), np.ascontiguousarray(g, dtype=np.float64).ravel(),
                m.ravel(), v.ravel(),
                state.lr, state.beta1, state.beta2, state.eps, bc1, bc2,
            )
