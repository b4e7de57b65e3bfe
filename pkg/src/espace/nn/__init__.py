from . import kernels
from .adam import adam_step
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    PROB_CLAMP,
    cross_entropy,
    embed_and_pool,
    pool_batch,
    sigmoid,
    tower_backward,
    tower_forward,
)
from .params import (
    AdamState,
    EmbeddingTable,
    MlpTower,
    ParamStore,
    read_snapshot,
    write_snapshot,
)

__all__ = [
    "AdamState",
    "EmbeddingTable",
    "GradCheckReport",
    "MlpTower",
    "PROB_CLAMP",
    "ParamStore",
    "adam_step",
    "cross_entropy",
    "embed_and_pool",
    "grad_check",
    "kernels",
    "pool_batch",
    "read_snapshot",
    "sigmoid",
    "tower_backward",
    "tower_forward",
    "write_snapshot",
]
