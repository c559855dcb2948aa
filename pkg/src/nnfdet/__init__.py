"""Channel-feature pedestrian detector with non-neighboring feature pools.

Pipeline: RGB image -> 10 channel planes -> cell sums -> integral tables
-> pooled features (local means, neighbor differences, side-inner
differences, symmetry probes) -> boosted soft-cascade decision forest ->
multi-scale sliding-window detection -> FPPI/miss-rate evaluation.
"""

__version__ = "0.1.0"

from .channels import (
    ChannelStack,
    CellChannelStack,
    IntegralStack,
    aggregate_cells,
    build_integrals,
    compute_channels,
    rect_sum,
)
from .featpool import FeaturePool, PoolConfig, gen_pool, load_pool, save_pool
from .feateval import PoolEvaluator, eval_descriptor, eval_window, window_stats
from .imageio import decode_image, write_ppm

__all__ = [
    "ChannelStack",
    "CellChannelStack",
    "IntegralStack",
    "FeaturePool",
    "PoolConfig",
    "PoolEvaluator",
    "aggregate_cells",
    "build_integrals",
    "compute_channels",
    "decode_image",
    "eval_descriptor",
    "eval_window",
    "gen_pool",
    "load_pool",
    "rect_sum",
    "save_pool",
    "window_stats",
    "write_ppm",
]
