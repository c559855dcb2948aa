import numpy as np
import pytest

from nnfdet.channels import (
    CH_L,
    CellChannelStack,
    IntegralStack,
    N_CHANNELS,
    build_integrals,
)


def random_cell_stack(rng: np.random.Generator, cell_w: int = 32, cell_h: int = 64,
                      cell_size: int = 2) -> CellChannelStack:
    """Random but plausible cell planes: non-negative, float32."""
    planes = rng.random((N_CHANNELS, cell_h, cell_w)).astype(np.float32) * 4.0
    return CellChannelStack(planes, cell_size)


def random_integral_stack(rng: np.random.Generator, cell_w: int = 32, cell_h: int = 64
                          ) -> IntegralStack:
    return build_integrals(random_cell_stack(rng, cell_w, cell_h))


def brute_rect_sum(ccs: CellChannelStack, plane: int, x: int, y: int, w: int, h: int) -> float:
    total = 0.0
    for yy in range(y, y + h):
        for xx in range(x, x + w):
            total += float(ccs.planes[plane, yy, xx])
    return total


def brute_patch_mean(ccs: CellChannelStack, plane: int, x: int, y: int, w: int, h: int) -> float:
    return brute_rect_sum(ccs, plane, x, y, w, h) / (w * h)


def brute_window_stats(ccs: CellChannelStack, wx: int, wy: int, ww: int, wh: int):
    """Two-pass mean/std over L cells plus mean of G cells."""
    l_vals = [
        float(ccs.planes[CH_L, yy, xx])
        for yy in range(wy, wy + wh)
        for xx in range(wx, wx + ww)
    ]
    mu_l = sum(l_vals) / len(l_vals)
    var = sum((v - mu_l) ** 2 for v in l_vals) / len(l_vals)
    g_vals = [
        float(ccs.planes[3, yy, xx])
        for yy in range(wy, wy + wh)
        for xx in range(wx, wx + ww)
    ]
    mu_g = sum(g_vals) / len(g_vals)
    return mu_l, var ** 0.5, mu_g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
