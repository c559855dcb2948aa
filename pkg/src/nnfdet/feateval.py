"""Descriptor evaluation on integral tables.

Two paths compute the same numbers:

* scalar ops (`eval_descriptor` and friends) - the readable reference
  used by tests and single-window scoring;
* `PoolEvaluator` - a compiled form of a pool that evaluates many
  descriptors and/or many windows at once with vectorized gathers, used
  by training-sample extraction and the sliding-window scanner.

Channel-specific normalization (applied to local means and differences,
never to symmetry features): L divides by the window's L standard
deviation (local means are also centered on the window mean), U and V
pass through, G and the orientation planes divide by the window's mean
G. A small epsilon guards constant windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import CH_G, CH_L, CH_LSQ, CH_U, CH_V, IntegralStack, rect_sum
from .errors import OutOfBoundsError
from .featpool import (
    FeaturePool,
    FeatureDescriptor,
    LocalMean,
    NeighborDiff,
    Patch,
    Sidf,
    Ssf,
    SSF_MIN_CHANNELS,
    mirror_patch,
)

NORM_EPS = 1e-6


@dataclass(frozen=True)
class NormStats:
    mu_l: float
    sigma_l: float
    mu_g: float


def window_stats(integral: IntegralStack, wx: int, wy: int, ww: int, wh: int) -> NormStats:
    """Mean/std of the L cells and mean of the G cells in a window."""
    area = ww * wh
    mu_l = rect_sum(integral, CH_L, wx, wy, ww, wh) / area
    ex2 = rect_sum(integral, CH_LSQ, wx, wy, ww, wh) / area
    sigma_l = float(np.sqrt(max(0.0, ex2 - mu_l * mu_l)))
    mu_g = rect_sum(integral, CH_G, wx, wy, ww, wh) / area
    return NormStats(mu_l, sigma_l, mu_g)


def normalize(x: float, channel: int, ns: NormStats, centered: bool) -> float:
    """Channel-specific normalization for local-mean and difference values.

    `centered` selects the full affine form used for local means on L;
    for differences the window mean cancels so only the scale remains.
    """
    if channel == CH_L:
        if centered:
            return (x - ns.mu_l) / (ns.sigma_l + NORM_EPS)
        return x / (ns.sigma_l + NORM_EPS)
    if channel in (CH_U, CH_V):
        return x
    return x / (ns.mu_g + NORM_EPS)


def _patch_mean(integral: IntegralStack, channel: int, p: Patch, wx: int, wy: int) -> float:
    return rect_sum(integral, channel, wx + p.x, wy + p.y, p.w, p.h) / p.area


def eval_local_mean(
    integral: IntegralStack,
    d: LocalMean,
    wx: int,
    wy: int,
    ns: NormStats,
    norm_enabled: bool = True,
) -> float:
    v = _patch_mean(integral, d.channel, d.a, wx, wy)
    return normalize(v, d.channel, ns, centered=True) if norm_enabled else v


def eval_diff(
    integral: IntegralStack,
    d: NeighborDiff | Sidf,
    wx: int,
    wy: int,
    ns: NormStats,
    norm_enabled: bool = True,
) -> float:
    v = _patch_mean(integral, d.channel, d.a, wx, wy) - _patch_mean(
        integral, d.channel, d.b, wx, wy
    )
    return normalize(v, d.channel, ns, centered=False) if norm_enabled else v


def eval_ssf(integral: IntegralStack, d: Ssf, wx: int, wy: int,
             template_w: int) -> float:
    """|pooled(A) - pooled(A')|; pooling is max of the three sub-patch
    means, min on the L and V planes. Never normalized."""
    use_min = d.channel in SSF_MIN_CHANNELS
    pick = min if use_min else max
    fa = pick(_patch_mean(integral, d.channel, s, wx, wy) for s in d.subpatches)
    fm = pick(
        _patch_mean(integral, d.channel, mirror_patch(s, template_w), wx, wy)
        for s in d.subpatches
    )
    return abs(fa - fm)


def eval_descriptor(
    integral: IntegralStack,
    d: FeatureDescriptor,
    wx: int,
    wy: int,
    ns: NormStats,
    template_w: int = 32,
    norm_enabled: bool = True,
) -> float:
    if isinstance(d, LocalMean):
        return eval_local_mean(integral, d, wx, wy, ns, norm_enabled)
    if isinstance(d, (NeighborDiff, Sidf)):
        return eval_diff(integral, d, wx, wy, ns, norm_enabled)
    if isinstance(d, Ssf):
        return eval_ssf(integral, d, wx, wy, template_w)
    raise TypeError(f"unknown descriptor {d!r}")


def eval_window(
    integral: IntegralStack,
    pool: FeaturePool,
    subset: list[int] | np.ndarray,
    wx: int,
    wy: int,
    norm_enabled: bool = True,
) -> np.ndarray:
    """Evaluate a descriptor subset on one window (stats computed once)."""
    ns = window_stats(integral, wx, wy, pool.template_w, pool.template_h)
    out = np.empty(len(subset), dtype=np.float64)
    for i, idx in enumerate(subset):
        out[i] = eval_descriptor(
            integral, pool.descriptors[int(idx)], wx, wy, ns, pool.template_w, norm_enabled
        )
    return out


# --- compiled batch evaluation ---------------------------------------------

# normalization modes
_NORM_NONE = 0
_NORM_L_CENTERED = 1
_NORM_L_SCALE = 2
_NORM_G_SCALE = 3


def _norm_mode(d: FeatureDescriptor) -> int:
    if isinstance(d, Ssf):
        return _NORM_NONE
    if d.channel == CH_L:
        return _NORM_L_CENTERED if isinstance(d, LocalMean) else _NORM_L_SCALE
    if d.channel in (CH_U, CH_V):
        return _NORM_NONE
    return _NORM_G_SCALE


class PoolEvaluator:
    """Pool compiled to flat patch arrays for vectorized evaluation.

    Every patch of every descriptor becomes one row of (plane, y0, y1,
    x0, x1, 1/area); descriptors reference contiguous row ranges. Ssf
    descriptors contribute six rows: the three sub-patches then their
    template mirrors.
    """

    def __init__(self, pool: FeaturePool, norm_enabled: bool = True):
        self.pool = pool
        self.norm_enabled = norm_enabled
        self.template_w = pool.template_w
        self.template_h = pool.template_h

        planes, x0, y0, x1, y1, inv_area = [], [], [], [], [], []
        start, kind_code, ssf_min = [], [], []
        norm_mode = np.empty(len(pool), dtype=np.int8)

        def push(channel: int, p: Patch):
            planes.append(channel)
            x0.append(p.x)
            y0.append(p.y)
            x1.append(p.x + p.w)
            y1.append(p.y + p.h)
            inv_area.append(1.0 / p.area)

        for i, d in enumerate(pool.descriptors):
            start.append(len(planes))
            norm_mode[i] = _norm_mode(d)
            if isinstance(d, LocalMean):
                kind_code.append(0)
                ssf_min.append(False)
                push(d.channel, d.a)
            elif isinstance(d, (NeighborDiff, Sidf)):
                kind_code.append(1)
                ssf_min.append(False)
                push(d.channel, d.a)
                push(d.channel, d.b)
            elif isinstance(d, Ssf):
                kind_code.append(2)
                ssf_min.append(d.channel in SSF_MIN_CHANNELS)
                for s in d.subpatches:
                    push(d.channel, s)
                for s in d.subpatches:
                    push(d.channel, mirror_patch(s, pool.template_w))
            else:
                raise TypeError(f"unknown descriptor {d!r}")

        self._plane = np.asarray(planes, dtype=np.int64)
        self._x0 = np.asarray(x0, dtype=np.int64)
        self._y0 = np.asarray(y0, dtype=np.int64)
        self._x1 = np.asarray(x1, dtype=np.int64)
        self._y1 = np.asarray(y1, dtype=np.int64)
        self._inv_area = np.asarray(inv_area, dtype=np.float64)
        self._start = np.asarray(start, dtype=np.int64)
        self._kind = np.asarray(kind_code, dtype=np.int8)
        self._ssf_min = np.asarray(ssf_min, dtype=bool)
        self._norm_mode = norm_mode

        self._is_lm = self._kind == 0
        self._is_diff = self._kind == 1
        self._is_ssf = self._kind == 2

    def __len__(self) -> int:
        return len(self.pool)

    def _check_windows(self, integral: IntegralStack, ox: np.ndarray, oy: np.ndarray):
        if len(ox) == 0:
            return
        if (
            ox.min() < 0
            or oy.min() < 0
            or ox.max() + self.template_w > integral.cell_w
            or oy.max() + self.template_h > integral.cell_h
        ):
            raise OutOfBoundsError("window outside integral grid")

    def window_stats_arrays(
        self, integral: IntegralStack, ox: np.ndarray, oy: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized window_stats for a batch of window origins."""
        self._check_windows(integral, ox, oy)
        t = integral.tables
        w, h = self.template_w, self.template_h
        area = w * h

        def rsum(plane):
            tp = t[plane]
            return (
                tp[oy + h, ox + w] - tp[oy, ox + w] - tp[oy + h, ox] + tp[oy, ox]
            )

        mu_l = rsum(CH_L) / area
        ex2 = rsum(CH_LSQ) / area
        sigma_l = np.sqrt(np.maximum(0.0, ex2 - mu_l * mu_l))
        mu_g = rsum(CH_G) / area
        return mu_l, sigma_l, mu_g

    def _patch_means(
        self,
        integral: IntegralStack,
        rows: np.ndarray,
        ox: np.ndarray,
        oy: np.ndarray,
    ) -> np.ndarray:
        """Means of patch rows (R,) over window origins (N,) -> (R, N)."""
        t = integral.tables
        pl = self._plane[rows, None]
        rx0 = self._x0[rows, None] + ox[None, :]
        rx1 = self._x1[rows, None] + ox[None, :]
        ry0 = self._y0[rows, None] + oy[None, :]
        ry1 = self._y1[rows, None] + oy[None, :]
        s = t[pl, ry1, rx1] - t[pl, ry0, rx1] - t[pl, ry1, rx0] + t[pl, ry0, rx0]
        return s * self._inv_area[rows, None]

    def _apply_norm(
        self,
        vals: np.ndarray,
        desc_idx: np.ndarray,
        mu_l: np.ndarray,
        sigma_l: np.ndarray,
        mu_g: np.ndarray,
    ) -> np.ndarray:
        if not self.norm_enabled:
            return vals
        mode = self._norm_mode[desc_idx]
        out = vals
        m = mode == _NORM_L_CENTERED
        if m.any():
            out[m] = (out[m] - mu_l[None, :]) / (sigma_l[None, :] + NORM_EPS)
        m = mode == _NORM_L_SCALE
        if m.any():
            out[m] = out[m] / (sigma_l[None, :] + NORM_EPS)
        m = mode == _NORM_G_SCALE
        if m.any():
            out[m] = out[m] / (mu_g[None, :] + NORM_EPS)
        return out

    def eval_many(
        self,
        integral: IntegralStack,
        ox: np.ndarray,
        oy: np.ndarray,
        subset: np.ndarray | None = None,
    ) -> np.ndarray:
        """Evaluate descriptors x windows -> (len(subset), len(ox)) float64."""
        ox = np.asarray(ox, dtype=np.int64)
        oy = np.asarray(oy, dtype=np.int64)
        self._check_windows(integral, ox, oy)
        idx = np.arange(len(self.pool)) if subset is None else np.asarray(subset, dtype=np.int64)
        mu_l, sigma_l, mu_g = self.window_stats_arrays(integral, ox, oy)
        out = np.empty((len(idx), len(ox)), dtype=np.float64)

        lm = np.nonzero(self._is_lm[idx])[0]
        if len(lm):
            rows = self._start[idx[lm]]
            out[lm] = self._patch_means(integral, rows, ox, oy)
        df = np.nonzero(self._is_diff[idx])[0]
        if len(df):
            rows = self._start[idx[df]]
            ma = self._patch_means(integral, rows, ox, oy)
            mb = self._patch_means(integral, rows + 1, ox, oy)
            out[df] = ma - mb
        sf = np.nonzero(self._is_ssf[idx])[0]
        if len(sf):
            base = self._start[idx[sf]]
            rows = (base[:, None] + np.arange(6)[None, :]).ravel()
            m = self._patch_means(integral, rows, ox, oy).reshape(len(sf), 6, -1)
            is_min = self._ssf_min[idx[sf]][:, None]
            fa = np.where(is_min, m[:, 0:3].min(axis=1), m[:, 0:3].max(axis=1))
            fm = np.where(is_min, m[:, 3:6].min(axis=1), m[:, 3:6].max(axis=1))
            out[sf] = np.abs(fa - fm)
        return self._apply_norm(out, idx, mu_l, sigma_l, mu_g)

    def eval_one_window(self, integral: IntegralStack, wx: int = 0, wy: int = 0) -> np.ndarray:
        """All descriptor values for a single window, shape (n_desc,)."""
        return self.eval_many(
            integral, np.array([wx], dtype=np.int64), np.array([wy], dtype=np.int64)
        )[:, 0]

    def eval_feature(
        self,
        fidx: int,
        integral: IntegralStack,
        ox: np.ndarray,
        oy: np.ndarray,
        mu_l: np.ndarray,
        sigma_l: np.ndarray,
        mu_g: np.ndarray,
    ) -> np.ndarray:
        """One descriptor over many windows; stats are passed in because
        the scanner computes them once per level."""
        start = int(self._start[fidx])
        if self._is_lm[fidx]:
            vals = self._patch_means(integral, np.array([start]), ox, oy)[0]
        elif self._is_diff[fidx]:
            m = self._patch_means(integral, np.array([start, start + 1]), ox, oy)
            vals = m[0] - m[1]
        else:
            rows = np.arange(start, start + 6)
            m = self._patch_means(integral, rows, ox, oy)
            if self._ssf_min[fidx]:
                vals = np.abs(m[0:3].min(axis=0) - m[3:6].min(axis=0))
            else:
                vals = np.abs(m[0:3].max(axis=0) - m[3:6].max(axis=0))
        if not self.norm_enabled:
            return vals
        mode = self._norm_mode[fidx]
        if mode == _NORM_L_CENTERED:
            return (vals - mu_l) / (sigma_l + NORM_EPS)
        if mode == _NORM_L_SCALE:
            return vals / (sigma_l + NORM_EPS)
        if mode == _NORM_G_SCALE:
            return vals / (mu_g + NORM_EPS)
        return vals
