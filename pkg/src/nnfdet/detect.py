"""Multi-scale sliding-window detection and greedy non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .boost import BoostedModel, score_windows_batch
from .channels import IntegralStack, aggregate_cells, build_integrals, compute_channels
from .errors import InvalidArgumentError
from .feateval import PoolEvaluator

DEFAULT_STRIDE_PX = 4
DEFAULT_SCALES_PER_OCTAVE = 8
DEFAULT_UPSAMPLE_OCTAVES = 1
DEFAULT_NMS_OVERLAP = 0.65


@dataclass
class Detection:
    """Box in original image pixels; scale is the pyramid level it came from."""

    x: float
    y: float
    w: float
    h: float
    score: float
    scale: float


@dataclass
class PyramidLevel:
    scale: float
    integral: IntegralStack
    width: int  # resampled image pixels
    height: int


def _round_dim(v: float) -> int:
    return int(np.floor(v + 0.5))


def pyramid_scales(
    img_w: int,
    img_h: int,
    template_w_px: int,
    template_h_px: int,
    scales_per_octave: int = DEFAULT_SCALES_PER_OCTAVE,
    upsample_octaves: int = DEFAULT_UPSAMPLE_OCTAVES,
) -> list[float]:
    """Geometric scale ladder 2^(k/spo), from upsample_octaves above the
    original down to the last level that still contains the template."""
    k_top = upsample_octaves * scales_per_octave
    # smallest k with rounded dim * 2^(k/spo) >= template in both dims
    scales = []
    for k in range(k_top, -10 * scales_per_octave, -1):
        s = 2.0 ** (k / scales_per_octave)
        if _round_dim(img_w * s) >= template_w_px and _round_dim(img_h * s) >= template_h_px:
            scales.append(s)
        else:
            break
    return scales


def build_pyramid(
    img: np.ndarray,
    template_w_px: int = 64,
    template_h_px: int = 128,
    cell_size: int = 2,
    scales_per_octave: int = DEFAULT_SCALES_PER_OCTAVE,
    upsample_octaves: int = DEFAULT_UPSAMPLE_OCTAVES,
) -> list[PyramidLevel]:
    """Resample -> channels -> cells -> integrals at every pyramid scale."""
    h, w = img.shape[:2]
    scales = pyramid_scales(
        w, h, template_w_px, template_h_px, scales_per_octave, upsample_octaves
    )
    if not scales:
        raise InvalidArgumentError(
            f"image {w}x{h} smaller than the {template_w_px}x{template_h_px} template"
        )
    levels = []
    for s in scales:
        lw, lh = int(round(w * s)), int(round(h * s))
        if s == 1.0:
            resampled = img
        else:
            resampled = cv2.resize(img, (lw, lh), interpolation=cv2.INTER_LINEAR)
        integral = build_integrals(aggregate_cells(compute_channels(resampled), cell_size))
        levels.append(PyramidLevel(s, integral, lw, lh))
    return levels


def level_window_origins(
    integral: IntegralStack, template_w: int, template_h: int, stride_cells: int
) -> tuple[np.ndarray, np.ndarray]:
    """All window origins (cells) for one level, ordered by (y, x)."""
    nx = integral.cell_w - template_w
    ny = integral.cell_h - template_h
    if nx < 0 or ny < 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    xs = np.arange(0, nx + 1, stride_cells, dtype=np.int64)
    ys = np.arange(0, ny + 1, stride_cells, dtype=np.int64)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return gx.ravel(), gy.ravel()


def scan_level(
    model: BoostedModel,
    ev: PoolEvaluator,
    level: PyramidLevel,
    stride_cells: int,
    accept_threshold: float,
    use_cascade: bool = True,
) -> list[Detection]:
    """Score every window of one level; emit survivors above threshold."""
    ox, oy = level_window_origins(
        level.integral, model.template_w, model.template_h, stride_cells
    )
    if len(ox) == 0:
        return []
    scores, rejected, _ = score_windows_batch(
        model, ev, level.integral, ox, oy, use_cascade
    )
    keep = (rejected == -1) & (scores >= accept_threshold)
    cs = model.cell_size
    out = []
    for i in np.nonzero(keep)[0]:
        out.append(
            Detection(
                x=float(ox[i]) * cs / level.scale,
                y=float(oy[i]) * cs / level.scale,
                w=model.template_w * cs / level.scale,
                h=model.template_h * cs / level.scale,
                score=float(scores[i]),
                scale=level.scale,
            )
        )
    return out


def detect(
    model: BoostedModel,
    img: np.ndarray,
    stride_px: int = DEFAULT_STRIDE_PX,
    accept_threshold: float = 0.0,
    scales_per_octave: int = DEFAULT_SCALES_PER_OCTAVE,
    upsample_octaves: int = DEFAULT_UPSAMPLE_OCTAVES,
    use_cascade: bool = True,
    ev: PoolEvaluator | None = None,
) -> list[Detection]:
    """Slide the template over every pyramid level; no suppression applied.

    Output order is deterministic: by level (largest scale first), then
    window row, then column.
    """
    stride_cells = max(1, stride_px // model.cell_size)
    if ev is None:
        ev = model.evaluator()
    levels = build_pyramid(
        img,
        template_w_px=model.template_w * model.cell_size,
        template_h_px=model.template_h * model.cell_size,
        cell_size=model.cell_size,
        scales_per_octave=scales_per_octave,
        upsample_octaves=upsample_octaves,
    )
    out: list[Detection] = []
    for level in levels:
        out.extend(scan_level(model, ev, level, stride_cells, accept_threshold,
                              use_cascade))
    return out


def iou(ax, ay, aw, ah, bx, by, bw, bh) -> float:
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[Detection], overlap: float = DEFAULT_NMS_OVERLAP) -> list[Detection]:
    """Greedy suppression: keep by descending score, drop any remaining box
    whose IoU with a kept box exceeds `overlap`. Score ties keep input order."""
    if not dets:
        return []
    order = np.argsort([-d.score for d in dets], kind="stable")
    x = np.array([d.x for d in dets])
    y = np.array([d.y for d in dets])
    w = np.array([d.w for d in dets])
    h = np.array([d.h for d in dets])
    areas = w * h
    kept: list[int] = []
    alive = order.tolist()
    while alive:
        i = alive[0]
        kept.append(i)
        rest = np.array(alive[1:], dtype=np.int64)
        if len(rest) == 0:
            break
        ix = np.maximum(0.0, np.minimum(x[i] + w[i], x[rest] + w[rest]) - np.maximum(x[i], x[rest]))
        iy = np.maximum(0.0, np.minimum(y[i] + h[i], y[rest] + h[rest]) - np.maximum(y[i], y[rest]))
        inter = ix * iy
        union = areas[i] + areas[rest] - inter
        ovr = np.where(union > 0, inter / union, 0.0)
        alive = [int(j) for j, o in zip(rest, ovr) if o <= overlap]
    return [dets[i] for i in kept]
