"""Channel images, cell aggregation, and integral tables.

An input RGB image becomes 10 scalar planes: CIE-LUV color (rescaled to
[0, 1]), normalized gradient magnitude of L, and 6 oriented-gradient
planes that soft-bin the magnitude over [0, pi). Planes are aggregated to
cell resolution (per-cell pixel sums) and turned into summed-area tables
for constant-time rectangle sums. An 11th table integrates the squared L
cell values so per-window standard deviation is also constant-time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidArgumentError, OutOfBoundsError
from .imageio import validate_rgb, write_pgm

# Plane indices. Orientation planes are CH_O0 + bin for bins 0..5.
CH_L, CH_U, CH_V, CH_G = 0, 1, 2, 3
CH_O0 = 4
N_ORIENT_BINS = 6
N_CHANNELS = 10
CH_LSQ = 10  # extra integral table only

# Affine [0,1] rescale applied to raw CIE-LUV before any feature math.
# Fixed constants (classic full-gamut extremes) so that training and
# detection agree bit-for-bit; recorded in the model file.
LUV_SCALE = {
    "L": (0.0, 100.0),
    "U": (-134.0, 220.0),
    "V": (-140.0, 122.0),
}

GRAD_NORM_RADIUS = 5  # 11x11 box mean
GRAD_NORM_CONST = 0.005
DEFAULT_CELL_SIZE = 2

# sRGB -> XYZ (D65) matrix, rows produce X, Y, Z.
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_WHITE_X, _WHITE_Y, _WHITE_Z = 0.95047, 1.0, 1.08883
_DENOM_N = _WHITE_X + 15.0 * _WHITE_Y + 3.0 * _WHITE_Z
_UN = 4.0 * _WHITE_X / _DENOM_N
_VN = 9.0 * _WHITE_Y / _DENOM_N


def channel_config_fingerprint() -> dict:
    """Constants that must match between a model and the channel code."""
    return {
        "n_channels": N_CHANNELS,
        "n_orient_bins": N_ORIENT_BINS,
        "grad_kernel": "centered-diff-replicate",
        "grad_norm_radius": GRAD_NORM_RADIUS,
        "grad_norm_const": GRAD_NORM_CONST,
        "luv_scale": {k: list(v) for k, v in LUV_SCALE.items()},
    }


@dataclass
class ChannelStack:
    """10 pixel-resolution planes, ordered [L, U, V, G, O1..O6]."""

    planes: np.ndarray  # (10, h, w) float32

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass
class CellChannelStack:
    """Cell-resolution planes holding per-cell pixel sums."""

    planes: np.ndarray  # (10, cell_h, cell_w) float32
    cell_size: int

    @property
    def cell_h(self) -> int:
        return self.planes.shape[1]

    @property
    def cell_w(self) -> int:
        return self.planes.shape[2]


@dataclass
class IntegralStack:
    """Summed-area tables with a zero origin row/column.

    tables[p][y][x] = sum of cell plane p over cells [0, y) x [0, x).
    Table CH_LSQ integrates the square of the L cell values.
    """

    tables: np.ndarray  # (11, cell_h + 1, cell_w + 1) float64
    cell_size: int

    @property
    def cell_h(self) -> int:
        return self.tables.shape[1] - 1

    @property
    def cell_w(self) -> int:
        return self.tables.shape[2] - 1


def _srgb_to_linear(rgb: np.ndarray) -> np.ndarray:
    return np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)


def _rgb_to_luv(img: np.ndarray) -> np.ndarray:
    """sRGB uint8 -> CIE-LUV planes rescaled to [0,1], shape (3, h, w)."""
    rgb = img.astype(np.float64) / 255.0
    lin = _srgb_to_linear(rgb)
    xyz = lin @ _RGB2XYZ.T
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]

    yr = y / _WHITE_Y
    cube = (6.0 / 29.0) ** 3
    lstar = np.where(yr > cube, 116.0 * np.cbrt(yr) - 16.0, (29.0 / 3.0) ** 3 * yr)

    denom = x + 15.0 * y + 3.0 * z
    safe = denom > 0
    up = np.where(safe, 4.0 * x / np.where(safe, denom, 1.0), _UN)
    vp = np.where(safe, 9.0 * y / np.where(safe, denom, 1.0), _VN)
    ustar = 13.0 * lstar * (up - _UN)
    vstar = 13.0 * lstar * (vp - _VN)

    out = np.empty((3,) + img.shape[:2], dtype=np.float64)
    for i, (plane, key) in enumerate(((lstar, "L"), (ustar, "U"), (vstar, "V"))):
        lo, hi = LUV_SCALE[key]
        out[i] = (plane - lo) / (hi - lo)
    return out


def _centered_gradients(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """[-1, 0, 1]/2 gradients with border replication."""
    p = np.pad(plane, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    return gx, gy


def compute_channels(img: np.ndarray) -> ChannelStack:
    """Build the 10-plane channel stack for an RGB uint8 image.

    G is the magnitude of the centered-difference gradient of L, divided
    by (local 11x11 box mean of raw magnitude + 0.005). Each orientation
    plane receives the soft-binned share of G for its sixth of [0, pi),
    so summing the six planes recovers G.
    """
    validate_rgb(img)
    luv = _rgb_to_luv(img)

    # Gradient path in float64: the horizontal-mirror equivariance of the
    # orientation planes has to hold to 1e-5, which float32 atan2 misses.
    gx, gy = _centered_gradients(luv[CH_L])
    mag = np.hypot(gx, gy)
    local_mean = cv2.boxFilter(
        mag,
        ddepth=-1,
        ksize=(2 * GRAD_NORM_RADIUS + 1, 2 * GRAD_NORM_RADIUS + 1),
        normalize=True,
        borderType=cv2.BORDER_REPLICATE,
    )
    grad = mag / (local_mean + GRAD_NORM_CONST)

    theta = np.arctan2(gy, gx)
    theta = np.where(theta < 0.0, theta + np.pi, theta)
    theta = np.where(theta >= np.pi, theta - np.pi, theta)

    t = theta * (N_ORIENT_BINS / np.pi)
    lo_bin = np.minimum(np.floor(t).astype(np.int32), N_ORIENT_BINS - 1)
    frac = t - lo_bin

    planes = np.empty((N_CHANNELS,) + img.shape[:2], dtype=np.float32)
    planes[CH_L:CH_V + 1] = luv
    planes[CH_G] = grad
    lo_mass = grad * (1.0 - frac)
    hi_mass = grad * frac
    hi_bin = (lo_bin + 1) % N_ORIENT_BINS
    for b in range(N_ORIENT_BINS):
        planes[CH_O0 + b] = np.where(lo_bin == b, lo_mass, 0.0) + np.where(
            hi_bin == b, hi_mass, 0.0
        )
    return ChannelStack(planes)


def aggregate_cells(cs: ChannelStack, cell_size: int = DEFAULT_CELL_SIZE) -> CellChannelStack:
    """Sum each cell_size x cell_size block; trailing partials are dropped."""
    if cell_size < 1:
        raise InvalidArgumentError("cell_size must be >= 1")
    n, h, w = cs.planes.shape
    ch, cw = h // cell_size, w // cell_size
    if ch < 1 or cw < 1:
        raise InvalidArgumentError(f"image {w}x{h} smaller than one {cell_size}px cell")
    trimmed = cs.planes[:, : ch * cell_size, : cw * cell_size]
    cells = trimmed.reshape(n, ch, cell_size, cw, cell_size).sum(axis=(2, 4))
    return CellChannelStack(cells.astype(np.float32), cell_size)


def build_integrals(ccs: CellChannelStack) -> IntegralStack:
    """Summed-area tables (float64) with zero border, plus the L^2 table."""
    n, ch, cw = ccs.planes.shape
    tables = np.zeros((n + 1, ch + 1, cw + 1), dtype=np.float64)
    src = ccs.planes.astype(np.float64)
    tables[:n, 1:, 1:] = src.cumsum(axis=1).cumsum(axis=2)
    tables[CH_LSQ, 1:, 1:] = np.square(src[CH_L]).cumsum(axis=0).cumsum(axis=1)
    return IntegralStack(tables, ccs.cell_size)


def rect_sum(integral: IntegralStack, plane: int, x: int, y: int, w: int, h: int) -> float:
    """Sum of the source plane over cells [x, x+w) x [y, y+h)."""
    if w < 1 or h < 1:
        raise OutOfBoundsError(f"empty rectangle {w}x{h}")
    if x < 0 or y < 0 or x + w > integral.cell_w or y + h > integral.cell_h:
        raise OutOfBoundsError(
            f"rect ({x},{y},{w},{h}) outside {integral.cell_w}x{integral.cell_h} grid"
        )
    t = integral.tables[plane]
    return float(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


def channels_from_image(img: np.ndarray, cell_size: int = DEFAULT_CELL_SIZE) -> IntegralStack:
    """Convenience pipeline: channels -> cells -> integral tables."""
    return build_integrals(aggregate_cells(compute_channels(img), cell_size))


def mirror_cell_stack(ccs: CellChannelStack) -> CellChannelStack:
    """Cell stack of the horizontally mirrored image.

    Flips every plane left-right and swaps orientation planes so bin k
    becomes bin (6 - k) % 6 (reflection of orientation about pi/2).
    """
    flipped = ccs.planes[:, :, ::-1].copy()
    out = flipped.copy()
    for b in range(N_ORIENT_BINS):
        out[CH_O0 + (N_ORIENT_BINS - b) % N_ORIENT_BINS] = flipped[CH_O0 + b]
    return CellChannelStack(out, ccs.cell_size)


PLANE_NAMES = ["L", "U", "V", "G", "O1", "O2", "O3", "O4", "O5", "O6"]


def dump_channels(cs: ChannelStack, out_dir: str | os.PathLike) -> None:
    """Write each plane as a PGM scaled to [0,255] plus a min/max sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, name in enumerate(PLANE_NAMES):
        plane = cs.planes[i]
        lo, hi = float(plane.min()), float(plane.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img8 = np.clip((plane - lo) * scale, 0, 255).astype(np.uint8)
        write_pgm(os.path.join(out_dir, f"{name}.pgm"), img8)
        lines.append(f"{name} {lo!r} {hi!r}\n")
    with open(os.path.join(out_dir, "scale.txt"), "w") as f:
        f.writelines(lines)
