"""Randomized candidate-feature pool over the detection template.

Four descriptor kinds, all pure cell geometry plus a channel index:

* LocalMean     - mean of one patch.
* NeighborDiff  - difference of two edge-adjacent patches.
* Sidf          - difference of two same-band patches, the second placed
                  between the first and its horizontal mirror.
* Ssf           - symmetry probe: |pooled(A) - pooled(A')| where A' is
                  the exact mirror of A and pooling takes the extreme of
                  three sub-patch means.

Descriptors are immutable and image-independent; evaluation lives in
feateval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channels import CH_O0, N_CHANNELS, N_ORIENT_BINS
from .errors import FormatError, InvalidArgumentError

TEMPLATE_W, TEMPLATE_H = 32, 64  # cells
MAX_SQUARE = 8  # cells; NF and SIDF patches must fit an 8x8 square
SSF_SIDE_RANGE = (6, 12)  # cells
SSF_CHANNELS = (0, 1, 2, 3)  # L, U, V, G
SSF_MIN_CHANNELS = (0, 2)  # L, V pool with min instead of max
POOL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Patch:
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def inside(self, w: int, h: int) -> bool:
        return 0 <= self.x and 0 <= self.y and self.x + self.w <= w and self.y + self.h <= h

    def contains(self, other: "Patch") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x + other.w <= self.x + self.w
            and other.y + other.h <= self.y + self.h
        )


@dataclass(frozen=True)
class LocalMean:
    channel: int
    a: Patch

    kind = "local_mean"


@dataclass(frozen=True)
class NeighborDiff:
    """Patches a and b share a full edge; axis is the layout direction:
    'h' means a sits left of b, 'v' means a sits above b."""

    channel: int
    a: Patch
    b: Patch
    axis: str

    kind = "neighbor_diff"


@dataclass(frozen=True)
class Sidf:
    """Same-band pair: equal y and h, b's left edge between a's and the
    left edge of a's horizontal mirror (in the canonical orientation)."""

    channel: int
    a: Patch
    b: Patch

    kind = "sidf"


@dataclass(frozen=True)
class Ssf:
    """Patch a plus three sub-patches, each covering more than half of a.
    The mirrored side is implicit: its sub-patches are the exact
    reflections of these about the template's vertical axis."""

    channel: int
    a: Patch
    subpatches: tuple[Patch, Patch, Patch]

    kind = "ssf"


FeatureDescriptor = LocalMean | NeighborDiff | Sidf | Ssf

NON_NEIGHBORING_KINDS = ("sidf", "ssf")


@dataclass(frozen=True)
class PoolConfig:
    n_local_mean: int = 5000
    n_neighbor_diff: int = 16000
    n_sidf: int = 6000
    n_ssf: int = 3000
    template_w: int = TEMPLATE_W
    template_h: int = TEMPLATE_H
    max_square: int = MAX_SQUARE
    ssf_side_range: tuple[int, int] = SSF_SIDE_RANGE
    seed: int = 0

    def counts(self) -> dict[str, int]:
        return {
            "local_mean": self.n_local_mean,
            "neighbor_diff": self.n_neighbor_diff,
            "sidf": self.n_sidf,
            "ssf": self.n_ssf,
        }


@dataclass
class FeaturePool:
    template_w: int
    template_h: int
    seed: int
    descriptors: list[FeatureDescriptor] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {"local_mean": 0, "neighbor_diff": 0, "sidf": 0, "ssf": 0}
        for d in self.descriptors:
            out[d.kind] += 1
        return out

    def __len__(self) -> int:
        return len(self.descriptors)


def mirror_patch(p: Patch, template_w: int) -> Patch:
    return Patch(template_w - p.x - p.w, p.y, p.w, p.h)


def _mirror_orient_channel(channel: int) -> int:
    """Orientation bins reflect about pi/2 under a horizontal image flip."""
    if CH_O0 <= channel < CH_O0 + N_ORIENT_BINS:
        b = channel - CH_O0
        return CH_O0 + (N_ORIENT_BINS - b) % N_ORIENT_BINS
    return channel


def mirror_descriptor(d: FeatureDescriptor, template_w: int = TEMPLATE_W) -> FeatureDescriptor:
    """Reflect a descriptor about the template's vertical axis.

    Patch roles are kept (so difference signs are preserved) and
    orientation channels swap bins, which makes evaluation on a mirrored
    image with the mirrored descriptor reproduce the original value.
    Involution: mirror(mirror(d)) == d. Ssf descriptors are their own
    mirror up to the implicit A/A' relabeling and are returned unchanged.
    """
    if isinstance(d, Ssf):
        return d
    c = _mirror_orient_channel(d.channel)
    if isinstance(d, LocalMean):
        return LocalMean(c, mirror_patch(d.a, template_w))
    if isinstance(d, NeighborDiff):
        return NeighborDiff(c, mirror_patch(d.a, template_w), mirror_patch(d.b, template_w), d.axis)
    if isinstance(d, Sidf):
        return Sidf(c, mirror_patch(d.a, template_w), mirror_patch(d.b, template_w))
    raise TypeError(f"unknown descriptor {d!r}")


def _sample_local_mean(rng: np.random.Generator, cfg: PoolConfig) -> LocalMean:
    w = int(rng.integers(1, cfg.max_square + 1))
    h = int(rng.integers(1, cfg.max_square + 1))
    x = int(rng.integers(0, cfg.template_w - w + 1))
    y = int(rng.integers(0, cfg.template_h - h + 1))
    channel = int(rng.integers(0, N_CHANNELS))
    return LocalMean(channel, Patch(x, y, w, h))


def _sample_neighbor_diff(rng: np.random.Generator, cfg: PoolConfig) -> NeighborDiff:
    # The union of the two patches fits the max square; the partition
    # location (shared-edge offset) is free.
    axis = "h" if rng.integers(0, 2) == 0 else "v"
    if axis == "h":
        w = int(rng.integers(2, cfg.max_square + 1))
        h = int(rng.integers(1, cfg.max_square + 1))
        split = int(rng.integers(1, w))
    else:
        w = int(rng.integers(1, cfg.max_square + 1))
        h = int(rng.integers(2, cfg.max_square + 1))
        split = int(rng.integers(1, h))
    x = int(rng.integers(0, cfg.template_w - w + 1))
    y = int(rng.integers(0, cfg.template_h - h + 1))
    channel = int(rng.integers(0, N_CHANNELS))
    if axis == "h":
        a = Patch(x, y, split, h)
        b = Patch(x + split, y, w - split, h)
    else:
        a = Patch(x, y, w, split)
        b = Patch(x, y + split, w, h - split)
    return NeighborDiff(channel, a, b, axis)


def _sample_sidf(rng: np.random.Generator, cfg: PoolConfig) -> Sidf:
    # Patch A in the left half (its center left of the template axis), B
    # in the same horizontal band with its left edge between A's and the
    # left edge of A's mirror. Widths differ freely; heights match.
    h = int(rng.integers(1, cfg.max_square + 1))
    wa = int(rng.integers(1, cfg.max_square + 1))
    xa = int(rng.integers(0, (cfg.template_w - wa) // 2 + 1))
    y = int(rng.integers(0, cfg.template_h - h + 1))
    # wb capped so the interval [l(A), l(A')] always intersects the
    # placements where B still fits the template.
    wb = int(rng.integers(1, min(cfg.max_square, cfg.template_w - xa) + 1))
    xa_mirror = cfg.template_w - xa - wa
    xb_hi = min(xa_mirror, cfg.template_w - wb)
    xb = int(rng.integers(xa, xb_hi + 1))
    channel = int(rng.integers(0, N_CHANNELS))
    return Sidf(channel, Patch(xa, y, wa, h), Patch(xb, y, wb, h))


def _sample_ssf(rng: np.random.Generator, cfg: PoolConfig) -> Ssf:
    lo, hi = cfg.ssf_side_range
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(0, (cfg.template_w - w) // 2 + 1))
    y = int(rng.integers(0, cfg.template_h - h + 1))
    a = Patch(x, y, w, h)
    half = a.area / 2.0
    subs = []
    for _ in range(3):
        sub = a  # fallback if rejection sampling stalls
        for _ in range(1000):
            sw = int(rng.integers(1, w + 1))
            sh = int(rng.integers(1, h + 1))
            if sw * sh <= half:
                continue
            sx = x + int(rng.integers(0, w - sw + 1))
            sy = y + int(rng.integers(0, h - sh + 1))
            sub = Patch(sx, sy, sw, sh)
            break
        subs.append(sub)
    channel = int(SSF_CHANNELS[rng.integers(0, len(SSF_CHANNELS))])
    return Ssf(channel, a, (subs[0], subs[1], subs[2]))


def gen_pool(cfg: PoolConfig) -> FeaturePool:
    """Generate the candidate pool; a pure function of the config.

    Kinds are emitted in a fixed order (local means, neighbor diffs,
    SIDF, SSF). Every second SIDF is mirrored to the right half so both
    sides of the template are covered.
    """
    if min(cfg.counts().values()) < 0:
        raise InvalidArgumentError("descriptor counts must be >= 0")
    if cfg.max_square > min(cfg.template_w, cfg.template_h):
        raise InvalidArgumentError("max_square exceeds template")
    if cfg.ssf_side_range[0] > cfg.ssf_side_range[1]:
        raise InvalidArgumentError("bad ssf_side_range")
    if cfg.n_ssf > 0 and cfg.ssf_side_range[0] > cfg.template_w:
        raise InvalidArgumentError("ssf patches cannot fit the template")

    rng = np.random.default_rng(cfg.seed)
    descs: list[FeatureDescriptor] = []
    for _ in range(cfg.n_local_mean):
        descs.append(_sample_local_mean(rng, cfg))
    for _ in range(cfg.n_neighbor_diff):
        descs.append(_sample_neighbor_diff(rng, cfg))
    for i in range(cfg.n_sidf):
        d = _sample_sidf(rng, cfg)
        if i % 2 == 1:
            d = mirror_descriptor(d, cfg.template_w)
        descs.append(d)
    for _ in range(cfg.n_ssf):
        descs.append(_sample_ssf(rng, cfg))
    return FeaturePool(cfg.template_w, cfg.template_h, cfg.seed, descs)


def canonical_sidf(d: Sidf, template_w: int) -> Sidf:
    """Mirror a right-half SIDF back to the left-half orientation.

    When A sits exactly on the axis (it equals its own mirror), the
    orientation is picked by where B satisfies the interval rule.
    """
    center = 2 * d.a.x + d.a.w
    if center < template_w:
        return d
    if center == template_w and d.a.x <= d.b.x <= template_w - d.a.x - d.a.w:
        return d
    m = mirror_descriptor(d, template_w)
    assert isinstance(m, Sidf)
    return m


def validate_descriptor(
    d: FeatureDescriptor,
    template_w: int = TEMPLATE_W,
    template_h: int = TEMPLATE_H,
    max_square: int = MAX_SQUARE,
    ssf_side_range: tuple[int, int] = SSF_SIDE_RANGE,
) -> list[str]:
    """Check every kind invariant; returns human-readable violations."""
    bad: list[str] = []

    def check_patch(p: Patch, tag: str, square: int | None):
        if p.w < 1 or p.h < 1:
            bad.append(f"{tag} empty")
        if not p.inside(template_w, template_h):
            bad.append(f"{tag} outside template")
        if square is not None and (p.w > square or p.h > square):
            bad.append(f"{tag} exceeds {square}x{square} max square")

    if not 0 <= d.channel < N_CHANNELS:
        bad.append(f"channel {d.channel} out of range")

    if isinstance(d, LocalMean):
        check_patch(d.a, "patch", max_square)
    elif isinstance(d, NeighborDiff):
        check_patch(d.a, "patch a", None)
        check_patch(d.b, "patch b", None)
        if d.axis == "h":
            adjacent = d.a.x + d.a.w == d.b.x and d.a.y == d.b.y and d.a.h == d.b.h
            union_w, union_h = d.a.w + d.b.w, d.a.h
        elif d.axis == "v":
            adjacent = d.a.y + d.a.h == d.b.y and d.a.x == d.b.x and d.a.w == d.b.w
            union_w, union_h = d.a.w, d.a.h + d.b.h
        else:
            bad.append(f"unknown axis {d.axis!r}")
            adjacent, union_w, union_h = False, 0, 0
        if not adjacent:
            bad.append("patches not edge-adjacent with equal extent")
        if union_w > max_square or union_h > max_square:
            bad.append("union exceeds max square")
    elif isinstance(d, Sidf):
        check_patch(d.a, "patch a", max_square)
        check_patch(d.b, "patch b", max_square)
        if d.a.y != d.b.y or d.a.h != d.b.h:
            bad.append("patches not in the same horizontal band")
        # The interval rule is stated for the left-half orientation; the
        # pool stores mirrored copies too, so canonicalize first.
        c = canonical_sidf(d, template_w)
        mirror_left = template_w - c.a.x - c.a.w
        if not (c.a.x <= c.b.x <= mirror_left):
            bad.append("b's left edge outside [l(a), l(a')]")
    elif isinstance(d, Ssf):
        if d.channel not in SSF_CHANNELS:
            bad.append(f"ssf channel {d.channel} not in L/U/V/G")
        check_patch(d.a, "patch a", None)
        lo, hi = ssf_side_range
        if not (lo <= d.a.w <= hi and lo <= d.a.h <= hi):
            bad.append(f"ssf side lengths outside [{lo}, {hi}]")
        if len(d.subpatches) != 3:
            bad.append("ssf needs exactly 3 sub-patches")
        for i, s in enumerate(d.subpatches):
            if not d.a.contains(s):
                bad.append(f"sub-patch {i} not inside a")
            if 2 * s.area <= d.a.area:
                bad.append(f"sub-patch {i} area not > half of a")
        m = mirror_patch(d.a, template_w)
        if not m.inside(template_w, template_h):
            bad.append("mirror of a outside template")
    else:
        bad.append(f"unknown descriptor type {type(d).__name__}")
    return bad


def validate_pool(pool: FeaturePool, max_square: int = MAX_SQUARE,
                  ssf_side_range: tuple[int, int] = SSF_SIDE_RANGE) -> list[tuple[int, str]]:
    out = []
    for i, d in enumerate(pool.descriptors):
        for msg in validate_descriptor(d, pool.template_w, pool.template_h,
                                       max_square, ssf_side_range):
            out.append((i, msg))
    return out


# --- JSON serialization ---------------------------------------------------

def _patch_to_json(p: Patch) -> list[int]:
    return [p.x, p.y, p.w, p.h]


def _patch_from_json(v) -> Patch:
    return Patch(int(v[0]), int(v[1]), int(v[2]), int(v[3]))


def descriptor_to_json(d: FeatureDescriptor) -> dict:
    out = {"kind": d.kind, "channel": d.channel}
    if isinstance(d, LocalMean):
        out["a"] = _patch_to_json(d.a)
    elif isinstance(d, (NeighborDiff, Sidf)):
        out["a"] = _patch_to_json(d.a)
        out["b"] = _patch_to_json(d.b)
        if isinstance(d, NeighborDiff):
            out["axis"] = d.axis
    elif isinstance(d, Ssf):
        out["a"] = _patch_to_json(d.a)
        out["subpatches"] = [_patch_to_json(s) for s in d.subpatches]
    return out


def descriptor_from_json(obj: dict) -> FeatureDescriptor:
    kind = obj.get("kind")
    channel = int(obj["channel"])
    if kind == "local_mean":
        return LocalMean(channel, _patch_from_json(obj["a"]))
    if kind == "neighbor_diff":
        return NeighborDiff(channel, _patch_from_json(obj["a"]),
                            _patch_from_json(obj["b"]), str(obj["axis"]))
    if kind == "sidf":
        return Sidf(channel, _patch_from_json(obj["a"]), _patch_from_json(obj["b"]))
    if kind == "ssf":
        subs = tuple(_patch_from_json(s) for s in obj["subpatches"])
        if len(subs) != 3:
            raise FormatError("ssf descriptor needs 3 sub-patches")
        return Ssf(channel, _patch_from_json(obj["a"]), subs)
    raise FormatError(f"unknown descriptor kind {kind!r}")


def pool_to_json(pool: FeaturePool) -> str:
    doc = {
        "version": POOL_FORMAT_VERSION,
        "template_w": pool.template_w,
        "template_h": pool.template_h,
        "seed": pool.seed,
        "counts": pool.counts(),
        "descriptors": [descriptor_to_json(d) for d in pool.descriptors],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def pool_from_json(text: str) -> FeaturePool:
    doc = json.loads(text)
    if doc.get("version") != POOL_FORMAT_VERSION:
        raise FormatError(f"unsupported pool format version {doc.get('version')!r}")
    descs = [descriptor_from_json(o) for o in doc["descriptors"]]
    return FeaturePool(int(doc["template_w"]), int(doc["template_h"]),
                       int(doc["seed"]), descs)


def save_pool(pool: FeaturePool, path) -> None:
    with open(path, "w") as f:
        f.write(pool_to_json(pool))


def load_pool(path) -> FeaturePool:
    with open(path) as f:
        return pool_from_json(f.read())
