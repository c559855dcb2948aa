"""Boosted soft-cascade decision forest.

Real AdaBoost over complete depth-d decision trees. Split search runs on
a 256-bin quantization of the feature matrix, so finding the best
(feature, threshold) at a node is one weighted histogram plus a cumsum
per candidate feature. Leaves carry half log-odds scores. After training,
per-tree rejection thresholds are calibrated from the running scores of
the training positives so that sliding-window scoring can exit early.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channels import DEFAULT_CELL_SIZE, IntegralStack, channel_config_fingerprint
from .errors import FormatError, InsufficientDataError, InvalidArgumentError
from .feateval import NORM_EPS, PoolEvaluator, eval_descriptor, window_stats
from .featpool import FeaturePool, descriptor_to_json, descriptor_from_json

N_BINS = 256
LEAF_EPS = 1e-4  # smoothing inside leaf log-odds
CASCADE_MARGIN = 0.1
CASCADE_DROP_PERCENTILE = 1.0
MODEL_FORMAT_VERSION = 1


@dataclass
class Quantized:
    """8-bit binned feature matrix plus the raw values of bin boundaries.

    bin of x = floor(255 * (x - min) / (max - min)), clamped to [0, 255].
    edges[f][t] is the raw threshold between bins t and t+1: a raw value
    x falls in bins <= t exactly when x < edges[f][t].
    """

    bins: np.ndarray  # (n_samples, n_features) uint8
    lo: np.ndarray  # per-feature min
    hi: np.ndarray  # per-feature max
    degenerate: np.ndarray  # per-feature bool, min == max

    def raw_threshold(self, feature: int, bin_t: int) -> float:
        lo, hi = float(self.lo[feature]), float(self.hi[feature])
        return lo + (bin_t + 1) * (hi - lo) / (N_BINS - 1)


def quantize(features: np.ndarray) -> Quantized:
    """Quantize each feature column to 256 equal-width bins."""
    x = np.asarray(features, dtype=np.float64)
    if not np.isfinite(x).all():
        raise InvalidArgumentError("features must be finite")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    b = np.floor((N_BINS - 1) * (x - lo) / safe)
    bins = np.clip(b, 0, N_BINS - 1).astype(np.uint8)
    bins[:, degenerate] = 0
    return Quantized(bins, lo, hi, degenerate)


@dataclass
class DecisionTree:
    """Complete binary tree in breadth-first (heap) layout.

    Internal node i has children 2i+1, 2i+2; the 2^depth leaves follow
    the 2^depth - 1 internal nodes. Both the training-time bin threshold
    and the equivalent raw-value threshold are kept: training paths
    compare bins, detection paths compare raw feature values, and both
    route left exactly when the value is below the boundary.
    """

    depth: int
    features: np.ndarray  # (2^d - 1,) int32 pool indices
    bin_thresholds: np.ndarray  # (2^d - 1,) int16
    thresholds: np.ndarray  # (2^d - 1,) float64 raw boundaries
    leaves: np.ndarray  # (2^d,) float64 scores

    @property
    def n_internal(self) -> int:
        return (1 << self.depth) - 1

    def predict_binned(self, bins: np.ndarray) -> np.ndarray:
        idx = np.zeros(bins.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.features[idx]
            go_right = bins[np.arange(bins.shape[0]), f] > self.bin_thresholds[idx]
            idx = 2 * idx + 1 + go_right
        return self.leaves[idx - self.n_internal]

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        idx = np.zeros(x.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.features[idx]
            go_right = x[np.arange(x.shape[0]), f] >= self.thresholds[idx]
            idx = 2 * idx + 1 + go_right
        return self.leaves[idx - self.n_internal]


def _best_split_for_feature(bins_col: np.ndarray, wpos: np.ndarray, wneg: np.ndarray
                            ) -> tuple[float, int]:
    """Minimal weighted 0-1 error over the 255 bin boundaries.

    Returns (error, bin threshold); samples with bin <= t go left, each
    side predicts its weighted-majority class. Lowest t wins ties.
    """
    hp = np.bincount(bins_col, weights=wpos, minlength=N_BINS)
    hn = np.bincount(bins_col, weights=wneg, minlength=N_BINS)
    cp = hp.cumsum()
    cn = hn.cumsum()
    tp, tn = cp[-1], cn[-1]
    left_err = np.minimum(cp[:-1], cn[:-1])
    right_err = np.minimum(tp - cp[:-1], tn - cn[:-1])
    err = left_err + right_err
    t = int(np.argmin(err))
    return float(err[t]), t


def train_tree(
    q: Quantized,
    labels: np.ndarray,
    weights: np.ndarray,
    candidates: np.ndarray,
    depth: int,
) -> DecisionTree:
    """Greedy complete tree minimizing weighted classification error.

    Ties break toward the lowest pool feature index, then the lowest
    threshold. Nodes that receive no samples keep a default split and
    inherit leaf scores from the nearest populated ancestor.
    """
    if depth < 1 or depth > 4:
        raise InvalidArgumentError("tree depth must be in 1..4")
    if weights.min() < 0 or weights.sum() <= 0:
        raise InvalidArgumentError("weights must be non-negative with positive sum")
    n_internal = (1 << depth) - 1
    n_nodes = 2 * n_internal + 1
    cand = np.sort(np.asarray(candidates, dtype=np.int64))
    cand = cand[~q.degenerate[cand]]  # degenerate features are unsplittable

    features = np.zeros(n_internal, dtype=np.int32)
    bin_thresholds = np.zeros(n_internal, dtype=np.int16)
    thresholds = np.zeros(n_internal, dtype=np.float64)
    leaves = np.zeros(n_internal + 1, dtype=np.float64)

    default_feature = int(cand[0]) if len(cand) else 0
    wpos_all = np.where(labels > 0, weights, 0.0)
    wneg_all = np.where(labels > 0, 0.0, weights)

    # member[i] = sample indices reaching node i; parent_w[i] = (W+, W-)
    member: list[np.ndarray | None] = [None] * n_nodes
    member[0] = np.arange(q.bins.shape[0])
    node_w = [(float(wpos_all.sum()), float(wneg_all.sum()))] + [None] * (n_nodes - 1)

    for i in range(n_internal):
        idx = member[i]
        best = (np.inf, default_feature, 0)
        if idx is not None and len(idx) and len(cand):
            wp = wpos_all[idx]
            wn = wneg_all[idx]
            sub = q.bins[idx]
            for f in cand:
                err, t = _best_split_for_feature(sub[:, f], wp, wn)
                if err < best[0]:
                    best = (err, int(f), t)
        _, f, t = best
        features[i] = f
        bin_thresholds[i] = t
        thresholds[i] = q.raw_threshold(f, t)
        left, right = 2 * i + 1, 2 * i + 2
        if idx is not None and len(idx):
            go_left = q.bins[idx, f] <= t
            member[left] = idx[go_left]
            member[right] = idx[~go_left]
        for child in (left, right):
            ci = member[child]
            if ci is not None and len(ci):
                node_w[child] = (float(wpos_all[ci].sum()), float(wneg_all[ci].sum()))
            else:
                node_w[child] = node_w[i]  # inherit parent distribution

    for li in range(n_internal + 1):
        wp, wn = node_w[n_internal + li]
        leaves[li] = 0.5 * np.log((wp + LEAF_EPS) / (wn + LEAF_EPS))
    return DecisionTree(depth, features, bin_thresholds, thresholds, leaves)


@dataclass
class BoostTrace:
    train_errors: list[float] = field(default_factory=list)
    weight_sum_errors: list[float] = field(default_factory=list)


def boost(
    q: Quantized,
    labels: np.ndarray,
    n_trees: int,
    depth: int,
    feature_fraction: float,
    seed: int,
) -> tuple[list[DecisionTree], BoostTrace]:
    """Real AdaBoost with per-tree feature subsampling.

    Weights start uniform within each class (each class carrying half the
    mass), are multiplied by exp(-y * h(x)) after every tree, and are
    renormalized to sum 1. The training error recorded per tree is the
    0-1 error of the running ensemble under those initial class-balanced
    weights.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = int((labels > 0).sum())
    n_neg = int((labels < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InsufficientDataError("need at least one sample of each class")
    if not 0 < feature_fraction <= 1:
        raise InvalidArgumentError("feature_fraction must be in (0, 1]")

    n, n_features = q.bins.shape
    init_w = np.where(labels > 0, 0.5 / n_pos, 0.5 / n_neg)
    w = init_w.copy()
    rng = np.random.default_rng(seed)
    k = max(1, int(round(feature_fraction * n_features)))

    trees: list[DecisionTree] = []
    trace = BoostTrace()
    scores = np.zeros(n)
    for _ in range(n_trees):
        cand = rng.choice(n_features, size=k, replace=False)
        tree = train_tree(q, labels, w, cand, depth)
        h = tree.predict_binned(q.bins)
        scores += h
        w *= np.exp(-labels * h)
        total = w.sum()
        w /= total
        trace.weight_sum_errors.append(abs(float(w.sum()) - 1.0))
        pred = np.where(scores > 0, 1.0, -1.0)
        trace.train_errors.append(float(init_w[pred != labels].sum()))
        trees.append(tree)
    return trees, trace


def predict_forest_binned(trees: list[DecisionTree], bins: np.ndarray) -> np.ndarray:
    out = np.zeros(bins.shape[0])
    for t in trees:
        out += t.predict_binned(bins)
    return out


def predict_forest_raw(trees: list[DecisionTree], x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[0])
    for t in trees:
        out += t.predict_raw(x)
    return out


def set_cascade(trees: list[DecisionTree], pos_bins: np.ndarray) -> np.ndarray:
    """Per-tree rejection thresholds from training-positive running scores.

    The threshold after tree t is the minimum running score among
    retained positives minus a fixed margin; positives below the 1st
    percentile at any stage are dropped from the minimum so a handful of
    stragglers cannot disable the cascade.
    """
    n = pos_bins.shape[0]
    running = np.zeros((len(trees), n))
    acc = np.zeros(n)
    for t, tree in enumerate(trees):
        acc += tree.predict_binned(pos_bins)
        running[t] = acc
    retained = np.ones(n, dtype=bool)
    for t in range(len(trees)):
        cut = np.percentile(running[t], CASCADE_DROP_PERCENTILE)
        retained &= running[t] >= cut
    if not retained.any():
        retained[:] = True
    return running[:, retained].min(axis=1) - CASCADE_MARGIN


@dataclass
class BoostedModel:
    pool: FeaturePool
    trees: list[DecisionTree]
    cascade_thresholds: np.ndarray
    cell_size: int = DEFAULT_CELL_SIZE
    norm_enabled: bool = True
    channel_config: dict = field(default_factory=channel_config_fingerprint)

    @property
    def template_w(self) -> int:
        return self.pool.template_w

    @property
    def template_h(self) -> int:
        return self.pool.template_h

    def used_feature_indices(self) -> np.ndarray:
        return np.unique(np.concatenate([t.features for t in self.trees]))

    def evaluator(self) -> PoolEvaluator:
        return PoolEvaluator(self.pool, self.norm_enabled)


def score_window(
    model: BoostedModel,
    integral: IntegralStack,
    wx: int,
    wy: int,
    use_cascade: bool = True,
) -> tuple[float, int | None]:
    """Score one window tree by tree; returns (score, rejection stage).

    The rejection stage is None when every tree voted; the score then
    equals the full leaf-score sum.
    """
    ns = window_stats(integral, wx, wy, model.template_w, model.template_h)
    running = 0.0
    for t, tree in enumerate(model.trees):
        i = 0
        for _ in range(tree.depth):
            d = model.pool.descriptors[int(tree.features[i])]
            v = eval_descriptor(
                integral, d, wx, wy, ns, model.template_w, model.norm_enabled
            )
            i = 2 * i + 1 + (v >= tree.thresholds[i])
        running += float(tree.leaves[i - tree.n_internal])
        if use_cascade and running < model.cascade_thresholds[t]:
            return running, t
    return running, None


def score_windows_batch(
    model: BoostedModel,
    ev: PoolEvaluator,
    integral: IntegralStack,
    ox: np.ndarray,
    oy: np.ndarray,
    use_cascade: bool = True,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Vectorized cascade scoring of many windows on one integral stack.

    Returns (scores, rejected_at, n_tree_evals); rejected_at is -1 for
    windows that survived all trees. Scores of rejected windows are the
    running sums at their rejection stage.
    """
    ox = np.asarray(ox, dtype=np.int64)
    oy = np.asarray(oy, dtype=np.int64)
    n = len(ox)
    scores = np.zeros(n)
    rejected_at = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return scores, rejected_at, 0
    mu_l, sigma_l, mu_g = ev.window_stats_arrays(integral, ox, oy)
    alive = np.arange(n)
    n_evals = 0
    for t, tree in enumerate(model.trees):
        if len(alive) == 0:
            break
        node = np.zeros(len(alive), dtype=np.int64)
        for _ in range(tree.depth):
            for node_id in np.unique(node):
                at = node == node_id
                rows = alive[at]
                v = ev.eval_feature(
                    int(tree.features[node_id]), integral,
                    ox[rows], oy[rows], mu_l[rows], sigma_l[rows], mu_g[rows],
                )
                node[at] = 2 * node_id + 1 + (v >= tree.thresholds[node_id])
        n_evals += len(alive)
        scores[alive] += tree.leaves[node - tree.n_internal]
        if use_cascade:
            rej = scores[alive] < model.cascade_thresholds[t]
            rejected_at[alive[rej]] = t
            alive = alive[~rej]
    return scores, rejected_at, n_evals


# --- model serialization ----------------------------------------------------

def _tree_to_json(t: DecisionTree) -> dict:
    nodes = [
        {"feature": int(f), "bin": int(b), "threshold": float(r)}
        for f, b, r in zip(t.features, t.bin_thresholds, t.thresholds)
    ]
    nodes += [{"score": float(s)} for s in t.leaves]
    return {"depth": t.depth, "nodes": nodes}


def _tree_from_json(obj: dict) -> DecisionTree:
    depth = int(obj["depth"])
    n_internal = (1 << depth) - 1
    nodes = obj["nodes"]
    if len(nodes) != 2 * n_internal + 1:
        raise FormatError("tree node count does not match depth")
    features = np.array([n["feature"] for n in nodes[:n_internal]], dtype=np.int32)
    bins = np.array([n["bin"] for n in nodes[:n_internal]], dtype=np.int16)
    thrs = np.array([n["threshold"] for n in nodes[:n_internal]], dtype=np.float64)
    leaves = np.array([n["score"] for n in nodes[n_internal:]], dtype=np.float64)
    return DecisionTree(depth, features, bins, thrs, leaves)


def model_to_json(model: BoostedModel) -> str:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "template": {
            "w_cells": model.template_w,
            "h_cells": model.template_h,
            "cell_size": model.cell_size,
        },
        "channel_config": model.channel_config,
        "pool": {
            "template_w": model.pool.template_w,
            "template_h": model.pool.template_h,
            "seed": model.pool.seed,
            "descriptors": [descriptor_to_json(d) for d in model.pool.descriptors],
        },
        "trees": [_tree_to_json(t) for t in model.trees],
        "cascade_thresholds": [float(v) for v in model.cascade_thresholds],
        "normalization": {
            "enabled": model.norm_enabled,
            "epsilon": NORM_EPS,
            "luv_scale": model.channel_config["luv_scale"],
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> BoostedModel:
    doc = json.loads(text)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {doc.get('version')!r}")
    fingerprint = channel_config_fingerprint()
    if doc["channel_config"] != fingerprint:
        raise FormatError("model was built with different channel constants")
    p = doc["pool"]
    pool = FeaturePool(
        int(p["template_w"]), int(p["template_h"]), int(p["seed"]),
        [descriptor_from_json(o) for o in p["descriptors"]],
    )
    trees = [_tree_from_json(t) for t in doc["trees"]]
    thr = np.array(doc["cascade_thresholds"], dtype=np.float64)
    if len(thr) != len(trees):
        raise FormatError("cascade threshold count does not match tree count")
    return BoostedModel(
        pool=pool,
        trees=trees,
        cascade_thresholds=thr,
        cell_size=int(doc["template"]["cell_size"]),
        norm_enabled=bool(doc["normalization"]["enabled"]),
    )


def save_model(model: BoostedModel, path) -> None:
    with open(path, "w") as f:
        f.write(model_to_json(model))


def load_model(path) -> BoostedModel:
    with open(path) as f:
        return model_from_json(f.read())
