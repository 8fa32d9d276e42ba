"""Histogram-based gradient-boosted regression trees (squared loss).

Trees grow best-first up to ``max_leaves`` leaves over quantile-binned
features.  NaN is a first-class "missing" value: every split learns which
side missing rows go to.  The tree structure is fitted on a bagged row
subset; leaf outputs are the mean residual of all training rows reaching
the leaf, which keeps the training loss monotone under shrinkage.
"""

import heapq
import json
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numba
import numpy as np

from .rng import substream

FORMAT_NAME = "matcache-gbdt"
FORMAT_VERSION = 1
_ALL_LEFT = float(np.finfo(np.float64).max)
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 32
    max_leaves: int = 32
    learning_rate: float = 0.1
    bagging_fraction: float = 0.8
    bagging_frequency: int = 5
    n_bins: int = 64
    min_samples_leaf: int = 20
    seed: int = 0

    def __post_init__(self):
        # lr = 0 is accepted as a degenerate "base score only" model
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must be in [0, 1]")
        if not 0 < self.bagging_fraction <= 1:
            raise ValueError("bagging_fraction must be in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be ≥ 2")
        if not 2 <= self.n_bins <= 255:
            raise ValueError("n_bins must be in [2, 255]")
        if self.n_trees < 0 or self.min_samples_leaf < 1 or self.bagging_frequency < 0:
            raise ValueError("n_trees ≥ 0, min_samples_leaf ≥ 1, bagging_frequency ≥ 0")


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _build_hist(binned, rows, grad, n_slots):
    d = binned.shape[1]
    hg = np.zeros((d, n_slots))
    hc = np.zeros((d, n_slots), dtype=np.int64)
    for i in range(rows.shape[0]):
        r = rows[i]
        g = grad[r]
        for f in range(d):
            b = binned[r, f]
            hg[f, b] += g
            hc[f, b] += 1
    return hg, hc


@numba.njit(cache=True)
def _best_split(hg, hc, n_bins_f, missing_slot, min_leaf):
    d = hg.shape[0]
    best_gain = 0.0
    best_f = -1
    best_b = -1
    best_ml = False
    for f in range(d):
        nb = n_bins_f[f]
        gm = hg[f, missing_slot]
        cm = hc[f, missing_slot]
        gt = gm
        ct = cm
        for b in range(nb):
            gt += hg[f, b]
            ct += hc[f, b]
        if ct < 2 * min_leaf:
            continue
        parent = gt * gt / ct
        gl = 0.0
        cl = 0
        for b in range(nb):
            gl += hg[f, b]
            cl += hc[f, b]
            # missing goes right
            cr = ct - cl
            if cl >= min_leaf and cr >= min_leaf:
                gr = gt - gl
                gain = gl * gl / cl + gr * gr / cr - parent
                if gain > best_gain:
                    best_gain, best_f, best_b, best_ml = gain, f, b, False
            # missing goes left
            if cm > 0:
                cl2 = cl + cm
                cr2 = ct - cl2
                if cl2 >= min_leaf and cr2 >= min_leaf:
                    gl2 = gl + gm
                    gr2 = gt - gl2
                    gain = gl2 * gl2 / cl2 + gr2 * gr2 / cr2 - parent
                    if gain > best_gain:
                        best_gain, best_f, best_b, best_ml = gain, f, b, True
    return best_gain, best_f, best_b, best_ml


@numba.njit(cache=True)
def _partition(binned, rows, f, b, missing_left, missing_slot):
    n = rows.shape[0]
    mask = np.empty(n, dtype=np.bool_)
    nl = 0
    for i in range(n):
        v = binned[rows[i], f]
        go_left = missing_left if v == missing_slot else v <= b
        mask[i] = go_left
        if go_left:
            nl += 1
    left = np.empty(nl, dtype=rows.dtype)
    right = np.empty(n - nl, dtype=rows.dtype)
    il = 0
    ir = 0
    for i in range(n):
        if mask[i]:
            left[il] = rows[i]
            il += 1
        else:
            right[ir] = rows[i]
            ir += 1
    return left, right


@numba.njit(cache=True)
def _leaf_of_binned(binned, feature, bin_thr, missing_left, left, right, missing_slot):
    n = binned.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            v = binned[i, feature[node]]
            if v == missing_slot:
                node = left[node] if missing_left[node] else right[node]
            elif v <= bin_thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _predict_rows(X, roots, feature, threshold, missing_left, left, right, value, base, lr):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while left[node] >= 0:
                x = X[i, feature[node]]
                if np.isnan(x):
                    node = left[node] if missing_left[node] else right[node]
                elif x <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = base + lr * acc
    return out


# --------------------------------------------------------------------------
# model


class Tree:
    """Array-backed binary tree; ``left[i] < 0`` marks a leaf."""

    __slots__ = ("feature", "threshold", "missing_left", "left", "right", "value")

    def __init__(self, feature, threshold, missing_left, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.missing_left = np.asarray(missing_left, dtype=np.bool_)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_leaves(self):
        return int((self.left < 0).sum())

    def to_node(self, i=0):
        if self.left[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "missing_left": bool(self.missing_left[i]),
            "left": self.to_node(int(self.left[i])),
            "right": self.to_node(int(self.right[i])),
        }

    @classmethod
    def from_node(cls, root):
        cols = {k: [] for k in cls.__slots__}

        def add(node):
            i = len(cols["value"])
            for k, v in zip(cls.__slots__, (-1, 0.0, False, -1, -1, 0.0)):
                cols[k].append(v)
            if "leaf" in node:
                cols["value"][i] = float(node["leaf"])
                return i
            cols["feature"][i] = int(node["feature"])
            cols["threshold"][i] = float(node["threshold"])
            cols["missing_left"][i] = bool(node["missing_left"])
            cols["left"][i] = add(node["left"])
            cols["right"][i] = add(node["right"])
            return i

        add(root)
        return cls(**cols)


class Model:
    """An immutable boosted ensemble: ``base + lr * sum(tree leaf values)``."""

    def __init__(self, base_score: float, learning_rate: float, n_features: int, trees: Sequence[Tree]):
        self.base_score = float(base_score)
        self.learning_rate = float(learning_rate)
        self.n_features = int(n_features)
        self.trees = tuple(trees)
        self._flatten()

    def _flatten(self):
        roots, offset = [], 0
        parts = {k: [] for k in Tree.__slots__}
        for t in self.trees:
            roots.append(offset)
            for k in Tree.__slots__:
                a = getattr(t, k)
                if k in ("left", "right"):
                    a = np.where(a >= 0, a + offset, -1)
                parts[k].append(a)
            offset += len(t.value)
        self._roots = np.asarray(roots, dtype=np.int64)
        if self.trees:
            flat = [np.concatenate(parts[k]) for k in Tree.__slots__]
        else:
            flat = [np.zeros(1, dtype=getattr(np, dt)) for dt in ("int64", "float64", "bool_", "int64", "int64", "float64")]
        for a in flat:
            a.setflags(write=False)
        self._flat = tuple(flat)

    def predict_batch(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"feature width mismatch: expected {self.n_features}, got {X.shape[-1]}")
        f, thr, ml, left, right, value = self._flat
        return _predict_rows(X, self._roots, f, thr, ml, left, right, value, self.base_score, self.learning_rate)

    def predict(self, x) -> float:
        return float(self.predict_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "trees": [t.to_node() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported model document")
        trees = [Tree.from_node(n) for n in d["trees"]]
        return cls(d["base_score"], d["learning_rate"], d["n_features"], trees)

    @classmethod
    def from_json(cls, text: str) -> "Model":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# training


def bin_edges(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Upper bin edges: value ``x`` falls in bin ``searchsorted(edges, x)``."""
    vals = col[~np.isnan(col)]
    if vals.size == 0:
        return np.empty(0)
    uniq = np.unique(vals)
    if uniq.size <= n_bins:
        return uniq[:-1]
    qs = np.quantile(vals, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    edges = np.unique(qs)
    return edges[edges < uniq[-1]]


def _bin(X, edges, missing_slot):
    binned = np.empty(X.shape, dtype=np.uint8)
    for f, e in enumerate(edges):
        col = X[:, f]
        b = np.searchsorted(e, col, side="left")
        b[np.isnan(col)] = missing_slot
        binned[:, f] = b
    return binned


def _grow_tree(binned, grad, rows, n_bins_f, edges, config, missing_slot):
    n_slots = missing_slot + 1
    feature, bin_thr, threshold, mleft, left, right = [], [], [], [], [], []

    def new_node():
        for col, v in ((feature, -1), (bin_thr, 0), (threshold, 0.0), (mleft, False), (left, -1), (right, -1)):
            col.append(v)
        return len(feature) - 1

    hist, rows_of, heap = {}, {}, []

    def consider(node, node_rows, hg, hc):
        hist[node], rows_of[node] = (hg, hc), node_rows
        gain, f, b, ml = _best_split(hg, hc, n_bins_f, missing_slot, config.min_samples_leaf)
        if f >= 0 and gain > _MIN_GAIN:
            heapq.heappush(heap, (-gain, node, f, b, ml))

    root = new_node()
    consider(root, rows, *_build_hist(binned, rows, grad, n_slots))
    n_leaves = 1
    while heap and n_leaves < config.max_leaves:
        _, node, f, b, ml = heapq.heappop(heap)
        lrows, rrows = _partition(binned, rows_of.pop(node), f, b, ml, missing_slot)
        pg, pc = hist.pop(node)
        lo, hi = new_node(), new_node()
        feature[node], bin_thr[node], mleft[node] = f, b, ml
        threshold[node] = float(edges[f][b]) if b < len(edges[f]) else _ALL_LEFT
        left[node], right[node] = lo, hi
        n_leaves += 1
        # build the smaller child, derive the sibling by subtraction
        if len(lrows) <= len(rrows):
            sg, sc = _build_hist(binned, lrows, grad, n_slots)
            consider(lo, lrows, sg, sc)
            consider(hi, rrows, pg - sg, pc - sc)
        else:
            sg, sc = _build_hist(binned, rrows, grad, n_slots)
            consider(hi, rrows, sg, sc)
            consider(lo, lrows, pg - sg, pc - sc)
    return feature, bin_thr, threshold, mleft, left, right


def _fit(X, y, config: GbdtConfig, track_loss=False):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples to train")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    missing_slot = config.n_bins
    edges = [bin_edges(X[:, f], config.n_bins) for f in range(d)]
    n_bins_f = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    binned = _bin(X, edges, missing_slot)

    base = float(y.mean())
    pred = np.full(n, base)
    rng = substream(config.seed, "bagging")
    bag_size = max(1, int(config.bagging_fraction * n))
    all_rows = np.arange(n, dtype=np.int64)
    bag = all_rows
    trees, losses = [], []
    if track_loss:
        losses.append(float(np.mean((y - pred) ** 2)))
    for t in range(config.n_trees):
        if config.bagging_fraction < 1 and config.bagging_frequency > 0 and t % config.bagging_frequency == 0:
            bag = np.sort(rng.choice(n, size=bag_size, replace=False)).astype(np.int64)
        resid = y - pred
        feature, bin_thr, threshold, mleft, left, right = _grow_tree(
            binned, resid, bag, n_bins_f, edges, config, missing_slot
        )
        leaf = _leaf_of_binned(
            binned,
            np.asarray(feature, dtype=np.int64),
            np.asarray(bin_thr, dtype=np.int64),
            np.asarray(mleft, dtype=np.bool_),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            missing_slot,
        )
        m = len(feature)
        sums = np.bincount(leaf, weights=resid, minlength=m)
        counts = np.bincount(leaf, minlength=m)
        value = np.divide(sums, counts, out=np.zeros(m), where=counts > 0)
        value[np.asarray(left) >= 0] = 0.0
        pred = pred + config.learning_rate * value[leaf]
        trees.append(Tree(feature, threshold, mleft, left, right, value))
        if track_loss:
            losses.append(float(np.mean((y - pred) ** 2)))
    return Model(base, config.learning_rate, d, trees), losses


def train(X, y, config: Optional[GbdtConfig] = None) -> Model:
    return _fit(X, y, config or GbdtConfig())[0]


def train_loss_curve(X, y, config: Optional[GbdtConfig] = None) -> List[float]:
    """Training-set MSE: entry 0 is the base score, entry ``t`` follows tree ``t``."""
    return _fit(X, y, config or GbdtConfig(), track_loss=True)[1]


def predict(model: Model, features) -> float:
    return model.predict(features)


def predict_batch(model: Model, rows) -> np.ndarray:
    return model.predict_batch(rows)


def to_log_target(distance):
    return np.log2(1.0 + np.asarray(distance, dtype=np.float64))


def from_log_target(y):
    return np.exp2(np.asarray(y, dtype=np.float64)) - 1.0


__all__ = [
    "GbdtConfig",
    "Model",
    "Tree",
    "train",
    "train_loss_curve",
    "predict",
    "predict_batch",
    "bin_edges",
    "to_log_target",
    "from_log_target",
]

