"""Multiclass gradient-boosted decision trees with balanced class weights.

A deliberately compact histogram GBM: softmax objective, one depth-
limited regression tree per class per iteration, fit with Newton leaf
values to the weighted gradients/hessians on quantile-binned features.
No subsampling and no randomized tie-breaking, so training is exactly
deterministic for fixed inputs.  Leaf values use a pure -G/H step
(no L2 term) with a magnitude cap, which keeps "duplicate every sample
of a class" exactly equivalent to "double that class's weight".

Also hosts the evaluation primitives (macro F1, confusion matrix) and a
self-describing binary model container.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

_MODEL_MAGIC = b"LMGB"
_MODEL_VERSION = 1

_MAX_LEAF = 10.0  # cap on |leaf value| before learning-rate scaling
_MIN_HESSIAN = 1e-16
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GbtParams:
    """Training knobs; only iteration count and class weighting are tuned."""

    n_iterations: int = 1000
    learning_rate: float = 0.1
    max_depth: int = 6
    min_samples_leaf: int = 20
    n_bins: int = 255
    seed: int = 0

    def validate(self) -> None:
        if self.n_iterations < 0:
            raise ValidationError("n_iterations must be >= 0")
        for name in ("learning_rate", "max_depth", "min_samples_leaf", "n_bins"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.n_bins > 255:
            raise ValidationError("n_bins must be <= 255")


@dataclass
class Tree:
    """Flat-array decision tree; feature == -1 marks a leaf."""

    feature: np.ndarray  # int32
    threshold_bin: np.ndarray  # int32, go left iff bin <= threshold
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf values (learning rate included)

    def predict_binned(self, xb: np.ndarray) -> np.ndarray:
        node = np.zeros(xb.shape[0], dtype=np.int32)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = xb[idx, self.feature[cur]] <= self.threshold_bin[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.value[node]


# ---------------------------------------------------------------------------
# Quantile binning
# ---------------------------------------------------------------------------

def fit_bin_edges(x: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-feature bin edges: exact midpoints when the distinct values
    fit within n_bins, quantile cuts otherwise."""
    edges = []
    for j in range(x.shape[1]):
        col = x[:, j]
        uniq = np.unique(col)
        if uniq.size <= 1:
            edges.append(np.empty(0))
        elif uniq.size <= n_bins:
            edges.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
            edges.append(np.unique(qs))
    return edges


def apply_bins(x: np.ndarray, edges: Sequence[np.ndarray]) -> np.ndarray:
    """Map feature values onto bin indices (uint8); boundary goes left."""
    out = np.empty(x.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, x[:, j], side="left")
    return out


# ---------------------------------------------------------------------------
# Softmax objective
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logloss_gradients(
    logits: np.ndarray, y_index: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted per-sample gradient and hessian of the softmax log-loss
    with respect to each class logit: g = w*(p - 1{y=c}), h = w*p*(1-p)."""
    p = softmax(logits)
    g = p.copy()
    g[np.arange(y_index.size), y_index] -= 1.0
    g *= weights[:, None]
    h = weights[:, None] * p * (1.0 - p)
    return g, h


def weighted_logloss(logits: np.ndarray, y_index: np.ndarray, weights: np.ndarray) -> float:
    p = softmax(logits)
    picked = np.maximum(p[np.arange(y_index.size), y_index], 1e-300)
    return float(-(weights * np.log(picked)).sum() / weights.sum())


# ---------------------------------------------------------------------------
# Tree growing
# ---------------------------------------------------------------------------

def _best_split(
    xb: np.ndarray,
    idx: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    n_bins: int,
    min_samples_leaf: int,
) -> tuple[int, int, float] | None:
    """Best (feature, threshold_bin, gain) over all features at once.

    Histograms for every feature are built in a single bincount pass
    over a flattened (sample, feature) -> feature*n_bins + bin index.
    """
    n, n_features = len(idx), xb.shape[1]
    offsets = (np.arange(n_features, dtype=np.int64) * n_bins)[None, :]
    flat = (xb[idx].astype(np.int64) + offsets).ravel()
    size = n_features * n_bins
    hist_g = np.bincount(flat, weights=np.repeat(g[idx], n_features), minlength=size)
    hist_h = np.bincount(flat, weights=np.repeat(h[idx], n_features), minlength=size)
    hist_n = np.bincount(flat, minlength=size)
    hist_g = hist_g.reshape(n_features, n_bins)
    hist_h = hist_h.reshape(n_features, n_bins)
    hist_n = hist_n.reshape(n_features, n_bins)

    gl = np.cumsum(hist_g, axis=1)[:, :-1]
    hl = np.cumsum(hist_h, axis=1)[:, :-1]
    nl = np.cumsum(hist_n, axis=1)[:, :-1]
    g_tot = float(g[idx].sum())
    h_tot = float(h[idx].sum())
    gr = g_tot - gl
    hr = h_tot - hl
    nr = n - nl

    def _score(gs, hs):
        return np.where(hs > _MIN_HESSIAN, np.square(gs) / np.maximum(hs, _MIN_HESSIAN), 0.0)

    parent = (g_tot * g_tot / h_tot) if h_tot > _MIN_HESSIAN else 0.0
    gain = _score(gl, hl) + _score(gr, hr) - parent
    gain[(nl < min_samples_leaf) | (nr < min_samples_leaf)] = -np.inf

    best = int(np.argmax(gain))
    best_gain = float(gain.ravel()[best])
    if not np.isfinite(best_gain) or best_gain <= _MIN_GAIN:
        return None
    feature, threshold = divmod(best, n_bins - 1)
    return feature, threshold, best_gain


def _leaf_value(g_sum: float, h_sum: float, learning_rate: float) -> float:
    if h_sum <= _MIN_HESSIAN:
        return 0.0
    return float(np.clip(-g_sum / h_sum, -_MAX_LEAF, _MAX_LEAF) * learning_rate)


def _grow_tree(
    xb: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbtParams
) -> tuple[Tree, np.ndarray]:
    """Grow one regression tree; returns it plus its output per sample."""
    n = xb.shape[0]
    preds = np.zeros(n)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(-1)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    queue = [(root, np.arange(n), 0)]
    while queue:
        node, idx, depth = queue.pop(0)
        split = None
        if depth < params.max_depth and idx.size >= 2 * params.min_samples_leaf:
            split = _best_split(xb, idx, g, h, params.n_bins, params.min_samples_leaf)
        if split is None:
            v = _leaf_value(float(g[idx].sum()), float(h[idx].sum()), params.learning_rate)
            value[node] = v
            preds[idx] = v
            continue
        f, t, _ = split
        go_left = xb[idx, f] <= t
        feature[node] = f
        threshold[node] = t
        lid, rid = new_node(), new_node()
        left[node] = lid
        right[node] = rid
        queue.append((lid, idx[go_left], depth + 1))
        queue.append((rid, idx[~go_left], depth + 1))

    tree = Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold_bin=np.asarray(threshold, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )
    return tree, preds


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass
class GbtModel:
    """Trained ensemble: trees[iteration][class], plus binning and schema."""

    params: GbtParams
    classes: np.ndarray  # sorted class ids
    bin_edges: list[np.ndarray]
    trees: list[list[Tree]]
    schema_hash: str = ""
    train_losses: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.bin_edges)

    def raw_logits(self, x: np.ndarray) -> np.ndarray:
        xb = apply_bins(x, self.bin_edges)
        logits = np.zeros((x.shape[0], len(self.classes)))
        for per_class in self.trees:
            for c, tree in enumerate(per_class):
                logits[:, c] += tree.predict_binned(xb)
        return logits


def balanced_weights(labels: Sequence[int]) -> dict[int, float]:
    """Per-class weight N_total / (K_present * N_c)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("cannot compute class weights for empty labels")
    classes, counts = np.unique(labels, return_counts=True)
    total = labels.size
    k = classes.size
    return {int(c): total / (k * int(n)) for c, n in zip(classes, counts)}


def fit(
    x: np.ndarray,
    y: Sequence[int],
    class_weight: Mapping[int, float] | None = None,
    params: GbtParams | None = None,
    schema_hash: str = "",
) -> GbtModel:
    """Train the multiclass GBM; deterministic for fixed inputs."""
    params = params or GbtParams()
    params.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2:
        raise ValidationError("feature matrix must be 2-dimensional")
    if np.isnan(x).any():
        raise ValidationError("feature matrix contains NaN")
    if y.shape[0] != x.shape[0]:
        raise ValidationError(f"{y.shape[0]} labels for {x.shape[0]} rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("training data contains a single class")

    class_to_index = {int(c): i for i, c in enumerate(classes)}
    y_index = np.array([class_to_index[int(v)] for v in y])
    if class_weight is None:
        weights = np.ones(x.shape[0])
    else:
        weights = np.array([class_weight[int(v)] for v in y], dtype=np.float64)

    edges = fit_bin_edges(x, params.n_bins)
    xb = apply_bins(x, edges)

    n, k = x.shape[0], classes.size
    logits = np.zeros((n, k))
    losses = [weighted_logloss(logits, y_index, weights)]
    trees: list[list[Tree]] = []
    for _ in range(params.n_iterations):
        g, h = logloss_gradients(logits, y_index, weights)
        per_class = []
        for c in range(k):
            tree, preds = _grow_tree(xb, g[:, c], h[:, c], params)
            logits[:, c] += preds
            per_class.append(tree)
        trees.append(per_class)
        losses.append(weighted_logloss(logits, y_index, weights))

    return GbtModel(
        params=params,
        classes=classes.astype(np.int64),
        bin_edges=edges,
        trees=trees,
        schema_hash=schema_hash,
        train_losses=losses,
    )


def predict_proba(model: GbtModel, x: np.ndarray, schema_hash: str | None = None) -> np.ndarray:
    """Class probabilities; rows sum to 1.  Schema mismatches raise."""
    x = np.asarray(x, dtype=np.float64)
    if schema_hash is not None and model.schema_hash and schema_hash != model.schema_hash:
        raise SchemaError(
            f"feature schema {schema_hash} does not match model schema {model.schema_hash}"
        )
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise SchemaError(f"expected {model.n_features} feature columns, got {x.shape}")
    if np.isnan(x).any():
        raise ValidationError("feature matrix contains NaN")
    return softmax(model.raw_logits(x))


def predict(model: GbtModel, x: np.ndarray, schema_hash: str | None = None) -> np.ndarray:
    """Class ids of the most probable class; ties go to the lowest id."""
    proba = predict_proba(model, x, schema_hash)
    return model.classes[np.argmax(proba, axis=1)]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def macro_f1(y_true: Sequence[int], y_pred: Sequence[int], classes: Sequence[int]) -> float:
    """Unweighted mean of per-class F1 over ``classes``.

    A class absent from both truth and prediction contributes 0 (rather
    than being skipped), so scores over a fixed class list are
    comparable across datasets.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValidationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    f1s = []
    for c in classes:
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(f1s))


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], classes: Sequence[int]
) -> np.ndarray:
    """Counts matrix, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValidationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    index = {int(c): i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if int(t) not in index or int(p) not in index:
            raise ValidationError(f"unknown class id in labels: {t if int(t) not in index else p}")
        out[index[int(t)], index[int(p)]] += 1
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _write_array(fh, arr: np.ndarray, dtype: str) -> None:
    data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    fh.write(struct.pack("<I", arr.size))
    fh.write(data)


def _read_array(fh, dtype: str) -> np.ndarray:
    (size,) = struct.unpack("<I", fh.read(4))
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(fh.read(size * itemsize), dtype=dtype).copy()


def serialize(model: GbtModel) -> bytes:
    """Self-describing binary container for one model."""
    fh = io.BytesIO()
    fh.write(_MODEL_MAGIC)
    header = {
        "version": _MODEL_VERSION,
        "params": asdict(model.params),
        "classes": [int(c) for c in model.classes],
        "schema_hash": model.schema_hash,
        "n_features": model.n_features,
        "n_iterations_done": len(model.trees),
        "train_losses": model.train_losses,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    for e in model.bin_edges:
        _write_array(fh, e, "<f8")
    for per_class in model.trees:
        for tree in per_class:
            fh.write(struct.pack("<I", tree.feature.size))
            for arr, dtype in (
                (tree.feature, "<i4"),
                (tree.threshold_bin, "<i4"),
                (tree.left, "<i4"),
                (tree.right, "<i4"),
                (tree.value, "<f8"),
            ):
                fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return fh.getvalue()


def deserialize(data: bytes) -> GbtModel:
    fh = io.BytesIO(data)
    magic = fh.read(len(_MODEL_MAGIC))
    if magic != _MODEL_MAGIC:
        raise ParseError("not a model file (bad magic)")
    (header_len,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(header_len).decode())
    if header["version"] != _MODEL_VERSION:
        raise ParseError(f"unsupported model version {header['version']}")
    params = GbtParams(**header["params"])
    edges = [_read_array(fh, "<f8") for _ in range(header["n_features"])]
    classes = np.asarray(header["classes"], dtype=np.int64)
    trees = []
    for _ in range(header["n_iterations_done"]):
        per_class = []
        for _ in range(classes.size):
            (n_nodes,) = struct.unpack("<I", fh.read(4))
            arrays = []
            for dtype in ("<i4", "<i4", "<i4", "<i4", "<f8"):
                itemsize = np.dtype(dtype).itemsize
                arrays.append(np.frombuffer(fh.read(n_nodes * itemsize), dtype=dtype).copy())
            per_class.append(
                Tree(
                    feature=arrays[0].astype(np.int32),
                    threshold_bin=arrays[1].astype(np.int32),
                    left=arrays[2].astype(np.int32),
                    right=arrays[3].astype(np.int32),
                    value=arrays[4].astype(np.float64),
                )
            )
        trees.append(per_class)
    return GbtModel(
        params=params,
        classes=classes,
        bin_edges=edges,
        trees=trees,
        schema_hash=header["schema_hash"],
        train_losses=list(header.get("train_losses", [])),
    )
