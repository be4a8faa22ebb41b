"""Regressors mapping link features to reach probabilities.

Two model families: a multilayer perceptron (rectifier hidden layers,
linear output, mean-squared-error objective, Adam steps) and least-squares
gradient-boosted regression trees (depth-limited trees fit to residuals,
split search over per-feature quantile candidates).  Both predict raw
values clipped to [0, 1] and round-trip losslessly through a versioned
JSON container.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from ._accel import NUMBA_ENABLED, hot
from ._rng import derive_master
from .errors import (DimensionError, FormatError, ModelTypeError,
                     ParameterError, TrainingError)
from .features import Dataset

MODEL_FORMAT = "reachcast-model"
MODEL_VERSION = 1

_SALT_MLP_INIT = 201
_SALT_MLP_SHUFFLE = 202
_SALT_GBRT_BINS = 203
_SALT_GBRT_SUBSAMPLE = 204

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both model families."""

    hidden_sizes: tuple = (100,)
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    l2_penalty: float = 1e-4
    n_trees: int = 100
    max_depth: int = 3
    shrinkage: float = 0.1
    subsample: float = 1.0
    split_candidates: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.hidden_sizes:
            raise ParameterError("at least one hidden layer required")
        if min(self.hidden_sizes) < 1:
            raise ParameterError("hidden sizes must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.l2_penalty < 0:
            raise ParameterError("learning_rate must be > 0 and l2_penalty >= 0")
        if self.n_trees < 0 or self.max_depth < 1:
            raise ParameterError("n_trees must be >= 0 and max_depth >= 1")
        if not 0 < self.shrinkage <= 1 or not 0 < self.subsample <= 1:
            raise ParameterError("shrinkage and subsample must lie in (0, 1]")
        if self.split_candidates < 2:
            raise ParameterError("split_candidates must be >= 2")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# multilayer perceptron

class MlpModel:
    """Feed-forward net with rectifier hidden layers and a linear output.

    Feature standardization (per-feature mean and deviation learned on the
    training data) is folded into the model, so predict takes raw features.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 feat_mean: np.ndarray, feat_std: np.ndarray,
                 final_loss: float = float("nan")):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.feat_mean = np.asarray(feat_mean, dtype=np.float64)
        self.feat_std = np.asarray(feat_std, dtype=np.float64)
        self.final_loss = float(final_loss)
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise DimensionError("weight/bias shapes do not chain")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError("consecutive weight shapes do not chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def raw_output(self, X: np.ndarray) -> np.ndarray:
        h = (np.atleast_2d(X) - self.feat_mean) / self.feat_std
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        if np.atleast_2d(X).shape[1] != self.input_dim:
            raise DimensionError(
                f"model expects {self.input_dim} features, got {np.atleast_2d(X).shape[1]}")
        return np.clip(self.raw_output(X), 0.0, 1.0)


def mlp_loss_and_grads(weights, biases, X, y, l2_penalty):
    """Batch objective mean((out - y)^2) + (l2/2) * sum ||W||^2 and its
    gradients with respect to every weight matrix and bias vector.

    X must already be standardized; this is the exact function the trainer
    steps on, which is what the finite-difference check differentiates.
    """
    batch = X.shape[0]
    acts = [X]
    h = X
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    out = (h @ weights[-1] + biases[-1])[:, 0]
    err = out - y
    loss = float(np.mean(err ** 2))
    loss += 0.5 * l2_penalty * sum(float(np.sum(w ** 2)) for w in weights)

    grad_ws = [None] * len(weights)
    grad_bs = [None] * len(biases)
    delta = (2.0 / batch) * err[:, None]
    for layer in range(len(weights) - 1, -1, -1):
        grad_ws[layer] = acts[layer].T @ delta + l2_penalty * weights[layer]
        grad_bs[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (acts[layer] > 0.0)
    return loss, grad_ws, grad_bs


def train_mlp(ds: Dataset, cfg: TrainConfig, seed=None) -> MlpModel:
    """Fit the MLP by mini-batch Adam on mean squared error.

    Deterministic for a fixed (dataset, config, seed).  Raises
    TrainingError on an empty dataset or when the loss goes non-finite.
    """
    master = cfg.seed if seed is None else seed
    m = len(ds)
    if m == 0:
        raise TrainingError("cannot train on an empty dataset")
    dim = ds.feature_dim
    feat_mean, feat_std = _feature_moments(ds)

    sizes = [dim, *cfg.hidden_sizes, 1]
    init_rng = np.random.default_rng(derive_master(master, _SALT_MLP_INIT))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(init_rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))

    adam_m = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    adam_v = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    shuffle_rng = np.random.default_rng(derive_master(master, _SALT_MLP_SHUFFLE))
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(m)
        for lo in range(0, m, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            X, y = ds.batch(idx)
            X = (X - feat_mean) / feat_std
            loss, grad_ws, grad_bs = mlp_loss_and_grads(weights, biases, X, y,
                                                        cfg.l2_penalty)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}")
            step += 1
            params = weights + biases
            grads = grad_ws + grad_bs
            bc1 = 1.0 - _ADAM_BETA1 ** step
            bc2 = 1.0 - _ADAM_BETA2 ** step
            for k, (param, grad) in enumerate(zip(params, grads)):
                adam_m[k] = _ADAM_BETA1 * adam_m[k] + (1 - _ADAM_BETA1) * grad
                adam_v[k] = _ADAM_BETA2 * adam_v[k] + (1 - _ADAM_BETA2) * grad ** 2
                param -= cfg.learning_rate * (adam_m[k] / bc1) / (
                    np.sqrt(adam_v[k] / bc2) + _ADAM_EPS)

    model = MlpModel(weights, biases, feat_mean, feat_std)
    model.final_loss = _dataset_mse(model, ds)
    return model


def _feature_moments(ds: Dataset, chunk: int = 65536):
    dim = ds.feature_dim
    total = np.zeros(dim)
    total_sq = np.zeros(dim)
    for lo in range(0, len(ds), chunk):
        X = ds.features(np.arange(lo, min(lo + chunk, len(ds))))
        total += X.sum(axis=0)
        total_sq += (X ** 2).sum(axis=0)
    mean = total / len(ds)
    var = np.maximum(total_sq / len(ds) - mean ** 2, 0.0)
    std = np.sqrt(var)
    std[std < 1e-8] = 1.0
    return mean, std


def _dataset_mse(model, ds: Dataset, chunk: int = 65536) -> float:
    acc = 0.0
    for lo in range(0, len(ds), chunk):
        idx = np.arange(lo, min(lo + chunk, len(ds)))
        X, y = ds.batch(idx)
        acc += float(np.sum((model.predict(X) - y) ** 2))
    return acc / len(ds)


# ---------------------------------------------------------------------------
# gradient-boosted regression trees

class GbrtModel:
    """Sum of depth-limited regression trees on top of a constant.

    Leaf values already include the shrinkage factor, so prediction is the
    initial constant plus the plain sum of tree outputs.
    """

    def __init__(self, init_value: float, shrinkage: float, feature_dim: int,
                 trees: list[dict], stage_losses: np.ndarray):
        self.init_value = float(init_value)
        self.shrinkage = float(shrinkage)
        self.feature_dim = int(feature_dim)
        self.trees = trees
        self.stage_losses = np.asarray(stage_losses, dtype=np.float64)
        for tree in trees:
            feats = tree["feature"]
            if feats.size and feats.max() >= self.feature_dim:
                raise DimensionError("tree splits on a feature outside the model dimension")

    def raw_output(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.full(X.shape[0], self.init_value)
        for tree in self.trees:
            out += _descend(tree, X)
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        if np.atleast_2d(X).shape[1] != self.feature_dim:
            raise DimensionError(
                f"model expects {self.feature_dim} features, got {np.atleast_2d(X).shape[1]}")
        return np.clip(self.raw_output(X), 0.0, 1.0)


def _descend(tree: dict, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    feature, threshold = tree["feature"], tree["threshold"]
    left, right = tree["left"], tree["right"]
    while True:
        internal = feature[node] >= 0
        if not internal.any():
            break
        rows = np.flatnonzero(internal)
        f = feature[node[rows]]
        go_left = X[rows, f] <= threshold[node[rows]]
        node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
    return tree["value"][node]


@hot(cache=True, nogil=True)
def _hist_loop(binned, idx, resid, counts, sums):
    n_features = binned.shape[1]
    for ii in range(idx.shape[0]):
        r = idx[ii]
        ri = resid[r]
        for f in range(n_features):
            b = binned[r, f]
            counts[f, b] += 1
            sums[f, b] += ri


def _np_hist(binned, idx, resid, counts, sums):
    sub = binned[idx]
    weights = resid[idx]
    n_bins = counts.shape[1]
    for f in range(binned.shape[1]):
        col = sub[:, f]
        counts[f] = np.bincount(col, minlength=n_bins)
        sums[f] = np.bincount(col, weights=weights, minlength=n_bins)


def _node_histograms(binned, idx, resid, n_bins):
    counts = np.zeros((binned.shape[1], n_bins), dtype=np.int64)
    sums = np.zeros((binned.shape[1], n_bins), dtype=np.float64)
    if NUMBA_ENABLED:
        _hist_loop(binned, idx, resid, counts, sums)
    else:
        _np_hist(binned, idx, resid, counts, sums)
    return counts, sums


def _bin_edges(ds: Dataset, n_candidates: int, rng, sample_cap: int = 65536):
    """Per-feature candidate thresholds at sampled quantiles."""
    m = len(ds)
    if m > sample_cap:
        idx = np.sort(rng.choice(m, size=sample_cap, replace=False))
    else:
        idx = np.arange(m)
    sample = ds.features(idx)
    qs = np.arange(1, n_candidates) / n_candidates
    return np.quantile(sample, qs, axis=0).T.copy()  # (features, n_candidates - 1)


def _bin_features(ds: Dataset, edges: np.ndarray, chunk: int = 65536) -> np.ndarray:
    m = len(ds)
    binned = np.empty((m, edges.shape[0]), dtype=np.uint8)
    for lo in range(0, m, chunk):
        idx = np.arange(lo, min(lo + chunk, m))
        X = ds.features(idx)
        for f in range(edges.shape[0]):
            binned[lo:lo + idx.shape[0], f] = np.searchsorted(
                edges[f], X[:, f], side="left").astype(np.uint8)
    return binned


def _fit_tree(binned, resid, idx, edges, max_depth, shrinkage):
    feature, threshold, bin_thr, left, right, value = [], [], [], [], [], []

    def leaf(node_idx):
        feature.append(-1)
        threshold.append(0.0)
        bin_thr.append(0)
        left.append(-1)
        right.append(-1)
        value.append(shrinkage * float(resid[node_idx].sum() / node_idx.shape[0]))
        return len(feature) - 1

    def grow(node_idx, depth):
        if depth >= max_depth or node_idx.shape[0] < 2:
            return leaf(node_idx)
        counts, sums = _node_histograms(binned, node_idx, resid, edges.shape[1] + 1)
        ccum = counts.cumsum(axis=1)
        scum = sums.cumsum(axis=1)
        tc, ts = ccum[:, -1:], scum[:, -1:]
        lc, ls = ccum[:, :-1], scum[:, :-1]
        rc, rs = tc - lc, ts - ls
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = ls ** 2 / lc + rs ** 2 / rc - ts ** 2 / tc
        gain[(lc < 1) | (rc < 1)] = -np.inf
        flat = int(np.argmax(gain))
        best_f, best_b = divmod(flat, gain.shape[1])
        if not np.isfinite(gain[best_f, best_b]) or gain[best_f, best_b] <= _MIN_GAIN:
            return leaf(node_idx)
        go_left = binned[node_idx, best_f] <= best_b
        node_id = len(feature)
        feature.append(best_f)
        threshold.append(float(edges[best_f, best_b]))
        bin_thr.append(best_b)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        left[node_id] = grow(node_idx[go_left], depth + 1)
        right[node_id] = grow(node_idx[~go_left], depth + 1)
        return node_id

    grow(idx, 0)
    return {
        "feature": np.asarray(feature, dtype=np.int32),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "bin_thr": np.asarray(bin_thr, dtype=np.int32),
        "left": np.asarray(left, dtype=np.int32),
        "right": np.asarray(right, dtype=np.int32),
        "value": np.asarray(value, dtype=np.float64),
    }


def _descend_binned(tree: dict, binned: np.ndarray) -> np.ndarray:
    node = np.zeros(binned.shape[0], dtype=np.int32)
    feature, bin_thr = tree["feature"], tree["bin_thr"]
    left, right = tree["left"], tree["right"]
    while True:
        internal = feature[node] >= 0
        if not internal.any():
            break
        rows = np.flatnonzero(internal)
        f = feature[node[rows]]
        go_left = binned[rows, f] <= bin_thr[node[rows]]
        node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
    return tree["value"][node]


def train_gbrt(ds: Dataset, cfg: TrainConfig, seed=None) -> GbrtModel:
    """Least-squares boosting: start from the label mean, then repeatedly
    fit a depth-limited tree to the residuals and add shrinkage times it.

    Split search scans per-feature quantile candidates; ties break to the
    lowest feature index, then the lowest threshold.
    """
    master = cfg.seed if seed is None else seed
    m = len(ds)
    if m == 0:
        raise TrainingError("cannot train on an empty dataset")
    y = ds.targets
    init_value = float(y.mean())
    bin_rng = np.random.default_rng(derive_master(master, _SALT_GBRT_BINS))
    edges = _bin_edges(ds, cfg.split_candidates, bin_rng)
    binned = _bin_features(ds, edges)
    sub_rng = np.random.default_rng(derive_master(master, _SALT_GBRT_SUBSAMPLE))

    F = np.full(m, init_value)
    trees: list[dict] = []
    stage_losses = np.empty(cfg.n_trees, dtype=np.float64)
    for stage in range(cfg.n_trees):
        if cfg.subsample < 1.0:
            k = max(1, int(np.floor(cfg.subsample * m)))
            idx = np.sort(sub_rng.choice(m, size=k, replace=False))
        else:
            idx = np.arange(m)
        resid = y - F
        tree = _fit_tree(binned, resid, idx, edges, cfg.max_depth, cfg.shrinkage)
        F += _descend_binned(tree, binned)
        trees.append(tree)
        stage_losses[stage] = float(np.mean((y - F) ** 2))
    return GbrtModel(init_value, cfg.shrinkage, ds.feature_dim, trees, stage_losses)


# ---------------------------------------------------------------------------
# prediction entry point

def predict(model, features: np.ndarray):
    """Model output for raw link features, clipped to [0, 1].

    Accepts a single feature vector (returns a float) or a feature matrix
    (returns a vector).
    """
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    out = model.predict(np.atleast_2d(features))
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# model container format

def save_model(model, target) -> None:
    """Serialize either model family; predictions round-trip exactly."""
    if isinstance(model, MlpModel):
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "type": "mlp",
            "final_loss": model.final_loss,
            "feat_mean": model.feat_mean.tolist(),
            "feat_std": model.feat_std.tolist(),
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
    elif isinstance(model, GbrtModel):
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "type": "gbrt",
            "init_value": model.init_value,
            "shrinkage": model.shrinkage,
            "feature_dim": model.feature_dim,
            "stage_losses": model.stage_losses.tolist(),
            "trees": [{k: v.tolist() for k, v in tree.items()} for tree in model.trees],
        }
    else:
        raise ParameterError(f"cannot serialize {type(model).__name__}")
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        json.dump(doc, handle)
        handle.write("\n")
    finally:
        if close:
            handle.close()


def load_model(source, expected_type: str | None = None):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("type")
    if expected_type is not None and kind != expected_type:
        raise ModelTypeError(f"expected a {expected_type} model, file holds {kind!r}")
    try:
        if kind == "mlp":
            return MlpModel(
                [np.asarray(w, dtype=np.float64) for w in doc["weights"]],
                [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
                np.asarray(doc["feat_mean"], dtype=np.float64),
                np.asarray(doc["feat_std"], dtype=np.float64),
                final_loss=doc.get("final_loss", float("nan")),
            )
        if kind == "gbrt":
            trees = []
            for tree in doc["trees"]:
                trees.append({
                    "feature": np.asarray(tree["feature"], dtype=np.int32),
                    "threshold": np.asarray(tree["threshold"], dtype=np.float64),
                    "bin_thr": np.asarray(tree["bin_thr"], dtype=np.int32),
                    "left": np.asarray(tree["left"], dtype=np.int32),
                    "right": np.asarray(tree["right"], dtype=np.int32),
                    "value": np.asarray(tree["value"], dtype=np.float64),
                })
            return GbrtModel(doc["init_value"], doc["shrinkage"], doc["feature_dim"],
                             trees, np.asarray(doc["stage_losses"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"truncated or corrupt model file: {exc}") from exc
    raise FormatError(f"unknown model type {kind!r}")
