"""Base predictors used to label synthetic tasks and to serve as evaluation targets.

The MLP classifier is expressed on the autodiff kernel; the random forest is
a from-scratch CART ensemble with Gini splitting and per-split feature
subsampling. Both predict class-1 probabilities; attribution ground truth is
computed on the probability output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint


# ---- standard scaler ----


@dataclass
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(X: np.ndarray) -> ScalerStats:
    """Per-feature mean/std with population std; constant features get std 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least two rows to fit a scaler")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return ScalerStats(mean=mean, std=std)


def transform(stats: ScalerStats, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - stats.mean) / stats.std


def inverse_transform(stats: ScalerStats, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) * stats.std + stats.mean


# ---- MLP classifier ----


@dataclass
class MlpConfig:
    hidden_sizes: tuple[int, ...] = (100,)
    epochs: int = 2000
    lr0: float = 1e-4
    seed: int = 0
    train_fraction: float = 1.0


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig
    train_losses: np.ndarray = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class-1 probabilities; deterministic, safe for concurrent callers."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) inputs, got {X.shape}")
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        logits = (h @ self.weights[-1] + self.biases[-1]).ravel()
        return 1.0 / (1.0 + np.exp(-logits))


def _init_mlp(n_features: int, hidden_sizes: tuple[int, ...], rng) -> tuple[list, list]:
    sizes = [n_features, *hidden_sizes, 1]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if i == len(sizes) - 2:
            # zero-init readout: predictions start at exactly 0.5
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _bce_loss(params: dict[str, ad.Tensor], X: np.ndarray, y: np.ndarray, n_layers: int) -> ad.Tensor:
    h = ad.Tensor(X)
    for i in range(n_layers - 1):
        h = ad.relu(ad.add(ad.matmul(h, params[f"w{i}"]), params[f"b{i}"]))
    logits = ad.add(ad.matmul(h, params[f"w{n_layers - 1}"]), params[f"b{n_layers - 1}"])
    p_raw = ad.sigmoid(logits)
    p = ad.clamp_min(p_raw, 1e-12)
    q = ad.clamp_min(ad.add(ad.multiply(p_raw, -1.0), 1.0), 1e-12)
    yy = y.reshape(-1, 1)
    term = ad.add(ad.multiply(ad.log(p), yy), ad.multiply(ad.log(q), 1.0 - yy))
    return ad.multiply(ad.reduce_mean(term), -1.0)


def train_mlp(X: np.ndarray, y: np.ndarray, cfg: MlpConfig | None = None) -> MlpModel:
    """Full-batch Adam with lr decay lr0 / sqrt(t + 1) on binary cross-entropy."""
    cfg = cfg or MlpConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] < 16:
        raise ValueError("need at least 16 training rows")
    classes = np.unique(y)
    if not np.array_equal(classes, [0.0, 1.0]):
        raise ValueError("labels must be binary with both classes present")

    rng = np.random.default_rng(cfg.seed)
    if cfg.train_fraction < 1.0:
        keep = max(16, int(round(cfg.train_fraction * X.shape[0])))
        idx = rng.permutation(X.shape[0])[:keep]
        if len(np.unique(y[idx])) < 2:  # keep both classes in the subset
            idx = np.concatenate([idx, [int(np.argmax(y != y[idx[0]]))]])
        X_train, y_train = X[idx], y[idx]
    else:
        X_train, y_train = X, y

    weights, biases = _init_mlp(X.shape[1], cfg.hidden_sizes, rng)
    n_layers = len(weights)
    params = {f"w{i}": ad.Tensor(w, requires_grad=True) for i, w in enumerate(weights)}
    params.update({f"b{i}": ad.Tensor(b, requires_grad=True) for i, b in enumerate(biases)})
    state = ad.AdamState()
    losses = np.empty(cfg.epochs)
    for t in range(cfg.epochs):
        loss = _bce_loss(params, X_train, y_train, n_layers)
        value = loss.item()
        if not np.isfinite(value):
            last_good = t - 1
            raise RuntimeError(f"training diverged at epoch {t} (last good epoch {last_good})")
        losses[t] = value
        loss.backward()
        grads = {name: p.grad for name, p in params.items()}
        ad.adam_step(params, grads, state, lr=cfg.lr0 / math.sqrt(t + 1))
    return MlpModel(
        weights=[params[f"w{i}"].data for i in range(n_layers)],
        biases=[params[f"b{i}"].data for i in range(n_layers)],
        config=cfg,
        train_losses=losses,
    )


def predict(model, X: np.ndarray) -> np.ndarray:
    """Probability predictions for either model kind."""
    if isinstance(model, MlpModel):
        return model.predict(X)
    if isinstance(model, ForestModel):
        return model.predict_proba(X)
    raise TypeError(f"unsupported model type {type(model)!r}")


# ---- random forest ----


@dataclass
class ForestConfig:
    n_estimators: int = 100
    max_depth: int = 8
    min_samples_leaf: int = 1
    bootstrap: bool = True
    feature_subsample: str = "sqrt"  # "sqrt" or "all"
    seed: int = 0


@dataclass
class Tree:
    """Flat-array CART: feature < 0 marks a leaf, value holds P(class 1)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        active = np.arange(X.shape[0])
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        while active.size:
            feat = self.feature[nodes[active]]
            leaf_mask = feat < 0
            leaf_rows = active[leaf_mask]
            out[leaf_rows] = self.value[nodes[leaf_rows]]
            active = active[~leaf_mask]
            if not active.size:
                break
            cur = nodes[active]
            goes_left = X[active, self.feature[cur]] <= self.threshold[cur]
            nodes[active] = np.where(goes_left, self.left[cur], self.right[cur])
        return out


def _gini_best_split(Xc: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (threshold, impurity) for one column, or None."""
    order = np.argsort(Xc, kind="stable")
    xs, ys = Xc[order], y[order]
    n = xs.size
    ones = np.cumsum(ys)
    total1 = ones[-1]
    left_n = np.arange(1, n)
    right_n = n - left_n
    left1 = ones[:-1]
    right1 = total1 - left1
    with np.errstate(invalid="ignore"):
        p1l = left1 / left_n
        p1r = right1 / right_n
        gini = left_n * (2 * p1l * (1 - p1l)) + right_n * (2 * p1r * (1 - p1r))
    valid = (xs[1:] != xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    if not valid.any():
        return None
    gini = np.where(valid, gini, np.inf)
    best = int(np.argmin(gini))
    threshold = 0.5 * (xs[best] + xs[best + 1])
    return threshold, gini[best] / n


def _fit_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng) -> Tree:
    m = X.shape[1]
    n_candidates = max(1, int(round(math.sqrt(m)))) if cfg.feature_subsample == "sqrt" else m
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        yn = y[idx]
        value[node] = float(yn.mean())
        if depth >= cfg.max_depth or yn.size < 2 * cfg.min_samples_leaf or yn.min() == yn.max():
            return node
        if cfg.feature_subsample == "sqrt" and n_candidates < m:
            candidates = np.sort(rng.choice(m, size=n_candidates, replace=False))
        else:
            candidates = np.arange(m)
        best = None
        for f in candidates:
            res = _gini_best_split(X[idx, f], yn, cfg.min_samples_leaf)
            if res is not None and (best is None or res[1] < best[2]):
                best = (int(f), res[0], res[1])
        if best is None:
            return node
        f, thr, _ = best
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
    )


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig
    n_features: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Mean leaf class-1 frequency across trees; order-invariant."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) inputs, got {X.shape}")
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)


def train_forest(X: np.ndarray, y: np.ndarray, cfg: ForestConfig | None = None) -> ForestModel:
    """Bagged CART trees; single-class bootstraps yield constant trees."""
    cfg = cfg or ForestConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(np.unique(y)) < 2 or not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be binary with both classes present")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_estimators)
    trees = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        if cfg.bootstrap:
            idx = rng.integers(0, X.shape[0], size=X.shape[0])
            trees.append(_fit_tree(X[idx], y[idx], cfg, rng))
        else:
            trees.append(_fit_tree(X, y, cfg, rng))
    return ForestModel(trees=trees, config=cfg, n_features=X.shape[1])


# ---- checkpoints ----


def save_model(path, model) -> None:
    if isinstance(model, MlpModel):
        arrays = {}
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        config = {
            "hidden_sizes": list(model.config.hidden_sizes),
            "epochs": model.config.epochs,
            "lr0": model.config.lr0,
            "seed": model.config.seed,
            "train_fraction": model.config.train_fraction,
            "n_layers": len(model.weights),
        }
        save_checkpoint(path, "mlp", arrays, config=config)
    elif isinstance(model, ForestModel):
        arrays = {}
        for i, tree in enumerate(model.trees):
            arrays[f"t{i}_feature"] = tree.feature
            arrays[f"t{i}_threshold"] = tree.threshold
            arrays[f"t{i}_left"] = tree.left
            arrays[f"t{i}_right"] = tree.right
            arrays[f"t{i}_value"] = tree.value
        config = {
            "n_estimators": model.config.n_estimators,
            "max_depth": model.config.max_depth,
            "min_samples_leaf": model.config.min_samples_leaf,
            "bootstrap": model.config.bootstrap,
            "feature_subsample": model.config.feature_subsample,
            "seed": model.config.seed,
            "n_features": model.n_features,
        }
        save_checkpoint(path, "forest", arrays, config=config)
    else:
        raise TypeError(f"unsupported model type {type(model)!r}")


def load_model(path):
    arrays, config, _ = load_checkpoint(path)
    if "n_layers" in config:
        n_layers = config["n_layers"]
        cfg = MlpConfig(
            hidden_sizes=tuple(config["hidden_sizes"]),
            epochs=config["epochs"],
            lr0=config["lr0"],
            seed=config["seed"],
            train_fraction=config.get("train_fraction", 1.0),
        )
        return MlpModel(
            weights=[arrays[f"w{i}"] for i in range(n_layers)],
            biases=[arrays[f"b{i}"] for i in range(n_layers)],
            config=cfg,
        )
    cfg = ForestConfig(
        n_estimators=config["n_estimators"],
        max_depth=config["max_depth"],
        min_samples_leaf=config["min_samples_leaf"],
        bootstrap=config["bootstrap"],
        feature_subsample=config["feature_subsample"],
        seed=config["seed"],
    )
    n_trees = cfg.n_estimators
    trees = [
        Tree(
            feature=arrays[f"t{i}_feature"],
            threshold=arrays[f"t{i}_threshold"],
            left=arrays[f"t{i}_left"],
            right=arrays[f"t{i}_right"],
            value=arrays[f"t{i}_value"],
        )
        for i in range(n_trees)
    ]
    return ForestModel(trees=trees, config=cfg, n_features=config["n_features"])
