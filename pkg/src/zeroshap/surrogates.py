"""Few-shot surrogate explainers fitted on k reference (x, y_hat, phi) rows.

Each surrogate is a joint multi-output regression from (x, y_hat) to the
full attribution vector; with k <= 10 supervision rows, per-feature models
would be under-determined. Surrogates never see the base model, only the
reference triplets and query (X, Y_hat) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class ReferenceSet:
    X: np.ndarray
    y_hat: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y_hat = np.asarray(self.y_hat, dtype=np.float64).ravel()
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not 1 <= self.k <= 32:
            raise ValueError(f"reference count {self.k} outside [1, 32]")
        if self.phi.shape != self.X.shape or self.y_hat.shape[0] != self.k:
            raise ValueError("inconsistent reference set shapes")

    @property
    def k(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def inputs(self) -> np.ndarray:
        return np.column_stack([self.X, self.y_hat])


@dataclass
class SurrogateConfig:
    knn_max_neighbors: int = 3
    mlp_hidden: int = 32
    mlp_epochs: int = 500
    mlp_lr: float = 1e-2
    forest_size: int = 30
    forest_depth: int = 4


@dataclass
class Surrogate:
    kind: str
    m: int
    state: dict = field(repr=False, default_factory=dict)


_MIN_REFS = {"knn": 1, "mlp_regressor": 2, "forest_regressor": 2}


def fit_surrogate(kind: str, refs: ReferenceSet, cfg: SurrogateConfig | None = None,
                  rng: np.random.Generator | None = None) -> Surrogate:
    cfg = cfg or SurrogateConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind not in _MIN_REFS:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    if refs.k < _MIN_REFS[kind]:
        raise ValueError(f"{kind} needs at least {_MIN_REFS[kind]} references, got {refs.k}")
    if kind == "knn":
        state = {"inputs": refs.inputs(), "phi": refs.phi.copy(),
                 "n_neighbors": min(cfg.knn_max_neighbors, refs.k)}
    elif kind == "mlp_regressor":
        state = _fit_mlp_regressor(refs, cfg, rng)
    else:
        state = _fit_forest_regressor(refs, cfg, rng)
    return Surrogate(kind=kind, m=refs.m, state=state)


def predict_surrogate(g: Surrogate, X: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[1] != g.m:
        raise ValueError(f"expected (n, {g.m}) queries, got {X.shape}")
    if y_hat.shape[0] != X.shape[0]:
        raise ValueError("y_hat length must match the query rows")
    Z = np.column_stack([X, y_hat])
    if g.kind == "knn":
        return _predict_knn(g.state, Z)
    if g.kind == "mlp_regressor":
        return _predict_mlp(g.state, Z)
    return _predict_forest(g.state, Z)


# ---- kNN ----


def _predict_knn(state, Z: np.ndarray) -> np.ndarray:
    refs = state["inputs"]
    phi = state["phi"]
    nn = state["n_neighbors"]
    out = np.empty((Z.shape[0], phi.shape[1]))
    for i, z in enumerate(Z):
        d = np.sqrt(((refs - z) ** 2).sum(axis=1))
        exact = d == 0.0
        if exact.any():
            out[i] = phi[exact].mean(axis=0)
            continue
        order = np.argsort(d, kind="stable")[:nn]
        w = 1.0 / d[order]
        out[i] = (phi[order] * w[:, None]).sum(axis=0) / w.sum()
    return out


# ---- small MSE-trained MLP ----


def _fit_mlp_regressor(refs: ReferenceSet, cfg: SurrogateConfig, rng) -> dict:
    Z = refs.inputs()
    Y = refs.phi
    d_in, d_out = Z.shape[1], Y.shape[1]
    params = {
        "w1": ad.Tensor(rng.normal(0, math.sqrt(2.0 / d_in), size=(d_in, cfg.mlp_hidden)), requires_grad=True),
        "b1": ad.Tensor(np.zeros(cfg.mlp_hidden), requires_grad=True),
        "w2": ad.Tensor(np.zeros((cfg.mlp_hidden, d_out)), requires_grad=True),
        "b2": ad.Tensor(np.zeros(d_out), requires_grad=True),
    }
    state = ad.AdamState()
    zt = ad.Tensor(Z)
    for _ in range(cfg.mlp_epochs):
        h = ad.relu(ad.add(ad.matmul(zt, params["w1"]), params["b1"]))
        pred = ad.add(ad.matmul(h, params["w2"]), params["b2"])
        diff = ad.add(pred, ad.multiply(ad.Tensor(Y), -1.0))
        loss = ad.reduce_mean(ad.multiply(diff, diff))
        loss.backward()
        ad.adam_step(params, {k: p.grad for k, p in params.items()}, state, lr=cfg.mlp_lr)
    return {name: p.data for name, p in params.items()}


def _predict_mlp(state, Z: np.ndarray) -> np.ndarray:
    h = np.maximum(Z @ state["w1"] + state["b1"], 0.0)
    return h @ state["w2"] + state["b2"]


# ---- multi-output regression forest ----


def _variance_best_split(col: np.ndarray, Y: np.ndarray):
    order = np.argsort(col, kind="stable")
    xs = col[order]
    ys = Y[order]
    n = xs.shape[0]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    total_sum, total_sq = csum[-1], csq[-1]
    left_n = np.arange(1, n)[:, None]
    right_n = n - left_n
    left_sum, left_sq = csum[:-1], csq[:-1]
    # summed squared error across outputs for each split point
    sse_left = (left_sq - left_sum**2 / left_n).sum(axis=1)
    sse_right = ((total_sq - left_sq) - (total_sum - left_sum) ** 2 / right_n).sum(axis=1)
    cost = sse_left + sse_right
    valid = xs[1:] != xs[:-1]
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    best = int(np.argmin(cost))
    return 0.5 * (xs[best] + xs[best + 1]), cost[best]


def _fit_regression_tree(Z: np.ndarray, Y: np.ndarray, depth_left: int, rng) -> dict:
    node = {"value": Y.mean(axis=0)}
    if depth_left == 0 or Z.shape[0] < 2 or np.allclose(Y, Y[0]):
        return node
    n_feats = Z.shape[1]
    n_cand = max(1, int(round(math.sqrt(n_feats))))
    candidates = np.sort(rng.choice(n_feats, size=n_cand, replace=False)) if n_cand < n_feats else np.arange(n_feats)
    best = None
    for f in candidates:
        res = _variance_best_split(Z[:, f], Y)
        if res is not None and (best is None or res[1] < best[2]):
            best = (int(f), res[0], res[1])
    if best is None:
        return node
    f, thr, _ = best
    mask = Z[:, f] <= thr
    node.update(
        feature=f,
        threshold=thr,
        left=_fit_regression_tree(Z[mask], Y[mask], depth_left - 1, rng),
        right=_fit_regression_tree(Z[~mask], Y[~mask], depth_left - 1, rng),
    )
    return node


def _tree_predict_row(node: dict, z: np.ndarray) -> np.ndarray:
    while "feature" in node:
        node = node["left"] if z[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def _fit_forest_regressor(refs: ReferenceSet, cfg: SurrogateConfig, rng) -> dict:
    Z = refs.inputs()
    Y = refs.phi
    trees = []
    for _ in range(cfg.forest_size):
        idx = rng.integers(0, Z.shape[0], size=Z.shape[0])
        trees.append(_fit_regression_tree(Z[idx], Y[idx], cfg.forest_depth, rng))
    return {"trees": trees}


def _predict_forest(state, Z: np.ndarray) -> np.ndarray:
    trees = state["trees"]
    out = None
    for tree in trees:
        pred = np.vstack([_tree_predict_row(tree, z) for z in Z])
        out = pred if out is None else out + pred
    return out / len(trees)
