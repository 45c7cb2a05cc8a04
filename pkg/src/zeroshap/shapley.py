"""Exact and permutation-sampled Shapley values under the interventional value function.

Coalition values are expectations over a background set with in-coalition
features overwritten by the explained row. Exact mode enumerates all 2^m
coalitions once per instance and reuses them across features; permutation
mode walks sampled feature orders and caches prefix coalitions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ShapConfig:
    mode: str = "hybrid"  # exact | permutation | hybrid
    exact_max_features: int = 10
    n_permutations: int = 200
    background: np.ndarray | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be at least 1")
        if self.mode not in ("exact", "permutation", "hybrid"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class ShapResult:
    phi: np.ndarray
    base_value: float
    estimator: str
    residuals: np.ndarray = field(repr=False)


def coalition_value(predict_fn, x: np.ndarray, coalition, background: np.ndarray) -> float:
    """Interventional expectation: overwrite coalition features with x, average predictions."""
    background = np.asarray(background, dtype=np.float64)
    if background.size == 0:
        raise ValueError("background set must be non-empty")
    members = list(coalition)
    replaced = background.copy()
    if members:
        replaced[:, members] = np.asarray(x, dtype=np.float64)[members]
    return float(np.mean(predict_fn(replaced)))


def _mask_value(predict_fn, x, mask: int, background, cache: dict[int, float]) -> float:
    found = cache.get(mask)
    if found is None:
        members = [j for j in range(x.size) if mask & (1 << j)]
        found = coalition_value(predict_fn, x, members, background)
        cache[mask] = found
    return found


def shapley_weight(subset_size: int, m: int) -> float:
    """Coalition weight |S|! (m - |S| - 1)! / m!."""
    return math.factorial(subset_size) * math.factorial(m - subset_size - 1) / math.factorial(m)


def exact_shapley(predict_fn, x: np.ndarray, background: np.ndarray,
                  max_features: int = 10) -> np.ndarray:
    """Full coalition enumeration; 2^m coalition values shared across features."""
    x = np.asarray(x, dtype=np.float64).ravel()
    m = x.size
    if m > max_features:
        raise ValueError(
            f"{m} features exceeds the exact enumeration limit of {max_features}; use permutation mode"
        )
    cache: dict[int, float] = {}
    weights = [shapley_weight(s, m) for s in range(m)]
    phi = np.zeros(m)
    for mask in range(1 << m):
        size = bin(mask).count("1")
        base = _mask_value(predict_fn, x, mask, background, cache)
        for j in range(m):
            bit = 1 << j
            if mask & bit:
                continue
            with_j = _mask_value(predict_fn, x, mask | bit, background, cache)
            phi[j] += weights[size] * (with_j - base)
    return phi


def permutation_shapley(predict_fn, x: np.ndarray, background: np.ndarray,
                        n_perms: int, rng: np.random.Generator) -> np.ndarray:
    """Average prefix marginal contributions over sampled feature orders.

    Prefix coalition values are cached, which changes no estimate: each
    permutation's telescoping sum is exact, so the estimator stays unbiased
    and exactly efficient per instance.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    m = x.size
    cache: dict[int, float] = {}
    phi = np.zeros(m)
    for _ in range(n_perms):
        order = rng.permutation(m)
        mask = 0
        prev = _mask_value(predict_fn, x, mask, background, cache)
        for j in order:
            mask |= 1 << int(j)
            cur = _mask_value(predict_fn, x, mask, background, cache)
            phi[j] += cur - prev
            prev = cur
    return phi / n_perms


def hybrid_shapley(predict_fn, X: np.ndarray, config: ShapConfig) -> ShapResult:
    """Exact when m fits the enumeration budget, permutation sampling otherwise."""
    X = np.asarray(X, dtype=np.float64)
    n, m = X.shape
    background = config.background
    if background is None or np.asarray(background).size == 0:
        raise ValueError("config.background must be a non-empty matrix")
    background = np.asarray(background, dtype=np.float64)

    if config.mode == "exact" or (config.mode == "hybrid" and m <= config.exact_max_features):
        estimator = "exact"
    else:
        estimator = "permutation"

    base_value = coalition_value(predict_fn, X[0], [], background)

    def explain_row(i: int) -> np.ndarray:
        if estimator == "exact":
            return exact_shapley(predict_fn, X[i], background, max_features=max(m, config.exact_max_features))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)))
        return permutation_shapley(predict_fn, X[i], background, config.n_permutations, rng)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(explain_row, range(n)))
    else:
        rows = [explain_row(i) for i in range(n)]
    phi = np.vstack(rows)
    predictions = np.asarray(predict_fn(X), dtype=np.float64).ravel()
    residuals = predictions - base_value - phi.sum(axis=1)
    return ShapResult(phi=phi, base_value=base_value, estimator=estimator, residuals=residuals)


def subsample_background(X: np.ndarray, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Default background: up to ``size`` rows drawn from the task's own X."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= size:
        return X.copy()
    idx = rng.choice(X.shape[0], size=size, replace=False)
    return X[np.sort(idx)]
