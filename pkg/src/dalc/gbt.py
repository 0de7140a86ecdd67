"""Gradient-boosted regression trees (exact greedy splits, squared error).

Second-order boosting with the regularized objective: per-instance gradient
g = pred - y and hessian h = 1, leaf weight -G/(H + lambda), split gain
0.5 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)], accepted
when strictly positive. Fitting is single-threaded and bit-deterministic;
trained models are immutable and safe for concurrent prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import SentenceRecord
from .errors import DimensionMismatch, EmptyTrainingSet, NonFiniteFeature
from .features import CorpusFeatures, InstanceFeatures, minmax_pool

BASE_SCORE = 0.5  # chrF-scale midpoint


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 100
    max_depth: int = 10
    learning_rate: float = 0.1
    lambda_l2: float = 1.0
    min_samples_leaf: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.lambda_l2 < 0.0:
            raise ValueError("lambda_l2 must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


# A tree is a nested dict: {"feature", "threshold", "left", "right"} or {"weight"}.
Tree = dict


@dataclass
class GbtModel:
    """base_score plus shrunken leaf weights summed over the tree list."""

    base_score: float
    learning_rate: float
    n_features: int
    trees: list[Tree] = field(default_factory=list)
    train_mse_per_round: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "base_score": self.base_score,
                "learning_rate": self.learning_rate,
                "n_features": self.n_features,
                "trees": self.trees,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "GbtModel":
        obj = json.loads(text)
        return cls(
            base_score=float(obj["base_score"]),
            learning_rate=float(obj["learning_rate"]),
            n_features=int(obj["n_features"]),
            trees=obj["trees"],
        )


def _leaf_weight(grad_sum: float, hess_sum: float, lam: float) -> float:
    return -grad_sum / (hess_sum + lam)


def _best_split(
    rows: np.ndarray, grad: np.ndarray, idx: np.ndarray, cfg: GbtConfig
) -> tuple[float, int, float] | None:
    """Exact greedy split search over all features for the node ``idx``.

    Returns (gain, feature, threshold) of the best positive-gain split or
    None. Ties break toward the lowest feature index, then the lowest
    threshold (scan order guarantees both).
    """
    n = len(idx)
    lam = cfg.lambda_l2
    g_total = float(grad[idx].sum())
    h_total = float(n)
    parent_term = g_total * g_total / (h_total + lam)

    best: tuple[float, int, float] | None = None
    counts = np.arange(1, n, dtype=np.float64)
    for f in range(rows.shape[1]):
        values = rows[idx, f]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        g_left = np.cumsum(grad[idx][order])[:-1]
        h_left = counts
        g_right = g_total - g_left
        h_right = h_total - h_left
        gains = 0.5 * (
            g_left * g_left / (h_left + lam)
            + g_right * g_right / (h_right + lam)
            - parent_term
        )
        valid = sv[:-1] < sv[1:]
        if cfg.min_samples_leaf > 1:
            k = cfg.min_samples_leaf
            valid = valid & (counts >= k) & (h_right >= k)
        gains = np.where(valid, gains, -np.inf)
        pos = int(np.argmax(gains))
        gain = float(gains[pos])
        if gain > 0.0 and (best is None or gain > best[0]):
            threshold = float((sv[pos] + sv[pos + 1]) / 2.0)
            best = (gain, f, threshold)
    return best


def _build_tree(
    rows: np.ndarray, grad: np.ndarray, idx: np.ndarray, depth: int, cfg: GbtConfig
) -> Tree:
    n = len(idx)
    if depth < cfg.max_depth and n >= 2 * cfg.min_samples_leaf:
        split = _best_split(rows, grad, idx, cfg)
        if split is not None:
            _gain, f, threshold = split
            mask = rows[idx, f] < threshold
            return {
                "feature": f,
                "threshold": threshold,
                "left": _build_tree(rows, grad, idx[mask], depth + 1, cfg),
                "right": _build_tree(rows, grad, idx[~mask], depth + 1, cfg),
            }
    return {"weight": _leaf_weight(float(grad[idx].sum()), float(n), cfg.lambda_l2)}


def _tree_apply(tree: Tree, rows: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0], dtype=np.float64)
    stack = [(tree, np.arange(rows.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if "weight" in node:
            out[idx] = node["weight"]
            continue
        mask = rows[idx, node["feature"]] < node["threshold"]
        stack.append((node["left"], idx[mask]))
        stack.append((node["right"], idx[~mask]))
    return out


def gbt_fit(
    rows: np.ndarray | Sequence[Sequence[float]],
    targets: Sequence[float],
    cfg: GbtConfig = GbtConfig(),
    seed: int = 0,
) -> GbtModel:
    """Fit a boosted ensemble; training MSE is non-increasing per round.

    The exact greedy procedure is already deterministic; ``seed`` is part
    of the contract for symmetry with the other predictors.
    """
    del seed  # no stochastic component in exact greedy fitting
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyTrainingSet("gbt_fit needs at least one row")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} rows vs {y.shape[0]} targets")
    if not np.isfinite(x).all():
        raise NonFiniteFeature("feature matrix contains non-finite values")
    if not np.isfinite(y).all():
        raise NonFiniteFeature("targets contain non-finite values")

    model = GbtModel(base_score=BASE_SCORE, learning_rate=cfg.learning_rate, n_features=x.shape[1])
    pred = np.full(x.shape[0], BASE_SCORE, dtype=np.float64)
    all_idx = np.arange(x.shape[0])
    for _round in range(cfg.n_trees):
        grad = pred - y
        tree = _build_tree(x, grad, all_idx, 0, cfg)
        pred = pred + cfg.learning_rate * _tree_apply(tree, x)
        model.trees.append(tree)
        model.train_mse_per_round.append(float(np.mean((pred - y) ** 2)))
    return model


def gbt_predict(model: GbtModel, row: Sequence[float]) -> float:
    """Deterministic scalar prediction for one feature vector."""
    return float(gbt_predict_many(model, np.asarray(row, dtype=np.float64).reshape(1, -1))[0])


def gbt_predict_many(model: GbtModel, rows: np.ndarray) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"row has {x.shape[1]} features, model was trained with {model.n_features}"
        )
    pred = np.full(x.shape[0], model.base_score, dtype=np.float64)
    for tree in model.trees:
        pred += model.learning_rate * _tree_apply(tree, x)
    return pred


def gbt_instance_rows(record: SentenceRecord, cf: CorpusFeatures) -> np.ndarray:
    """Feature vector of the instance-level baseline: [minmax pool | DF | corpus].

    Length 2d + 11 for encoder dimension d; the last 7 entries are shared
    by every record of the same (domain, anchor) pair.
    """
    pooled = minmax_pool(record.encoder_rep)
    df = InstanceFeatures.from_record(record).as_vector()
    return np.concatenate([pooled, df, cf.as_vector()])
