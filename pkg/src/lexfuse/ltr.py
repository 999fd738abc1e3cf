"""Gradient-boosted regression trees trained with a LambdaRank NDCG objective.

Boosting follows the LambdaMART recipe: per query, every (relevant,
irrelevant) pair contributes a lambda weighted by the NDCG@K change from
swapping the pair in the current ranking; each iteration fits a regression
tree to the lambdas with second-order (Newton) leaf values, and the
returned ensemble is truncated at the iteration with the best validation
NDCG. Split search is exact over sorted feature values (no histograms),
so training is fully deterministic under a fixed seed.
"""

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scorers import ScoredList

MODEL_FORMAT = "lexfuse-ltr"
MODEL_VERSION = 1

_EPS = 1e-12
_MIN_GAIN = 1e-12


class TrainingError(ValueError):
    """The feature table cannot be trained on as configured."""


class SchemaMismatchError(ValueError):
    """Prediction input does not match the model's feature schema."""


@dataclass(frozen=True)
class TrainConfig:
    """Boosting settings; the objective is NDCG@ndcg_truncation.

    Use ``ndcg_truncation=1`` to optimize first-position precision
    (identical argmax behavior for binary labels).
    """

    num_trees: int = 300
    max_leaves: int = 31
    learning_rate: float = 0.05
    min_samples_leaf: int = 20
    ndcg_truncation: int = 10
    seed: int = 0
    validation_fraction: float = 0.2
    validation_queries: tuple = None
    patience: int = 50

    def __post_init__(self):
        if self.num_trees < 1 or self.max_leaves < 2 or self.min_samples_leaf < 1:
            raise ValueError("num_trees, max_leaves, min_samples_leaf must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.ndcg_truncation < 1:
            raise ValueError("ndcg_truncation must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.validation_queries is None and not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1) without an explicit list")


def ndcg_at_k(labels, k):
    """NDCG@k of binary labels in ranked order; 0.0 when nothing is relevant.

    Gains are 2^label - 1 and the discount at 1-based rank r is
    1 / log2(r + 1).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for i, label in enumerate(labels[:k]):
        if label:
            dcg += (2.0 ** label - 1.0) / math.log2(i + 2)
    idcg = 0.0
    for i, label in enumerate(sorted(labels, reverse=True)[:k]):
        if label:
            idcg += (2.0 ** label - 1.0) / math.log2(i + 2)
    return dcg / idcg if idcg > 0 else 0.0


@dataclass
class RegressionTree:
    """Flat-array binary tree: feature[i] == -1 marks a leaf."""

    feature: list
    threshold: list
    left: list
    right: list
    value: list

    def predict(self, X):
        out = np.empty(len(X), dtype=np.float64)
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            mask = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[mask]))
            stack.append((self.right[node], idx[~mask]))
        return out

    def to_dict(self):
        return {
            "feature": list(self.feature),
            "threshold": [float(t) for t in self.threshold],
            "left": list(self.left),
            "right": list(self.right),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            feature=list(data["feature"]),
            threshold=list(data["threshold"]),
            left=list(data["left"]),
            right=list(data["right"]),
            value=list(data["value"]),
        )


@dataclass
class TreeEnsemble:
    trees: list
    base_score: float
    schema_name: str
    feature_names: tuple
    config: dict | None = None
    history: list = field(default_factory=list, repr=False, compare=False)
    validation_precision_at_1: float | None = None

    def predict_matrix(self, X):
        scores = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in self.trees:
            scores += tree.predict(X)
        return scores

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema_name": self.schema_name,
            "feature_names": list(self.feature_names),
            "base_score": self.base_score,
            "config": self.config,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a model file: format={data.get('format')!r}")
        if data.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version: {data.get('version')!r}")
        return cls(
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            base_score=data["base_score"],
            schema_name=data["schema_name"],
            feature_names=tuple(data["feature_names"]),
            config=data.get("config"),
        )

    def save(self, path):
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- tree fitting -------------------------------------------------------------

def _best_split(X, grad, hess, idx, min_samples_leaf):
    """Exact greedy split for the rows ``idx``; returns (gain, feature, thr)."""
    g = grad[idx]
    h = hess[idx]
    total_g = g.sum()
    total_h = h.sum()
    parent = total_g * total_g / (total_h + _EPS)
    n = len(idx)
    best = None
    for f in range(X.shape[1]):
        values = X[idx, f]
        order = np.argsort(values, kind="mergesort")
        sorted_values = values[order]
        if sorted_values[0] == sorted_values[-1]:
            continue
        cum_g = np.cumsum(g[order])
        cum_h = np.cumsum(h[order])
        cuts = np.nonzero(sorted_values[:-1] < sorted_values[1:])[0]
        cuts = cuts[(cuts + 1 >= min_samples_leaf) & (n - cuts - 1 >= min_samples_leaf)]
        if cuts.size == 0:
            continue
        left_g = cum_g[cuts]
        left_h = cum_h[cuts]
        gains = (
            left_g * left_g / (left_h + _EPS)
            + (total_g - left_g) ** 2 / (total_h - left_h + _EPS)
            - parent
        )
        j = int(np.argmax(gains))
        if gains[j] > _MIN_GAIN and (best is None or gains[j] > best[0]):
            thr = (sorted_values[cuts[j]] + sorted_values[cuts[j] + 1]) / 2.0
            best = (float(gains[j]), f, float(thr))
    return best


def _leaf_value(grad, hess, idx):
    return float(grad[idx].sum() / (hess[idx].sum() + _EPS))


def _fit_tree(X, grad, hess, max_leaves, min_samples_leaf):
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [_leaf_value(grad, hess, np.arange(len(X)))]
    members = {0: np.arange(len(X))}
    pending = {0: _best_split(X, grad, hess, members[0], min_samples_leaf)}
    n_leaves = 1
    while n_leaves < max_leaves:
        chosen = None
        for node in sorted(pending):
            split = pending[node]
            if split is None:
                continue
            if chosen is None or split[0] > pending[chosen][0]:
                chosen = node
        if chosen is None:
            break
        gain, f, thr = pending.pop(chosen)
        idx = members.pop(chosen)
        mask = X[idx, f] <= thr
        left_idx = idx[mask]
        right_idx = idx[~mask]
        left_id = len(feature)
        right_id = left_id + 1
        for child_idx in (left_idx, right_idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(_leaf_value(grad, hess, child_idx))
        feature[chosen] = f
        threshold[chosen] = thr
        left[chosen] = left_id
        right[chosen] = right_id
        value[chosen] = 0.0
        members[left_id] = left_idx
        members[right_id] = right_idx
        pending[left_id] = _best_split(X, grad, hess, left_idx, min_samples_leaf)
        pending[right_id] = _best_split(X, grad, hess, right_idx, min_samples_leaf)
        n_leaves += 1
    return RegressionTree(feature, threshold, left, right, value)


# -- lambda gradients ----------------------------------------------------------

def _ranked_order(scores):
    """Indices by score desc, ties by row position (stable)."""
    return np.lexsort((np.arange(len(scores)), -scores))


def _query_ndcg(scores, labels, k):
    if labels.sum() == 0:
        return None
    order = _ranked_order(scores)
    ranked = labels[order][:k]
    positions = np.arange(1, len(ranked) + 1)
    dcg = float(np.sum(ranked / np.log2(positions + 1)))
    n_ideal = min(k, int(labels.sum()))
    idcg = float(np.sum(1.0 / np.log2(np.arange(1, n_ideal + 1) + 1)))
    return dcg / idcg


def _mean_ndcg(scores, labels, groups, k):
    values = []
    for start, end in groups:
        v = _query_ndcg(scores[start:end], labels[start:end], k)
        if v is not None:
            values.append(v)
    return float(np.mean(values)) if values else 0.0


def _precision_at_1(scores, labels, groups):
    hits = []
    for start, end in groups:
        if labels[start:end].sum() == 0:
            continue
        top = _ranked_order(scores[start:end])[0]
        hits.append(float(labels[start:end][top]))
    return float(np.mean(hits)) if hits else 0.0


def _lambda_gradients(scores, labels, groups, k):
    lam = np.zeros(len(scores), dtype=np.float64)
    hess = np.zeros(len(scores), dtype=np.float64)
    for start, end in groups:
        y = labels[start:end]
        pos = np.nonzero(y == 1)[0]
        neg = np.nonzero(y == 0)[0]
        if pos.size == 0 or neg.size == 0:
            continue
        s = scores[start:end]
        order = _ranked_order(s)
        rank = np.empty(len(s), dtype=np.int64)
        rank[order] = np.arange(1, len(s) + 1)
        discount = np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)
        n_ideal = min(k, pos.size)
        idcg = float(np.sum(1.0 / np.log2(np.arange(1, n_ideal + 1) + 1)))
        diff = np.clip(s[pos][:, None] - s[neg][None, :], -60.0, 60.0)
        rho = 1.0 / (1.0 + np.exp(diff))
        delta = np.abs(discount[pos][:, None] - discount[neg][None, :]) / idcg
        weighted = rho * delta
        lam[start + pos] += weighted.sum(axis=1)
        lam[start + neg] -= weighted.sum(axis=0)
        curvature = rho * (1.0 - rho) * delta
        hess[start + pos] += curvature.sum(axis=1)
        hess[start + neg] += curvature.sum(axis=0)
    return lam, hess


# -- training -------------------------------------------------------------------

def _table_arrays(table):
    n = len(table.rows)
    X = np.empty((n, len(table.schema)), dtype=np.float64)
    y = np.empty(n, dtype=np.int64)
    for i, row in enumerate(table.rows):
        if row.label is None:
            raise TrainingError(f"row ({row.query_id}, {row.candidate_id}) has no label")
        if row.label not in (0, 1):
            raise TrainingError(f"row ({row.query_id}, {row.candidate_id}) label must be 0/1")
        X[i] = row.values
        y[i] = row.label
    bad = np.nonzero(~np.isfinite(X))[0]
    if bad.size:
        row = table.rows[int(bad[0])]
        raise TrainingError(f"non-finite feature in row ({row.query_id}, {row.candidate_id})")
    groups = []
    qids = []
    start = 0
    for i in range(1, n + 1):
        if i == n or table.rows[i].query_id != table.rows[start].query_id:
            groups.append((start, i))
            qids.append(table.rows[start].query_id)
            start = i
    return X, y, groups, qids


def _split_queries(qids, groups, y, config):
    if config.validation_queries is not None:
        valid = set(config.validation_queries)
    else:
        rng = random.Random(config.seed)
        shuffled = sorted(qids)
        rng.shuffle(shuffled)
        n_valid = max(1, round(config.validation_fraction * len(shuffled)))
        if n_valid >= len(shuffled):
            raise TrainingError("validation fraction leaves no training queries")
        valid = set(shuffled[:n_valid])
    train_groups = [(q, g) for q, g in zip(qids, groups) if q not in valid]
    valid_groups = [(q, g) for q, g in zip(qids, groups) if q in valid]
    if not valid_groups:
        raise TrainingError("no validation queries selected")
    if not train_groups:
        raise TrainingError("no training queries left after the validation split")
    return train_groups, valid_groups


def _subset(X, y, named_groups):
    idx = []
    groups = []
    for _, (start, end) in named_groups:
        groups.append((len(idx), len(idx) + (end - start)))
        idx.extend(range(start, end))
    idx = np.asarray(idx, dtype=np.int64)
    return X[idx], y[idx], groups


def train(table, config=TrainConfig()):
    """Fit a LambdaMART ensemble to a labeled FeatureTable.

    Requires at least two queries carrying both a relevant and an
    irrelevant row. The ensemble is truncated at the iteration with the
    best validation NDCG; training stops early after ``patience``
    iterations without improvement.
    """
    X, y, groups, qids = _table_arrays(table)
    if int(y.sum()) == 0:
        raise TrainingError("no positive labels anywhere in the table")
    mixed = sum(
        1 for start, end in groups
        if y[start:end].sum() > 0 and (y[start:end] == 0).sum() > 0
    )
    if mixed < 2:
        raise TrainingError(
            "need at least 2 queries with both relevant and irrelevant rows, "
            f"got {mixed}"
        )

    train_named, valid_named = _split_queries(qids, groups, y, config)
    X_tr, y_tr, groups_tr = _subset(X, y, train_named)
    X_va, y_va, groups_va = _subset(X, y, valid_named)

    k = config.ndcg_truncation
    scores_tr = np.zeros(len(X_tr), dtype=np.float64)
    scores_va = np.zeros(len(X_va), dtype=np.float64)
    trees = []
    history = []
    best_iter = -1
    best_valid = -math.inf
    for iteration in range(config.num_trees):
        lam, hess = _lambda_gradients(scores_tr, y_tr, groups_tr, k)
        tree = _fit_tree(X_tr, lam, hess, config.max_leaves, config.min_samples_leaf)
        trees.append(tree)
        scores_tr += config.learning_rate * tree.predict(X_tr)
        scores_va += config.learning_rate * tree.predict(X_va)
        train_ndcg = _mean_ndcg(scores_tr, y_tr, groups_tr, k)
        valid_ndcg = _mean_ndcg(scores_va, y_va, groups_va, k)
        history.append((iteration, train_ndcg, valid_ndcg))
        if valid_ndcg > best_valid:
            best_valid = valid_ndcg
            best_iter = iteration
        if iteration - best_iter >= config.patience:
            break

    kept = trees[:best_iter + 1]
    ensemble = TreeEnsemble(
        trees=kept,
        base_score=0.0,
        schema_name=table.schema.name,
        feature_names=tuple(table.schema.feature_names),
        config={
            "num_trees": config.num_trees,
            "max_leaves": config.max_leaves,
            "learning_rate": config.learning_rate,
            "min_samples_leaf": config.min_samples_leaf,
            "ndcg_truncation": config.ndcg_truncation,
            "seed": config.seed,
            "best_iteration": best_iter,
        },
        history=history,
    )
    best_scores = ensemble.predict_matrix(X_va)
    ensemble.validation_precision_at_1 = _precision_at_1(best_scores, y_va, groups_va)
    return ensemble


def predict(model, table):
    """Score a FeatureTable; returns {query_id: ScoredList}."""
    if tuple(table.schema.feature_names) != tuple(model.feature_names):
        raise SchemaMismatchError(
            f"table schema {table.schema.name!r} does not match model "
            f"schema {model.schema_name!r}"
        )
    if not table.rows:
        return {}
    X = np.asarray([row.values for row in table.rows], dtype=np.float64)
    scores = model.predict_matrix(X)
    per_query = {}
    for row, score in zip(table.rows, scores):
        per_query.setdefault(row.query_id, {})[row.candidate_id] = float(score)
    return {qid: ScoredList.from_scores(qid, docs) for qid, docs in per_query.items()}


def write_training_log(history, path):
    """Per-iteration TSV: iteration, train NDCG, validation NDCG."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration\ttrain_ndcg\tvalid_ndcg\n")
        for iteration, train_ndcg, valid_ndcg in history:
            fh.write(f"{iteration}\t{train_ndcg:.6f}\t{valid_ndcg:.6f}\n")
