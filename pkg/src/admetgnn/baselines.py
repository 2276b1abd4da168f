"""Classical comparators on APDP descriptor counts: random forest regression and an MLP."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, EmptyInput, SchemaMismatch
from .featurize import DescriptorBag, key_from_str, key_to_str

log = logging.getLogger(__name__)


# --- descriptor matrix ------------------------------------------------------

@dataclass
class DescriptorMatrix:
    columns: list  # sorted descriptor keys
    rows: np.ndarray  # int64 counts, n_molecules x n_columns

    @property
    def shape(self):
        return self.rows.shape

    def transform(self, bags: Sequence[DescriptorBag]) -> "DescriptorMatrix":
        """Project new bags onto this column schema; keys unseen at fit time are dropped."""
        index = {k: c for c, k in enumerate(self.columns)}
        out = np.zeros((len(bags), len(self.columns)), dtype=np.int64)
        dropped = 0
        for r, bag in enumerate(bags):
            for key, count in bag.counts.items():
                c = index.get(key)
                if c is None:
                    dropped += 1
                else:
                    out[r, c] = count
        if dropped:
            log.info("dropped %d descriptor occurrence(s) unseen in training", dropped)
        return DescriptorMatrix(list(self.columns), out)


def build_descriptor_matrix(bags: Sequence[DescriptorBag]) -> DescriptorMatrix:
    if not bags:
        raise EmptyInput("descriptor matrix needs at least one molecule")
    keys = sorted({k for bag in bags for k in bag.counts})
    return DescriptorMatrix(keys, np.zeros((0, len(keys)), dtype=np.int64)).transform(bags)


# --- random forest ----------------------------------------------------------

MTRY_MODES = ("sqrt", "third", "all")


@dataclass
class RFConfig:
    n_trees: int = 500
    mtry_mode: str = "sqrt"
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        if self.mtry_mode not in MTRY_MODES:
            raise ConfigError(f"mtry_mode must be one of {MTRY_MODES}")

    def mtry(self, n_columns: int) -> int:
        if self.mtry_mode == "sqrt":
            return max(1, int(math.sqrt(n_columns)))
        if self.mtry_mode == "third":
            return max(1, n_columns // 3)
        return max(1, n_columns)


RF_PRESETS = {
    "sklearn": dict(n_trees=500, mtry_mode="sqrt", min_leaf=1),
    "mix": dict(n_trees=100, mtry_mode="third", min_leaf=5),
}


def rf_preset(name: str, seed: int = 0, **overrides) -> RFConfig:
    if name not in RF_PRESETS:
        raise ConfigError(f"unknown random forest preset {name!r}")
    return RFConfig(**{**RF_PRESETS[name], "seed": seed, **overrides})


@dataclass
class RegressionTree:
    """Flattened CART tree; feature == -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    oob_rows: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                return self.value[node]
            r, nd = rows[internal], node[internal]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[internal] = np.where(go_left, self.left[nd], self.right[nd])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "n_samples")}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        ints = ("feature", "left", "right", "n_samples")
        return cls(**{k: np.asarray(d[k], dtype=np.int64 if k in ints else np.float64)
                      for k in ("feature", "threshold", "left", "right", "value", "n_samples")})


def best_split(X: np.ndarray, y: np.ndarray, columns: Sequence[int], min_leaf: int):
    """Lowest weighted child variance (equivalently summed child SSE) over candidate columns.

    Thresholds are midpoints between consecutive distinct values.  Ties go to
    the lowest column, then the lowest threshold.  Returns (column, threshold)
    or None when no split leaves ``min_leaf`` rows on both sides.
    """
    n = y.size
    cols = np.sort(np.asarray(list(columns), dtype=np.int64))
    if n < 2 or cols.size == 0:
        return None
    sub = X[:, cols]
    keep = sub.min(axis=0) != sub.max(axis=0)  # constant columns cannot split
    if not keep.any():
        return None
    cols, sub = cols[keep], sub[:, keep]
    order = np.argsort(sub, axis=0, kind="mergesort")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)[:-1]
    csq = np.cumsum(ys * ys, axis=0)[:-1]
    total, total_sq = ys.sum(axis=0), (ys * ys).sum(axis=0)
    k = np.arange(1, n)[:, None]  # left size when splitting after sorted position k-1
    valid = (xs[1:] != xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
    if not valid.any():
        return None
    left_sse = csq - csum ** 2 / k
    right_sse = (total_sq - csq) - (total - csum) ** 2 / (n - k)
    score = np.where(valid, left_sse + right_sse, np.inf)
    pos = np.argmin(score, axis=0)  # first minimum per column -> lowest threshold
    col_best = score[pos, np.arange(cols.size)]
    tol = 1e-12 * max(1.0, float(np.sum((y - y.mean()) ** 2)))
    c = int(np.flatnonzero(col_best <= col_best.min() + tol)[0])  # lowest column among ties
    p = pos[c]
    return int(cols[c]), 0.5 * (xs[p, c] + xs[p + 1, c])


def fit_tree(X: np.ndarray, y: np.ndarray, config: RFConfig, rng: np.random.Generator) -> RegressionTree:
    n_rows, n_cols = X.shape
    if config.bootstrap:
        sample = rng.integers(0, n_rows, size=n_rows)
        oob = np.setdiff1d(np.arange(n_rows), sample)
    else:
        sample = np.arange(n_rows)
        oob = np.zeros(0, dtype=np.int64)
    mtry = config.mtry(n_cols)
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        count.append(int(rows.size))
        return len(feature) - 1

    root = new_node(sample)
    stack = [(root, sample)]
    while stack:
        node, rows = stack.pop()
        ys = y[rows]
        if rows.size < 2 * config.min_leaf or np.all(ys == ys[0]):
            continue
        if mtry >= n_cols:
            cols = np.arange(n_cols)
        else:
            cols = np.sort(rng.choice(n_cols, size=mtry, replace=False))
        split = best_split(X[np.ix_(rows, cols)], ys, range(cols.size), config.min_leaf)
        if split is None:
            continue
        col, thr = int(cols[split[0]]), split[1]
        mask = X[rows, col] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[node], threshold[node] = int(col), float(thr)
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is expanded first (stable node numbering)
        stack.append((right[node], rrows))
        stack.append((left[node], lrows))
    return RegressionTree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold), np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64), np.asarray(value), np.asarray(count, dtype=np.int64), oob,
    )


@dataclass
class RandomForestModel:
    columns: list
    trees: list
    config: RFConfig

    def predict(self, X) -> np.ndarray:
        return predict_rf(self, X)

    def to_json(self) -> str:
        doc = {
            "kind": "random_forest",
            "config": asdict(self.config),
            "columns": [c if isinstance(c, int) else key_to_str(c) for c in self.columns],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RandomForestModel":
        doc = json.loads(text)
        return cls([c if isinstance(c, int) else key_from_str(c) for c in doc["columns"]],
                   [RegressionTree.from_dict(t) for t in doc["trees"]], RFConfig(**doc["config"]))


def _as_matrix(X) -> tuple[np.ndarray, Optional[list]]:
    if isinstance(X, DescriptorMatrix):
        return X.rows.astype(np.float64), list(X.columns)
    return np.asarray(X, dtype=np.float64), None


def fit_rf(X, y, config: RFConfig) -> RandomForestModel:
    """Bagged CART regression forest; tree t draws from ``default_rng(seed + t)``."""
    Xa, columns = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if Xa.ndim != 2 or Xa.shape[0] < 2:
        raise EmptyInput("random forest needs at least 2 rows")
    if Xa.shape[0] != y.size:
        raise SchemaMismatch(f"{Xa.shape[0]} rows but {y.size} labels")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    if columns is None:
        columns = list(range(Xa.shape[1]))
    trees = [fit_tree(Xa, y, config, np.random.default_rng(config.seed + t)) for t in range(config.n_trees)]
    return RandomForestModel(columns, trees, config)


def predict_rf(model: RandomForestModel, X) -> np.ndarray:
    Xa, columns = _as_matrix(X)
    if columns is not None and columns != model.columns:
        raise SchemaMismatch("descriptor columns differ from the training schema")
    if Xa.shape[1] != len(model.columns):
        raise SchemaMismatch(f"expected {len(model.columns)} columns, got {Xa.shape[1]}")
    return np.mean([t.predict(Xa) for t in model.trees], axis=0)


def oob_mse(model: RandomForestModel, X, y) -> float:
    Xa, _ = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    total, hits = np.zeros(y.size), np.zeros(y.size)
    for t in model.trees:
        if t.oob_rows is None or t.oob_rows.size == 0:
            continue
        total[t.oob_rows] += t.predict(Xa[t.oob_rows])
        hits[t.oob_rows] += 1
    seen = hits > 0
    return float(np.mean((total[seen] / hits[seen] - y[seen]) ** 2))


# --- MLP ------------------------------------------------------------------

@dataclass
class MLPConfig:
    hidden: tuple = (1000, 500)
    dropout: float = 0.25
    epochs: int = 75
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class MLPModel:
    config: MLPConfig
    columns: list
    col_scale: np.ndarray
    params: dict  # name -> Parameter
    mu: float
    sigma: float

    def forward(self, X: np.ndarray, training=False, rng=None) -> T.Tensor:
        h = T.Tensor(X / self.col_scale)
        n_layers = len(self.config.hidden) + 1
        for k in range(1, n_layers + 1):
            h = T.linear(h, self.params[f"mlp{k}.W"], self.params[f"mlp{k}.b"])
            if k < n_layers:
                h = T.dropout(T.relu(h), self.config.dropout, training, rng)
        return h

    def predict(self, X, rescale: bool = True) -> np.ndarray:
        Xa, columns = _as_matrix(X)
        if columns is not None and columns != self.columns:
            raise SchemaMismatch("descriptor columns differ from the training schema")
        if Xa.shape[1] != len(self.columns):
            raise SchemaMismatch(f"expected {len(self.columns)} columns, got {Xa.shape[1]}")
        raw = self.forward(Xa).value[:, 0]
        return self.mu + self.sigma * raw if rescale else raw


def fit_mlp(X, y, seed: int = 0, config: Optional[MLPConfig] = None) -> MLPModel:
    """ReLU MLP [M, 1000, 500, 1], dropout 0.25, 75 epochs of Adam on standardised targets.

    Inputs are divided by max(1, per-column training maximum).
    """
    from .potentialnet import Adam  # local import: potentialnet pulls in the graph stack

    config = config or MLPConfig(seed=seed)
    Xa, columns = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if Xa.shape[0] < 2:
        raise EmptyInput("MLP needs at least 2 rows")
    if Xa.shape[0] != y.size:
        raise SchemaMismatch(f"{Xa.shape[0]} rows but {y.size} labels")
    columns = columns if columns is not None else list(range(Xa.shape[1]))
    rng = np.random.default_rng(config.seed)
    widths = [Xa.shape[1], *config.hidden, 1]
    params = {}
    for k in range(1, len(widths)):
        params[f"mlp{k}.W"] = T.Parameter(T.glorot_uniform(rng, widths[k - 1], widths[k]), f"mlp{k}.W")
        params[f"mlp{k}.b"] = T.Parameter(np.zeros((1, widths[k])), f"mlp{k}.b")
    mu = float(y.mean())
    sigma = float(y.std()) or 1.0
    model = MLPModel(config, columns, np.maximum(1.0, Xa.max(axis=0)), params, mu, sigma)
    target = ((y - mu) / sigma).reshape(-1, 1)
    opt = Adam(list(params.values()), config.learning_rate, config.adam_beta1, config.adam_beta2, config.epsilon)
    for _ in range(config.epochs):
        order = rng.permutation(Xa.shape[0])
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with T.Tape() as tape:
                diff = T.sub(model.forward(Xa[idx], training=True, rng=rng), T.Tensor(target[idx]))
                loss = T.scale(T.sum_all(T.hadamard(diff, diff)), 1.0 / idx.size)
            tape.backward(loss)
            opt.step()
    return model
