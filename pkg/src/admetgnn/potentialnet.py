"""Gated graph network (PotentialNet, ligand-only bond-graph variant) and a plain GCNN.

Both share the batching, masked multitask loss, Adam optimiser and the
per-task best-epoch checkpointing loop in :func:`train_multitask`.
"""
from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateSeries, DegenerateValidation, SchemaMismatch
from .metrics import pearson_r2
from .featurize import N_ATOM_FEATURES, atom_features, schema_hash
from .molgraph import EDGE_TYPES, MolecularGraph

log = logging.getLogger(__name__)

MODEL_KINDS = ("potentialnet", "gcnn")


@dataclass
class ModelConfig:
    model: str = "potentialnet"
    k_layers: int = 2
    state_dim: int = N_ATOM_FEATURES
    gather_dim: int = 64
    fc_dims: tuple = (64, 1)
    n_edge_types: int = len(EDGE_TYPES)
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    input_embedding: bool = False

    def __post_init__(self):
        self.fc_dims = tuple(int(d) for d in self.fc_dims)
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model: unknown kind {self.model!r}, expected one of {MODEL_KINDS}")
        if self.k_layers < 1:
            raise ConfigError("k_layers must be >= 1")
        if not self.fc_dims:
            raise ConfigError("fc_dims must end in the task count")
        if self.n_edge_types != len(EDGE_TYPES):
            raise ConfigError(f"n_edge_types is fixed at {len(EDGE_TYPES)}")
        if self.model == "potentialnet" and not self.input_embedding and self.state_dim != N_ATOM_FEATURES:
            raise ConfigError(f"state_dim must equal f_in={N_ATOM_FEATURES} unless input_embedding is on")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @property
    def n_tasks(self) -> int:
        return self.fc_dims[-1]

    def with_tasks(self, n_tasks: int) -> "ModelConfig":
        c = copy.copy(self)
        c.fc_dims = tuple(self.fc_dims[:-1]) + (n_tasks,)
        return c

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_dims"] = list(self.fc_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config field(s): {sorted(extra)}")
        return cls(**d)


# --- graph inputs & batching -------------------------------------------------

@dataclass(frozen=True)
class GraphInput:
    """Featurised molecule: atom rows plus directed edge lists per edge type."""
    x: np.ndarray
    edges: tuple  # per edge type: (src, dst) int arrays, both directions present

    @property
    def n_atoms(self) -> int:
        return self.x.shape[0]


def graph_input(graph: MolecularGraph) -> GraphInput:
    x = atom_features(graph).values
    edges = []
    for e in range(len(EDGE_TYPES)):
        src, dst = [], []
        for i, nbrs in enumerate(graph.adjacency[e]):
            for j in nbrs:
                src.append(j)
                dst.append(i)
        edges.append((np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)))
    return GraphInput(x=x, edges=tuple(edges))


@dataclass
class BatchedGraphs:
    x: np.ndarray
    edges: list  # per edge type (src, dst) with batch-global indices
    segment_ids: np.ndarray
    n_molecules: int

    @property
    def n_atoms(self) -> int:
        return self.x.shape[0]


def batch_graphs(inputs: Sequence[GraphInput]) -> BatchedGraphs:
    offsets = np.cumsum([0] + [g.n_atoms for g in inputs])
    x = np.concatenate([g.x for g in inputs], axis=0)
    edges = []
    for e in range(len(EDGE_TYPES)):
        src = np.concatenate([g.edges[e][0] + offsets[k] for k, g in enumerate(inputs)])
        dst = np.concatenate([g.edges[e][1] + offsets[k] for k, g in enumerate(inputs)])
        edges.append((src.astype(np.int64), dst.astype(np.int64)))
    seg = np.concatenate([np.full(g.n_atoms, k, dtype=np.int64) for k, g in enumerate(inputs)])
    return BatchedGraphs(x=x, edges=edges, segment_ids=seg, n_molecules=len(inputs))


# --- parameters -------------------------------------------------------------

@dataclass
class ModelParams:
    config: ModelConfig
    f_in: int
    tensors: dict = field(default_factory=dict)  # name -> Parameter, insertion-ordered

    def __getitem__(self, name):
        return self.tensors[name]

    def parameters(self):
        return list(self.tensors.values())

    def count(self) -> int:
        return int(sum(p.value.size for p in self.tensors.values()))

    def snapshot(self) -> dict:
        return {n: p.value.copy() for n, p in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config: ModelConfig, f_in: int, arrays: dict) -> "ModelParams":
        expected = param_shapes(config, f_in)
        if list(arrays) != list(expected) or any(arrays[n].shape != s for n, s in expected.items()):
            raise SchemaMismatch("parameter table does not match the model config")
        return cls(config, f_in, {n: T.Parameter(a.copy(), name=n) for n, a in arrays.items()})


_GRU_KEYS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")


def param_shapes(config: ModelConfig, f_in: int = N_ATOM_FEATURES) -> dict:
    """Ordered name -> shape table; a pure function of the config."""
    s = config.state_dim
    shapes: dict[str, tuple[int, int]] = {}
    if config.model == "potentialnet":
        if config.input_embedding:
            shapes["embed.W"] = (f_in, s)
        for k in range(1, config.k_layers + 1):
            for e in range(config.n_edge_types):
                shapes[f"layer{k}.edge{e}.W"] = (s, s)
            for key in _GRU_KEYS:
                shapes[f"layer{k}.gru.{key}"] = (1, s) if key.startswith("b") else (s, s)
        shapes["gather.i.W"] = (s + f_in, config.gather_dim)
        shapes["gather.i.b"] = (1, config.gather_dim)
        shapes["gather.j.W"] = (s, config.gather_dim)
        shapes["gather.j.b"] = (1, config.gather_dim)
        width = config.gather_dim
    else:
        width = f_in
        for k in range(1, config.k_layers + 1):
            shapes[f"gcn{k}.W"] = (width, config.gather_dim)
            width = config.gather_dim
    for n, d in enumerate(config.fc_dims, start=1):
        shapes[f"fc{n}.W"] = (width, d)
        shapes[f"fc{n}.b"] = (1, d)
        width = d
    return shapes


def init_params(config: ModelConfig, f_in: int = N_ATOM_FEATURES, rng: Optional[np.random.Generator] = None) -> ModelParams:
    """Glorot-uniform matrices, zero biases, drawn in table order from a seeded generator."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    tensors = {}
    for name, (r, c) in param_shapes(config, f_in).items():
        is_bias = name.endswith(".b") or name.split(".")[-1].startswith("b_")
        value = np.zeros((r, c)) if is_bias else T.glorot_uniform(rng, r, c)
        tensors[name] = T.Parameter(value, name=name)
    return ModelParams(config, f_in, tensors)


# --- forward passes ---------------------------------------------------------

def _check_schema(params: ModelParams, batch: BatchedGraphs):
    if batch.x.shape[1] != params.f_in:
        raise SchemaMismatch(f"batch has {batch.x.shape[1]} atom features, model expects {params.f_in}")


def _fc_head(params: ModelParams, h: T.Tensor) -> T.Tensor:
    n_fc = len(params.config.fc_dims)
    for n in range(1, n_fc + 1):
        h = T.linear(h, params[f"fc{n}.W"], params[f"fc{n}.b"])
        if n < n_fc:
            h = T.relu(h)
    return h


def forward(params: ModelParams, batch: BatchedGraphs, training: bool = False,
            x: Optional[T.Tensor] = None) -> T.Tensor:
    """Predictions (n_molecules x n_tasks) on the standardised label scale.

    ``x`` may be passed in as a gradient-tracking leaf (for atom importance);
    otherwise the batch features are wrapped as a constant.
    """
    _check_schema(params, batch)
    if params.config.model == "gcnn":
        return gcn_forward(params, batch, x=x)
    cfg = params.config
    x = T.Tensor(batch.x) if x is None else x
    n = batch.n_atoms
    h = T.matmul(x, params["embed.W"]) if cfg.input_embedding else x
    for k in range(1, cfg.k_layers + 1):
        m = None
        for e in range(cfg.n_edge_types):
            src, dst = batch.edges[e]
            if src.size == 0:
                continue
            msg = T.scatter_add_rows(T.gather_rows(T.matmul(h, params[f"layer{k}.edge{e}.W"]), src), dst, n)
            m = msg if m is None else T.add(m, msg)
        if m is None:
            m = T.Tensor(np.zeros(h.shape))
        gru = T.GRUParams(*(params[f"layer{k}.gru.{key}"] for key in _GRU_KEYS))
        h = T.gru_cell(h, m, gru)
    gate = T.sigmoid(T.linear(T.concat_cols([h, x]), params["gather.i.W"], params["gather.i.b"]))
    per_atom = T.hadamard(gate, T.linear(h, params["gather.j.W"], params["gather.j.b"]))
    return _fc_head(params, T.segment_sum(per_atom, batch.segment_ids))


def gcn_forward(params: ModelParams, batch: BatchedGraphs, x: Optional[T.Tensor] = None) -> T.Tensor:
    """K layers of ReLU((A + I) H W) over the edge-type-agnostic adjacency, sum gather, FC head."""
    _check_schema(params, batch)
    h = T.Tensor(batch.x) if x is None else x
    src = np.concatenate([s for s, _ in batch.edges])
    dst = np.concatenate([d for _, d in batch.edges])
    for k in range(1, params.config.k_layers + 1):
        agg = h
        if src.size:
            agg = T.add(h, T.scatter_add_rows(T.gather_rows(h, src), dst, batch.n_atoms))
        h = T.relu(T.matmul(agg, params[f"gcn{k}.W"]))
    return _fc_head(params, T.segment_sum(h, batch.segment_ids))


def masked_loss(pred: T.Tensor, labels: np.ndarray, mask: np.ndarray) -> T.Tensor:
    """Mean squared error over observed cells only; 0 (with zero gradients) when nothing is observed."""
    mask = np.asarray(mask, dtype=bool)
    if labels.shape != pred.shape or mask.shape != pred.shape:
        raise T.ShapeMismatch(f"masked_loss: pred {pred.shape}, labels {labels.shape}, mask {mask.shape}")
    target = T.Tensor(np.where(mask, labels, 0.0))
    diff = T.hadamard(T.sub(pred, target), T.Tensor(mask.astype(np.float64)))
    return T.scale(T.sum_all(T.hadamard(diff, diff)), 1.0 / max(1, int(mask.sum())))


class Adam:
    def __init__(self, params: Sequence[T.Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        T.zero_grads(self.params)


# --- training ---------------------------------------------------------------

@dataclass
class MultitaskData:
    """Molecules with a (n_molecules x n_tasks) label table and an observed-cell mask."""
    inputs: list
    labels: np.ndarray
    mask: np.ndarray
    tasks: tuple
    ids: tuple = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(len(self.inputs), -1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.labels.shape)
        self.labels = np.where(self.mask, self.labels, 0.0)
        if len(self.tasks) != self.labels.shape[1]:
            raise ConfigError("task names do not match label columns")

    def __len__(self):
        return len(self.inputs)


@dataclass
class TaskCheckpoint:
    task: str
    task_index: int
    best_score: float
    epoch: int
    params: dict  # name -> ndarray (frozen copy)
    config: ModelConfig
    mu: float
    sigma: float
    f_in: int = N_ATOM_FEATURES
    schema: str = field(default_factory=schema_hash)

    def model(self) -> ModelParams:
        return ModelParams.from_arrays(self.config, self.f_in, self.params)


@dataclass
class TrainingResult:
    checkpoints: list
    val_curves: np.ndarray  # epochs x tasks, validation Pearson R^2
    train_loss: list
    tasks: tuple


def pearson_r2_or_zero(pred: np.ndarray, actual: np.ndarray) -> float:
    # constant predictions carry no ranking information; score them as 0
    try:
        return pearson_r2(pred, actual)
    except DegenerateSeries:
        return 0.0


def standardization(labels: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_tasks = labels.shape[1]
    mu, sigma = np.zeros(n_tasks), np.ones(n_tasks)
    for t in range(n_tasks):
        obs = labels[mask[:, t], t]
        if obs.size:
            mu[t] = obs.mean()
            sd = obs.std()
            sigma[t] = sd if sd > 0 else 1.0
    return mu, sigma


def predict_standardized(params: ModelParams, inputs: Sequence[GraphInput], batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(inputs), batch_size):
        out.append(forward(params, batch_graphs(inputs[start:start + batch_size])).value)
    if not out:
        return np.zeros((0, params.config.n_tasks))
    return np.concatenate(out, axis=0)


def train_multitask(train: MultitaskData, valid: MultitaskData, config: ModelConfig) -> TrainingResult:
    """Masked multitask training; each task keeps the weights of its own best validation epoch.

    Validation score per task is the Pearson R^2 on that task's observed
    validation cells, recorded after every epoch.  A task's checkpoint is the
    first epoch attaining the maximum of its curve.
    """
    n_tasks = len(train.tasks)
    if n_tasks < 1:
        raise ConfigError("need at least one task")
    if tuple(valid.tasks) != tuple(train.tasks):
        raise ConfigError("train and valid task lists differ")
    if config.n_tasks != n_tasks:
        raise ConfigError(f"fc_dims ends in {config.n_tasks} but the data has {n_tasks} task(s)")
    for t, name in enumerate(train.tasks):
        if len(np.unique(valid.labels[valid.mask[:, t], t])) < 2:
            raise DegenerateValidation(f"task {name!r} has fewer than 2 distinct validation labels")

    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng=rng)
    mu, sigma = standardization(train.labels, train.mask)
    y_train = (train.labels - mu) / sigma
    opt = Adam(params.parameters(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.epsilon)

    best = [-np.inf] * n_tasks
    best_epoch = [0] * n_tasks
    best_params = [params.snapshot() for _ in range(n_tasks)]
    curves = np.zeros((config.epochs, n_tasks))
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = batch_graphs([train.inputs[i] for i in idx])
            opt.zero_grad()
            with T.Tape() as tape:
                loss = masked_loss(forward(params, batch, training=True), y_train[idx], train.mask[idx])
            tape.backward(loss)
            opt.step()
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / max(1, len(order)))
        pred = predict_standardized(params, valid.inputs)
        for t in range(n_tasks):
            obs = valid.mask[:, t]
            score = pearson_r2_or_zero(pred[obs, t], valid.labels[obs, t])
            curves[epoch, t] = score
            if score > best[t]:
                best[t], best_epoch[t] = score, epoch
                best_params[t] = params.snapshot()
        log.debug("epoch %d loss %.5f val %s", epoch, losses[-1], np.round(curves[epoch], 4))
    if config.epochs == 0:
        best = [float("nan")] * n_tasks

    checkpoints = [
        TaskCheckpoint(task=name, task_index=t, best_score=float(best[t]), epoch=int(best_epoch[t]),
                       params=best_params[t], config=config, mu=float(mu[t]), sigma=float(sigma[t]))
        for t, name in enumerate(train.tasks)
    ]
    return TrainingResult(checkpoints, curves, losses, tuple(train.tasks))


def predict(checkpoint: TaskCheckpoint, molecules: Sequence, batch_size: int = 64) -> np.ndarray:
    """Predictions in assay units: mu_train + sigma_train * network output for the checkpoint's task.

    ``molecules`` may be MolecularGraphs or prepared GraphInputs.
    """
    if checkpoint.schema != schema_hash():
        raise SchemaMismatch(f"checkpoint feature schema {checkpoint.schema} != current {schema_hash()}")
    inputs = [m if isinstance(m, GraphInput) else graph_input(m) for m in molecules]
    raw = predict_standardized(checkpoint.model(), inputs, batch_size)[:, checkpoint.task_index]
    return checkpoint.mu + checkpoint.sigma * raw


# --- checkpoint files -------------------------------------------------------

def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "task"


def save_checkpoint(ckpt: TaskCheckpoint, directory, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``<task>.params`` (binary container) and ``<task>.json`` (sidecar)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = _slug(ckpt.task)
    tensors = {n: T.Tensor(a) for n, a in ckpt.params.items()}
    pfile = directory / f"{stem}.params"
    pfile.write_bytes(T.dump_parameters(tensors, ckpt.schema))
    sidecar = {
        "task": ckpt.task,
        "task_index": ckpt.task_index,
        "best_epoch": ckpt.epoch,
        "best_validation_r2": ckpt.best_score,
        "mu_train": ckpt.mu,
        "sigma_train": ckpt.sigma,
        "feature_schema_hash": ckpt.schema,
        "f_in": ckpt.f_in,
        "config": ckpt.config.to_dict(),
        "params_file": pfile.name,
    }
    if extra:
        sidecar.update(extra)
    jfile = directory / f"{stem}.json"
    jfile.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return pfile, jfile


def load_checkpoint(sidecar_path) -> TaskCheckpoint:
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    arrays, schema = T.load_parameters((sidecar_path.parent / meta["params_file"]).read_bytes(),
                                       expected_schema=meta["feature_schema_hash"])
    return TaskCheckpoint(
        task=meta["task"], task_index=meta["task_index"], best_score=meta["best_validation_r2"],
        epoch=meta["best_epoch"], params=arrays, config=ModelConfig.from_dict(meta["config"]),
        mu=meta["mu_train"], sigma=meta["sigma_train"], f_in=meta["f_in"], schema=schema,
    )
