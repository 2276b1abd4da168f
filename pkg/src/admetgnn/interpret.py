"""Input-gradient atom importance and the best-scoring connected substructure of size S."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ExactModeLimitExceeded, SchemaMismatch, SizeOutOfRange
from .featurize import schema_hash
from .molgraph import MolecularGraph
from .potentialnet import TaskCheckpoint, batch_graphs, forward, graph_input

EXACT_MAX_ATOMS = 60
EXACT_MAX_SIZE = 8


@dataclass(frozen=True)
class AtomImportance:
    values: np.ndarray  # signed, one per atom

    def __len__(self):
        return self.values.size

    def absolute(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class SubgraphResult:
    atoms: tuple  # sorted atom indices
    score: float
    mode: str  # "exact" or "greedy"


def task_output(checkpoint: TaskCheckpoint, graph: MolecularGraph, x: T.Tensor) -> T.Tensor:
    """Rescaled scalar prediction of the checkpoint's task as a function of the atom features ``x``."""
    model = checkpoint.model()
    out = forward(model, batch_graphs([graph_input(graph)]), x=x)
    col = T.select_cols(out, [checkpoint.task_index])
    return T.add_scalar(T.scale(col, checkpoint.sigma), checkpoint.mu)


def atom_importance(checkpoint: TaskCheckpoint, graph: MolecularGraph) -> AtomImportance:
    """Per-atom sum of d(prediction)/d(feature) over all input feature columns."""
    if checkpoint.schema != schema_hash():
        raise SchemaMismatch(f"checkpoint schema {checkpoint.schema} != current {schema_hash()}")
    x = T.Tensor(graph_input(graph).x, requires_grad=True)
    with T.Tape() as tape:
        y = task_output(checkpoint, graph, x)
    grads = tape.backward(y)
    return AtomImportance(grads.wrt(x).sum(axis=1))


def connected_subsets(graph: MolecularGraph, size: int) -> Iterator[tuple]:
    """Every connected induced atom subset of ``size`` atoms, each exactly once.

    Extension enumeration: a subset is grown only from its smallest atom, and
    new candidates are restricted to exclusive neighbours with larger index.
    """
    n = graph.n_atoms
    nbrs = [set(graph.neighbors(i)) for i in range(n)]

    def extend(sub: list, ext: set, root: int, closed: set):
        if len(sub) == size:
            yield tuple(sorted(sub))
            return
        ext = set(ext)
        while ext:
            w = min(ext)
            ext.discard(w)
            excl = {u for u in nbrs[w] if u > root and u not in closed}
            yield from extend(sub + [w], ext | excl, root, closed | excl | {w})

    for v in range(n):
        start = {u for u in nbrs[v] if u > v}
        yield from extend([v], start, v, start | {v})


def top_substructure(imp: AtomImportance | Sequence[float], graph: MolecularGraph, size: int,
                     mode: str = "exact") -> SubgraphResult:
    """Highest summed importance over connected subgraphs of ``size`` atoms.

    Exact mode enumerates all of them (ties -> lexicographically smallest
    index set) and is limited to 60 atoms / size 8.  Greedy mode seeds at the
    most important atom and repeatedly adds the best adjacent atom.
    """
    values = np.asarray(imp.values if isinstance(imp, AtomImportance) else imp, dtype=np.float64)
    n = graph.n_atoms
    if values.size != n:
        raise SchemaMismatch(f"{values.size} importances for {n} atoms")
    if not 1 <= size <= n:
        raise SizeOutOfRange(f"subgraph size {size} outside [1, {n}]")
    if mode == "greedy":
        return _greedy(values, graph, size)
    if mode != "exact":
        raise ValueError(f"mode must be 'exact' or 'greedy', got {mode!r}")
    if n > EXACT_MAX_ATOMS or size > EXACT_MAX_SIZE:
        raise ExactModeLimitExceeded(
            f"exact search limited to {EXACT_MAX_ATOMS} atoms and size {EXACT_MAX_SIZE} "
            f"(got {n} atoms, size {size}); rerun with greedy mode")
    best, best_score = None, -np.inf
    for subset in connected_subsets(graph, size):
        score = float(values[list(subset)].sum())
        if score > best_score or (score == best_score and subset < best):
            best, best_score = subset, score
    return SubgraphResult(best, best_score, "exact")


def _greedy(values: np.ndarray, graph: MolecularGraph, size: int) -> SubgraphResult:
    chosen = [int(np.argmax(values))]
    while len(chosen) < size:
        frontier = sorted({u for v in chosen for u in graph.neighbors(v)} - set(chosen))
        if not frontier:
            break
        chosen.append(max(frontier, key=lambda u: (values[u], -u)))
    atoms = tuple(sorted(chosen))
    return SubgraphResult(atoms, float(values[list(atoms)].sum()), "greedy")


def interpretation_json(graph: MolecularGraph, imp: AtomImportance, result: SubgraphResult, task: str) -> dict:
    return {
        "smiles": graph.source_smiles,
        "task": task,
        "atom_importance": [float(v) for v in imp.values],
        "subgraph": {"atoms": list(result.atoms), "size": len(result.atoms), "score": result.score,
                     "mode": result.mode},
    }
