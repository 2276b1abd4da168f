"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape`; with no tape
active they are plain numpy evaluations.  Everything is float64.

    with Tape() as tape:
        y = sum_all(hadamard(x, x))
    grads = tape.backward(y)
    grads.wrt(x)            # 2 * x
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import NonContiguousSegments, NonFiniteValue, NonScalarRoot, SchemaMismatch, ShapeMismatch


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} grad={self.requires_grad}>"


class Parameter(Tensor):
    """A learnable tensor; gradient has the tensor's shape."""

    __slots__ = ()

    def __init__(self, value, name: str = ""):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


@dataclass
class _Node:
    out: Tensor
    parents: tuple
    backward: Callable  # upstream grad -> tuple of parent grads (None where not needed)
    op: str


_ACTIVE: list["Tape"] = []


class Gradients:
    def __init__(self, grads: dict):
        self._grads = grads

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return np.zeros_like(t.value) if g is None else g


class Tape:
    """Append-only record of taped operations; parents always precede children."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, root: Tensor) -> Gradients:
        """Reverse sweep from a 1x1 root.

        Leaf tensors that require gradients get ``.grad`` overwritten (not
        accumulated), so repeating the sweep yields identical results.
        """
        if root.shape != (1, 1):
            raise NonScalarRoot(f"backward needs a 1x1 root, got {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
        produced = {id(n.out) for n in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
                if key not in produced:
                    leaves[key] = parent
        if id(root) not in produced and root.requires_grad:
            leaves[id(root)] = root
        for key, leaf in leaves.items():
            leaf.grad = grads[key].copy()
        return Gradients(grads)


def taping() -> bool:
    return bool(_ACTIVE)


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{op} produced non-finite values")


def _record(value: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(value, op)
    out = Tensor.__new__(Tensor)
    out.value, out.grad, out.name = value, None, ""
    out.requires_grad = False
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(_Node(out, tuple(parents), backward, op))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- elementwise / linear algebra -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def add_broadcast_rows(a: Tensor, row: Tensor) -> Tensor:
    """a + row for every row of a; row is 1 x cols."""
    if row.shape != (1, a.shape[1]):
        raise ShapeMismatch(f"add_broadcast_rows: {a.shape} + {row.shape}")
    return _record(a.value + row.value, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)),
                   "add_broadcast_rows")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.value + c, (a,), lambda g: (g,), "add_scalar")


def one_minus(a: Tensor) -> Tensor:
    return _record(1.0 - a.value, (a,), lambda g: (-g,), "one_minus")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0  # subgradient at exactly 0 is 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.value)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, edges[k]:edges[k + 1]] for k in range(len(parts)))

    return _record(np.concatenate([p.value for p in parts], axis=1), tuple(parts), back, "concat_cols")


def select_cols(a: Tensor, cols: Sequence[int]) -> Tensor:
    cols = list(cols)
    n = a.shape[1]

    def back(g):
        out = np.zeros((g.shape[0], n))
        np.add.at(out, (slice(None), cols), g)
        return (out,)

    return _record(a.value[:, cols], (a,), back, "select_cols")


def sum_rows(a: Tensor) -> Tensor:
    """Column sums: rows x cols -> 1 x cols."""
    n = a.shape[0]
    return _record(a.value.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, n, axis=0),), "sum_rows")


def sum_all(a: Tensor) -> Tensor:
    shp = a.shape
    return _record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shp, g[0, 0]),), "sum_all")


def gather_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.value[idx], (a,), back, "gather_rows")


def scatter_add_rows(a: Tensor, index: Sequence[int], n_rows: int) -> Tensor:
    """out[index[k]] += a[k]; rows of out with no contributor stay zero."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"scatter_add_rows: {idx.shape[0]} indices for {a.shape[0]} rows")
    out = np.zeros((n_rows, a.shape[1]))
    np.add.at(out, idx, a.value)
    return _record(out, (a,), lambda g: (g[idx],), "scatter_add_rows")


def segment_sum(a: Tensor, segment_ids: Sequence[int]) -> Tensor:
    """Sum rows sharing a segment id; ids must cover 0..S-1 with no gaps."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"segment_sum: {ids.shape[0]} ids for {a.shape[0]} rows")
    n_seg = int(ids.max()) + 1 if ids.size else 0
    if ids.size and (ids.min() < 0 or len(np.unique(ids)) != n_seg):
        raise NonContiguousSegments(f"segment ids must cover 0..{n_seg - 1} without gaps")
    out = np.zeros((n_seg, a.shape[1]))
    np.add.at(out, ids, a.value)
    return _record(out, (a,), lambda g: (g[ids],), "segment_sum")


def dropout(a: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(a.value * mask, (a,), lambda g: (g * mask,), "dropout")


# --- layers -----------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_broadcast_rows(y, b)


@dataclass
class GRUParams:
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor


def gru_cell(h: Tensor, m: Tensor, p: GRUParams) -> Tensor:
    """One gated recurrent update of state rows ``h`` given message rows ``m``.

    z = sigma(m W_z + h U_z + b_z), r = sigma(m W_r + h U_r + b_r),
    candidate = tanh(m W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * candidate.
    """
    if h.shape != m.shape:
        raise ShapeMismatch(f"gru_cell: state {h.shape} vs message {m.shape}")
    z = sigmoid(add_broadcast_rows(add(matmul(m, p.w_z), matmul(h, p.u_z)), p.b_z))
    r = sigmoid(add_broadcast_rows(add(matmul(m, p.w_r), matmul(h, p.u_r)), p.b_r))
    cand = tanh(add_broadcast_rows(add(matmul(m, p.w_h), matmul(hadamard(r, h), p.u_h)), p.b_h))
    return add(hadamard(one_minus(z), h), hadamard(z, cand))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


# --- serialization ----------------------------------------------------------

_MAGIC = b"ADMP"
_VERSION = 1


def dump_parameters(params: Mapping[str, Tensor], schema_hash: str) -> bytes:
    """Binary container: magic, version, header JSON (schema hash + name table), f64 LE payloads."""
    names = list(params)
    header = {
        "schema_hash": schema_hash,
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(hbytes)))
    buf.write(hbytes)
    for n in names:
        buf.write(np.ascontiguousarray(params[n].value, dtype="<f8").tobytes())
    return buf.getvalue()


def load_parameters(data: bytes, expected_schema: Optional[str] = None) -> tuple[dict[str, np.ndarray], str]:
    if data[:4] != _MAGIC:
        raise SchemaMismatch("not a parameter container (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise SchemaMismatch(f"unsupported container version {version}")
    header = json.loads(data[12:12 + hlen].decode())
    if expected_schema is not None and header["schema_hash"] != expected_schema:
        raise SchemaMismatch(f"schema hash {header['schema_hash']} != expected {expected_schema}")
    offset = 12 + hlen
    out = {}
    for entry in header["tensors"]:
        rows, cols = entry["shape"]
        nbytes = rows * cols * 8
        arr = np.frombuffer(data[offset:offset + nbytes], dtype="<f8").reshape(rows, cols)
        out[entry["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise SchemaMismatch("trailing bytes in parameter container")
    return out, header["schema_hash"]


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
