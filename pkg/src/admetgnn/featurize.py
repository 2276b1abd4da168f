"""Per-atom feature matrices, AP/DP pair descriptors and circular fingerprints."""
from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .molgraph import AROMATIC, DOUBLE, EDGE_TYPES, TRIPLE, MolecularGraph, radical_electrons

ELEMENTS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I")
CHARGES = (-2, -1, 0, 1, 2)
HYBRIDIZATIONS = ("sp", "sp2", "sp3")
DEGREES = tuple(range(7))
H_COUNTS = tuple(range(5))

OTHER = "other"

# (group name, categories, has trailing "other")
_ONE_HOT_GROUPS = (
    ("element", ELEMENTS, True),
    ("formal_charge", CHARGES, True),
    ("hybridization", HYBRIDIZATIONS, True),
)


def _schema() -> tuple[tuple[str, str], ...]:
    cols = []
    for name, cats, other in _ONE_HOT_GROUPS:
        cols += [(name, str(c)) for c in cats]
        if other:
            cols.append((name, OTHER))
    cols.append(("aromatic", "1"))
    cols += [("degree", str(d)) for d in DEGREES]
    cols += [("total_h", str(h)) for h in H_COUNTS] + [("total_h", OTHER)]
    cols += [("implicit_h", str(h)) for h in H_COUNTS] + [("implicit_h", OTHER)]
    cols.append(("radical_electrons", "count"))
    return tuple(cols)


ATOM_FEATURE_SCHEMA = _schema()
N_ATOM_FEATURES = len(ATOM_FEATURE_SCHEMA)

ONE_HOT_GROUP_NAMES = ("element", "formal_charge", "hybridization", "degree", "total_h", "implicit_h")


def schema_json(schema=ATOM_FEATURE_SCHEMA) -> str:
    return json.dumps([{"group": g, "category": c} for g, c in schema])


def schema_hash(schema=ATOM_FEATURE_SCHEMA) -> str:
    return hashlib.sha256(schema_json(schema).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AtomFeatureMatrix:
    values: np.ndarray
    schema: tuple = ATOM_FEATURE_SCHEMA

    @property
    def f_in(self) -> int:
        return self.values.shape[1]

    def group(self, name: str) -> np.ndarray:
        idx = [k for k, (g, _) in enumerate(self.schema) if g == name]
        return self.values[:, idx]


def hybridization(graph: MolecularGraph, i: int) -> str:
    """sp / sp2 / sp3 from notation-level bond orders."""
    atom = graph.atoms[i]
    orders = graph.incident_orders(i)
    if atom.aromatic or AROMATIC in orders:
        return "sp2"
    n_double = orders.count(DOUBLE)
    if TRIPLE in orders or n_double >= 2:
        return "sp"
    if n_double == 1:
        return "sp2"
    return "sp3"


def pi_electrons(graph: MolecularGraph, i: int) -> int:
    atom = graph.atoms[i]
    orders = graph.incident_orders(i)
    if atom.aromatic or AROMATIC in orders:
        return 1
    extra = sum({"single": 0, "double": 1, "triple": 2}[o] for o in orders)
    return min(extra, 2)


def heavy_degree(graph: MolecularGraph, i: int) -> int:
    return len(graph.neighbors(i))


def _one_hot(value, cats, other=True) -> list[float]:
    row = [1.0 if value == c else 0.0 for c in cats]
    if other:
        row.append(0.0 if value in cats else 1.0)
    return row


def atom_features(graph: MolecularGraph) -> AtomFeatureMatrix:
    rows = []
    for i, atom in enumerate(graph.atoms):
        row = _one_hot(atom.element, ELEMENTS)
        row += _one_hot(atom.formal_charge, CHARGES)
        row += _one_hot(hybridization(graph, i), HYBRIDIZATIONS)
        row.append(1.0 if atom.aromatic else 0.0)
        # heavy degree is capped at 6 by valence for the supported elements
        row += _one_hot(min(heavy_degree(graph, i), 6), DEGREES, other=False)
        row += _one_hot(atom.total_h, H_COUNTS)
        row += _one_hot(atom.implicit_h, H_COUNTS)
        row.append(float(radical_electrons(atom, graph.incident_orders(i))))
        rows.append(row)
    values = np.asarray(rows, dtype=np.float64).reshape(graph.n_atoms, N_ATOM_FEATURES)
    return AtomFeatureMatrix(values=values)


# --- pair descriptors -------------------------------------------------------

DescriptorKey = tuple  # (family, type_i, distance, type_j)


@dataclass(frozen=True)
class DescriptorBag:
    counts: dict

    def __len__(self):
        return len(self.counts)

    def merged(self, other: "DescriptorBag") -> "DescriptorBag":
        c = Counter(self.counts)
        c.update(other.counts)
        return DescriptorBag(dict(c))


def ap_type(graph: MolecularGraph, i: int) -> tuple:
    return (graph.atoms[i].element, heavy_degree(graph, i), pi_electrons(graph, i))


DP_CLASSES = ("cation", "anion", "donor", "acceptor", "polar", "hydrophobe", "other")


def dp_type(graph: MolecularGraph, i: int) -> str:
    atom = graph.atoms[i]
    if atom.formal_charge > 0:
        return "cation"
    if atom.formal_charge < 0:
        return "anion"
    if atom.element in ("N", "O"):
        return "donor" if atom.total_h >= 1 else "acceptor"
    if atom.element in ("F", "Cl", "Br", "S"):
        return "polar"
    if atom.element == "C" and all(graph.atoms[j].element == "C" for j in graph.neighbors(i)):
        return "hydrophobe"
    return "other"


def _pair_bag(graph: MolecularGraph, family: str, typer) -> DescriptorBag:
    n = graph.n_atoms
    if n < 2:
        return DescriptorBag({})
    dist = graph.distance_matrix()
    types = [typer(graph, i) for i in range(n)]
    counts: Counter = Counter()
    for i in range(n):
        for j in range(i + 1, n):
            a, b = types[i], types[j]
            if b < a:
                a, b = b, a
            counts[(family, a, int(dist[i, j]), b)] += 1
    return DescriptorBag(dict(counts))


def ap_descriptors(graph: MolecularGraph) -> DescriptorBag:
    """Atom-pair counts keyed by (type_i, bond distance, type_j), type = (element, heavy nbrs, pi e)."""
    return _pair_bag(graph, "AP", ap_type)


def dp_descriptors(graph: MolecularGraph) -> DescriptorBag:
    """Donor/acceptor-pair counts over the seven pharmacophore classes."""
    return _pair_bag(graph, "DP", lambda g, i: (dp_type(g, i),))


def apdp_descriptors(graph: MolecularGraph) -> DescriptorBag:
    return ap_descriptors(graph).merged(dp_descriptors(graph))


def key_to_str(key: DescriptorKey) -> str:
    fam, a, d, b = key
    return f"{fam}|{'.'.join(map(str, a))}|{d}|{'.'.join(map(str, b))}"


def key_from_str(text: str) -> DescriptorKey:
    fam, a, d, b = text.split("|")

    def typ(s):
        parts = s.split(".")
        return tuple(int(p) if p.lstrip("-").isdigit() else p for p in parts)

    return (fam, typ(a), int(d), typ(b))


# --- circular fingerprints -------------------------------------------------

FP_BITS = 2048
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_BOND_CODE = {EDGE_TYPES[0]: 1, EDGE_TYPES[1]: 2, EDGE_TYPES[2]: 3, EDGE_TYPES[3]: 4}


def _encode(obj) -> bytes:
    # tagged, length-prefixed so distinct tuples never share an encoding
    if isinstance(obj, bool):
        return b"b" + (b"\x01" if obj else b"\x00")
    if isinstance(obj, int):
        return b"i" + struct.pack("<Q", obj & _MASK64)
    if isinstance(obj, str):
        raw = obj.encode()
        return b"s" + struct.pack("<I", len(raw)) + raw
    if isinstance(obj, (tuple, list)):
        return b"t" + struct.pack("<I", len(obj)) + b"".join(_encode(x) for x in obj)
    raise TypeError(f"cannot encode {type(obj)}")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset
    n_bits: int = FP_BITS


def circular_fingerprint(graph: MolecularGraph, radius: int = 2) -> Fingerprint:
    if not 0 <= radius <= 5:
        raise ValueError(f"radius must be in [0, 5], got {radius}")
    n = graph.n_atoms
    codes = []
    for i, a in enumerate(graph.atoms):
        codes.append(fnv1a64(_encode((a.element, a.formal_charge, heavy_degree(graph, i), a.total_h, a.aromatic))))
    bits = {c % FP_BITS for c in codes}
    nbr_bonds = [[(_BOND_CODE[EDGE_TYPES[e]], j) for e in range(len(EDGE_TYPES)) for j in graph.adjacency[e][i]]
                 for i in range(n)]
    for _ in range(radius):
        codes = [
            fnv1a64(_encode((codes[i], sorted((bc, codes[j]) for bc, j in nbr_bonds[i]))))
            for i in range(n)
        ]
        bits.update(c % FP_BITS for c in codes)
    return Fingerprint(frozenset(bits))


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.n_bits != b.n_bits:
        raise ValueError(f"fingerprint lengths differ: {a.n_bits} vs {b.n_bits}")
    union = len(a.bits | b.bits)
    if union == 0:
        return 0.0
    return len(a.bits & b.bits) / union


def max_tanimoto(query: Fingerprint, references: Iterable[Fingerprint]) -> float:
    return max((tanimoto(query, r) for r in references), default=0.0)
