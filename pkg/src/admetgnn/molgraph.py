"""SMILES subset parser and the immutable molecular graph it produces."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidRingBond,
    MultiComponentUnsupported,
    SmilesError,
    UnbalancedParen,
    UnclosedRing,
    UnexpectedCharacter,
    UnknownAtomSymbol,
    ValenceViolation,
)

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
EDGE_TYPES = (SINGLE, DOUBLE, TRIPLE, AROMATIC)
N_EDGE_TYPES = len(EDGE_TYPES)

# numeric order used for valence sums; aromatic handled separately
BOND_ORDER = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}

ATOMIC_MASS = {
    "H": 1.008, "B": 10.811, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.086, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "Br": 79.904, "I": 126.904,
}
SUPPORTED_ELEMENTS = frozenset(ATOMIC_MASS) - {"H"}
ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}

# Every real element symbol, so "[Co]" is reported as Co rather than C + o.
_ALL_ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs
Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh
Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split())

# Allowed valences by (element, formal charge); the first entry is the default.
VALENCE_TABLE: dict[tuple[str, int], tuple[int, ...]] = {
    ("B", 0): (3,), ("C", 0): (4,), ("N", 0): (3, 5), ("O", 0): (2,),
    ("P", 0): (3, 5), ("S", 0): (2, 4, 6), ("F", 0): (1,), ("Cl", 0): (1,),
    ("Br", 0): (1,), ("I", 0): (1,), ("Si", 0): (4,),
    ("B", -1): (4,), ("C", 1): (3,), ("C", -1): (3,),
    ("N", 1): (4,), ("N", -1): (2,), ("N", -2): (1,),
    ("O", 1): (3,), ("O", -1): (1,), ("O", -2): (0,),
    ("P", 1): (4,), ("P", -1): (2, 4),
    ("S", 1): (3, 5), ("S", -1): (1, 3, 5), ("S", -2): (0,),
    ("F", -1): (0,), ("Cl", -1): (0,), ("Br", -1): (0,), ("I", -1): (0,),
    ("Si", -1): (3,),
}


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    explicit_h: int = 0
    implicit_h: int = 0
    aromatic: bool = False
    isotope: Optional[int] = None
    index: int = 0
    bracket: bool = False

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    # adjacency[e][i] -> sorted neighbour indices of atom i over edge type e
    adjacency: tuple[tuple[tuple[int, ...], ...], ...]
    source_smiles: str = ""
    _distances: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(j for e in range(N_EDGE_TYPES) for j in self.adjacency[e][i]))

    def bond_between(self, i: int, j: int) -> Optional[Bond]:
        for b in self.bonds:
            if (b.begin == i and b.end == j) or (b.begin == j and b.end == i):
                return b
        return None

    def incident_orders(self, i: int) -> list[str]:
        return [b.order for b in self.bonds if i in (b.begin, b.end)]

    def distance_matrix(self) -> np.ndarray:
        # memoised in a private list so the dataclass stays frozen
        if not self._distances:
            self._distances.append(shortest_bond_distances(self))
        return self._distances[0]


def valence_bond_sum(orders: Sequence[str]) -> int:
    """Bond-order sum with aromatic bonds as 1.5, rounded up after summation."""
    return math.ceil(sum(BOND_ORDER[o] for o in orders))


def allowed_valences(element: str, charge: int) -> Optional[tuple[int, ...]]:
    return VALENCE_TABLE.get((element, charge))


def implicit_hydrogens(atom: Atom, orders: Sequence[str]) -> int:
    """Implicit H for an atom given the orders of its bonds.

    Bracket atoms never receive implicit hydrogens.  Aromatic atoms use the
    default valence; aliphatic atoms the smallest allowed valence that fits.
    """
    if atom.bracket:
        return 0
    vals = allowed_valences(atom.element, atom.formal_charge)
    if vals is None:
        return 0
    s = valence_bond_sum(orders)
    if atom.aromatic:
        target = vals[0]
    else:
        target = next((v for v in vals if v >= s + atom.explicit_h), vals[-1])
    return max(0, target - s - atom.explicit_h)


def radical_electrons(atom: Atom, orders: Sequence[str]) -> int:
    if not atom.bracket or atom.aromatic:
        return 0
    vals = allowed_valences(atom.element, atom.formal_charge)
    if vals is None:
        return 0
    used = valence_bond_sum(orders) + atom.total_h
    target = next((v for v in vals if v >= used), vals[-1])
    return max(0, target - used)


def _check_valence(atom: Atom, orders: Sequence[str], text: str) -> None:
    vals = allowed_valences(atom.element, atom.formal_charge)
    if vals is None:
        return
    if atom.aromatic:
        # sigma count only: the pi electron may sit in an exocyclic double bond
        used = sum(1 if o == AROMATIC else int(BOND_ORDER[o]) for o in orders)
    else:
        used = valence_bond_sum(orders)
    used += atom.explicit_h
    if used > max(vals):
        charge = f"{atom.formal_charge:+d}" if atom.formal_charge else ""
        raise ValenceViolation(
            f"atom {atom.index} ({atom.element}{charge}) has valence {used} > {max(vals)} in {text!r}"
        )


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[dict] = []
        self.bonds: list[tuple[int, int, str]] = []
        self.bonded: set[frozenset] = set()

    def error(self, cls, msg):
        return cls(f"{msg} at position {self.pos} in {self.text!r}")

    def parse(self):
        text = self.text
        prev: Optional[int] = None
        pending: Optional[str] = None
        branches: list[int] = []
        rings: dict[int, tuple[int, Optional[str], int]] = {}
        last_char = ""
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if prev is None:
                    raise self.error(UnexpectedCharacter, "branch before any atom")
                if pending is not None:
                    raise self.error(UnexpectedCharacter, "bond symbol before branch")
                branches.append(prev)
                self.pos += 1
            elif ch == ")":
                if not branches:
                    raise self.error(UnbalancedParen, "unmatched ')'")
                if pending is not None or last_char == "(":
                    raise self.error(UnexpectedCharacter, "empty branch or dangling bond")
                prev = branches.pop()
                self.pos += 1
            elif ch in "-=#:/\\":
                if pending is not None:
                    raise self.error(UnexpectedCharacter, "two consecutive bond symbols")
                if prev is None:
                    raise self.error(UnexpectedCharacter, "bond before any atom")
                pending = ch
                self.pos += 1
            elif ch == ".":
                raise self.error(MultiComponentUnsupported, "multi-component SMILES")
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error(UnexpectedCharacter, "ring closure before any atom")
                num = self._ring_number()
                if num in rings:
                    other, sym, _ = rings.pop(num)
                    if sym is not None and pending is not None and sym != pending:
                        raise self.error(InvalidRingBond, f"conflicting bond symbols on ring {num}")
                    self._add_bond(other, prev, sym if sym is not None else pending)
                else:
                    rings[num] = (prev, pending, self.pos)
                pending = None
            elif ch == "[":
                idx = self._bracket_atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending)
                prev, pending = idx, None
            elif ch.isalpha():
                idx = self._organic_atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending)
                prev, pending = idx, None
            else:
                raise self.error(UnexpectedCharacter, f"unexpected character {ch!r}")
            last_char = ch
        if branches:
            raise UnbalancedParen(f"{len(branches)} unclosed '(' in {text!r}")
        if rings:
            nums = ", ".join(str(n) for n in sorted(rings))
            raise UnclosedRing(f"ring bond(s) {nums} opened but never closed in {text!r}")
        if pending is not None:
            raise UnexpectedCharacter(f"dangling bond symbol at end of {text!r}")
        if not self.atoms:
            raise UnexpectedCharacter(f"no atoms in {text!r}")

    def _ring_number(self) -> int:
        text = self.text
        if text[self.pos] == "%":
            digits = text[self.pos + 1:self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error(UnexpectedCharacter, "'%' must be followed by two digits")
            self.pos += 3
            return int(digits)
        self.pos += 1
        return int(text[self.pos - 1])

    def _add_bond(self, a: int, b: int, sym: Optional[str]) -> None:
        if a == b:
            raise self.error(InvalidRingBond, "ring closure onto the same atom")
        key = frozenset((a, b))
        if key in self.bonded:
            raise self.error(InvalidRingBond, f"duplicate bond between atoms {a} and {b}")
        if sym in (None, "/", "\\"):
            both_arom = self.atoms[a]["aromatic"] and self.atoms[b]["aromatic"]
            order = AROMATIC if (sym is None and both_arom) else SINGLE
        else:
            order = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}[sym]
        self.bonded.add(key)
        self.bonds.append((a, b, order))

    def _new_atom(self, **kw) -> int:
        kw.setdefault("formal_charge", 0)
        kw.setdefault("explicit_h", 0)
        kw.setdefault("isotope", None)
        kw.setdefault("bracket", False)
        self.atoms.append(kw)
        return len(self.atoms) - 1

    def _organic_atom(self) -> int:
        text = self.text
        for sym in ORGANIC_SUBSET:
            if text.startswith(sym, self.pos):
                self.pos += len(sym)
                return self._new_atom(element=sym, aromatic=False)
        ch = text[self.pos]
        if ch in AROMATIC_SYMBOLS:
            self.pos += 1
            return self._new_atom(element=AROMATIC_SYMBOLS[ch], aromatic=True)
        sym = ch
        if ch.isupper() and text[self.pos + 1:self.pos + 2].islower():
            sym = text[self.pos:self.pos + 2]
        raise self.error(UnknownAtomSymbol, f"unknown or non-organic atom symbol {sym!r}")

    def _bracket_atom(self) -> int:
        text = self.text
        end = text.find("]", self.pos)
        if end < 0:
            raise self.error(UnexpectedCharacter, "unterminated bracket atom")
        body = text[self.pos + 1:end]
        i = 0
        isotope = None
        while i < len(body) and body[i].isdigit():
            i += 1
        if i:
            isotope = int(body[:i])
            if isotope <= 0:
                raise self.error(UnexpectedCharacter, "isotope must be positive")
        rest = body[i:]
        if not rest:
            raise self.error(UnknownAtomSymbol, "empty bracket atom")
        aromatic = False
        if rest[:2] in ("se", "as", "te"):
            raise self.error(UnknownAtomSymbol, f"unsupported aromatic symbol {rest[:2]!r}")
        if rest[0] in AROMATIC_SYMBOLS:
            element, aromatic, j = AROMATIC_SYMBOLS[rest[0]], True, 1
        elif rest[0].isupper():
            if len(rest) > 1 and rest[1].islower() and rest[:2] in _ALL_ELEMENTS:
                element, j = rest[:2], 2
            else:
                element, j = rest[0], 1
            if element not in SUPPORTED_ELEMENTS:
                raise self.error(UnknownAtomSymbol, f"unsupported element {element!r}")
        else:
            raise self.error(UnknownAtomSymbol, f"bad bracket atom [{body}]")
        # chirality: consumed and discarded
        while j < len(rest) and rest[j] == "@":
            j += 1
            if rest[j:j + 2] in ("TH", "AL", "SP", "TB", "OH") and rest[j + 2:j + 3].isdigit():
                j += 2
                while j < len(rest) and rest[j].isdigit():
                    j += 1
        hcount = 0
        if j < len(rest) and rest[j] == "H":
            j += 1
            k = j
            while j < len(rest) and rest[j].isdigit():
                j += 1
            hcount = int(rest[k:j]) if j > k else 1
        charge = 0
        if j < len(rest) and rest[j] in "+-":
            sign = 1 if rest[j] == "+" else -1
            j += 1
            k = j
            while j < len(rest) and rest[j].isdigit():
                j += 1
            if j > k:
                charge = sign * int(rest[k:j])
            else:
                charge = sign
                while j < len(rest) and rest[j] == ("+" if sign > 0 else "-"):
                    charge += sign
                    j += 1
        if j < len(rest) and rest[j] == ":":
            j += 1
            while j < len(rest) and rest[j].isdigit():
                j += 1
        if j != len(rest):
            raise self.error(UnexpectedCharacter, f"cannot parse bracket atom [{body}]")
        if not -4 <= charge <= 4:
            raise self.error(UnexpectedCharacter, f"formal charge {charge} outside [-4, 4]")
        self.pos = end + 1
        return self._new_atom(element=element, aromatic=aromatic, formal_charge=charge,
                              explicit_h=hcount, isotope=isotope, bracket=True)


def build_graph(atom_specs: Sequence[dict], bond_specs: Sequence[tuple[int, int, str]],
                source: str = "") -> MolecularGraph:
    """Assemble a graph from raw atom attributes and bonds; assigns implicit H and checks valence."""
    n = len(atom_specs)
    orders: list[list[str]] = [[] for _ in range(n)]
    adjacency = [[[] for _ in range(n)] for _ in EDGE_TYPES]
    for a, b, order in bond_specs:
        orders[a].append(order)
        orders[b].append(order)
        e = EDGE_TYPES.index(order)
        adjacency[e][a].append(b)
        adjacency[e][b].append(a)
    atoms = []
    for i, spec in enumerate(atom_specs):
        raw = Atom(index=i, **{k: v for k, v in spec.items() if k not in ("index", "implicit_h")})
        _check_valence(raw, orders[i], source)
        atoms.append(Atom(
            element=raw.element, formal_charge=raw.formal_charge, explicit_h=raw.explicit_h,
            implicit_h=implicit_hydrogens(raw, orders[i]), aromatic=raw.aromatic,
            isotope=raw.isotope, index=i, bracket=raw.bracket,
        ))
    bonds = tuple(Bond(a, b, o) for a, b, o in bond_specs)
    adj = tuple(tuple(tuple(sorted(nb)) for nb in per_type) for per_type in adjacency)
    return MolecularGraph(atoms=tuple(atoms), bonds=bonds, adjacency=adj, source_smiles=source)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a single-component SMILES string into a MolecularGraph.

    Stereo markers are consumed and discarded.  Raises a SmilesError subclass
    naming the defect (UnclosedRing, UnbalancedParen, UnknownAtomSymbol,
    ValenceViolation, MultiComponentUnsupported, ...).
    """
    if not isinstance(text, str) or not text.strip():
        raise UnexpectedCharacter("empty SMILES")
    text = text.strip()
    if not text.isascii():
        raise UnexpectedCharacter(f"non-ASCII SMILES {text!r}")
    p = _Parser(text)
    p.parse()
    return build_graph(p.atoms, p.bonds, text)


def renumber(graph: MolecularGraph, order: Sequence[int]) -> MolecularGraph:
    """Return the same molecule with atoms reordered: new atom k is old atom order[k]."""
    order = list(order)
    if sorted(order) != list(range(graph.n_atoms)):
        raise ValueError("order must be a permutation of atom indices")
    new_of_old = {old: new for new, old in enumerate(order)}
    specs = []
    for old in order:
        a = graph.atoms[old]
        specs.append(dict(element=a.element, formal_charge=a.formal_charge, explicit_h=a.explicit_h,
                          aromatic=a.aromatic, isotope=a.isotope, bracket=a.bracket))
    bonds = sorted(
        (min(new_of_old[b.begin], new_of_old[b.end]), max(new_of_old[b.begin], new_of_old[b.end]), b.order)
        for b in graph.bonds
    )
    return build_graph(specs, bonds, graph.source_smiles)


def shortest_bond_distances(graph: MolecularGraph) -> np.ndarray:
    """All-pairs topological distance (every bond counts 1), by BFS from each atom."""
    n = graph.n_atoms
    nbrs = [graph.neighbors(i) for i in range(n)]
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    return dist


def molecular_weight(graph: MolecularGraph) -> float:
    """Average molecular weight in g/mol: heavy-atom masses plus 1.008 per hydrogen."""
    heavy = sum(ATOMIC_MASS[a.element] for a in graph.atoms)
    n_h = sum(a.total_h for a in graph.atoms)
    return heavy + ATOMIC_MASS["H"] * n_h


def summary(graph: MolecularGraph) -> dict:
    return {
        "smiles": graph.source_smiles,
        "atoms": graph.n_atoms,
        "bonds": len(graph.bonds),
        "implicit_h": sum(a.implicit_h for a in graph.atoms),
        "total_h": sum(a.total_h for a in graph.atoms),
        "molecular_weight": round(molecular_weight(graph), 3),
    }


__all__ = [
    "Atom", "Bond", "MolecularGraph", "EDGE_TYPES", "N_EDGE_TYPES", "ATOMIC_MASS",
    "parse_smiles", "build_graph", "renumber", "shortest_bond_distances", "molecular_weight",
    "implicit_hydrogens", "radical_electrons", "valence_bond_sum", "summary", "SmilesError",
]
