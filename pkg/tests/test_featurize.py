from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from admetgnn.featurize import (
    ATOM_FEATURE_SCHEMA,
    N_ATOM_FEATURES,
    ONE_HOT_GROUP_NAMES,
    Fingerprint,
    ap_descriptors,
    ap_type,
    apdp_descriptors,
    atom_features,
    circular_fingerprint,
    dp_descriptors,
    dp_type,
    fnv1a64,
    key_from_str,
    key_to_str,
    max_tanimoto,
    schema_hash,
    tanimoto,
)
from admetgnn.molgraph import parse_smiles, renumber
from admetgnn.synthetic import random_smiles

from conftest import SMALL_MOLECULES


def _random_graph(seed):
    rng = np.random.default_rng(seed)
    return parse_smiles(random_smiles(rng, int(rng.integers(0, 7)))), rng


def test_schema_shape_and_hash_stable():
    assert N_ATOM_FEATURES == len(ATOM_FEATURE_SCHEMA) == 43
    assert len(set(ATOM_FEATURE_SCHEMA)) == N_ATOM_FEATURES
    assert schema_hash() == schema_hash(tuple(ATOM_FEATURE_SCHEMA))
    assert schema_hash() != schema_hash(ATOM_FEATURE_SCHEMA[:-1])


@pytest.mark.parametrize("smiles", SMALL_MOLECULES)
def test_one_hot_groups_sum_to_one(smiles):
    fm = atom_features(parse_smiles(smiles))
    assert fm.values.shape == (parse_smiles(smiles).n_atoms, N_ATOM_FEATURES)
    for name in ONE_HOT_GROUP_NAMES:
        assert np.allclose(fm.group(name).sum(axis=1), 1.0), name


def test_methane_row():
    fm = atom_features(parse_smiles("C"))
    row = dict(zip(ATOM_FEATURE_SCHEMA, fm.values[0]))
    assert row[("element", "C")] == 1 and row[("hybridization", "sp3")] == 1
    assert row[("degree", "0")] == 1 and row[("total_h", "4")] == 1 and row[("implicit_h", "4")] == 1
    assert row[("aromatic", "1")] == 0 and row[("radical_electrons", "count")] == 0


def test_every_supported_element_has_a_column():
    from admetgnn.molgraph import SUPPORTED_ELEMENTS
    assert SUPPORTED_ELEMENTS <= {c for g, c in ATOM_FEATURE_SCHEMA if g == "element"}


def test_benzene_features():
    fm = atom_features(parse_smiles("c1ccccc1"))
    row = dict(zip(ATOM_FEATURE_SCHEMA, fm.values[0]))
    assert row[("aromatic", "1")] == 1 and row[("hybridization", "sp2")] == 1 and row[("degree", "2")] == 1


# --- pair descriptors -------------------------------------------------------

def _floyd(g):
    n = g.n_atoms
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for b in g.bonds:
        d[b.begin, b.end] = d[b.end, b.begin] = 1
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d.astype(int)


def _pair_oracle(g, family, typer):
    d = _floyd(g)
    out = Counter()
    for i in range(g.n_atoms):
        for j in range(g.n_atoms):
            if i < j:
                a, b = sorted([typer(g, i), typer(g, j)])
                out[(family, a, int(d[i, j]), b)] += 1
    return dict(out)


def test_ethane_ap_bag():
    bag = ap_descriptors(parse_smiles("CC"))
    assert bag.counts == {("AP", ("C", 1, 0), 1, ("C", 1, 0)): 1}


@pytest.mark.parametrize("smiles", SMALL_MOLECULES)
def test_ap_dp_match_floyd_warshall_oracle(smiles):
    g = parse_smiles(smiles)
    assert ap_descriptors(g).counts == _pair_oracle(g, "AP", ap_type)
    assert dp_descriptors(g).counts == _pair_oracle(g, "DP", lambda g, i: (dp_type(g, i),))
    n = g.n_atoms
    assert sum(ap_descriptors(g).counts.values()) == n * (n - 1) // 2
    assert sum(apdp_descriptors(g).counts.values()) == n * (n - 1)


def test_single_atom_has_empty_bags():
    assert len(ap_descriptors(parse_smiles("C"))) == 0
    assert len(dp_descriptors(parse_smiles("[NH4+]"))) == 0


def test_key_string_roundtrip():
    for key in apdp_descriptors(parse_smiles("CC(=O)Nc1ccc(O)cc1")).counts:
        assert key_from_str(key_to_str(key)) == key


@given(st.integers(0, 10_000))
def test_bags_and_fingerprint_permutation_invariant(seed):
    g, rng = _random_graph(seed)
    h = renumber(g, rng.permutation(g.n_atoms))
    assert ap_descriptors(g).counts == ap_descriptors(h).counts
    assert dp_descriptors(g).counts == dp_descriptors(h).counts
    assert circular_fingerprint(g) == circular_fingerprint(h)


@given(st.integers(0, 10_000))
def test_feature_rows_follow_permutation(seed):
    g, rng = _random_graph(seed)
    perm = rng.permutation(g.n_atoms)
    h = renumber(g, perm)
    assert np.array_equal(atom_features(h).values, atom_features(g).values[perm])


# --- fingerprints -----------------------------------------------------------

def test_fnv1a64_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_fingerprint_radius_monotone():
    g = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    prev = set()
    for r in range(4):
        bits = circular_fingerprint(g, r).bits
        assert prev <= bits and all(0 <= b < 2048 for b in bits)
        prev = bits
    with pytest.raises(ValueError):
        circular_fingerprint(g, 6)


def test_tanimoto_properties():
    fps = [circular_fingerprint(parse_smiles(s)) for s in SMALL_MOLECULES]
    for a in fps:
        assert tanimoto(a, a) == 1.0
        for b in fps:
            t = tanimoto(a, b)
            assert 0.0 <= t <= 1.0 and t == tanimoto(b, a)
    assert tanimoto(Fingerprint(frozenset()), Fingerprint(frozenset())) == 0.0
    assert max_tanimoto(fps[0], []) == 0.0
    assert max_tanimoto(fps[0], fps) == 1.0
    with pytest.raises(ValueError):
        tanimoto(fps[0], Fingerprint(frozenset(), n_bits=1024))


def test_tanimoto_set_oracle():
    a = Fingerprint(frozenset({1, 2, 3, 4}))
    b = Fingerprint(frozenset({3, 4, 5}))
    assert tanimoto(a, b) == pytest.approx(2 / 5)
