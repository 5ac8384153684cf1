import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pbsim import clifford
from pbsim.clifford import (
    BASIS_ROTATION,
    IDENTITY,
    INV,
    MUL,
    ROTATIONS,
    X_PI,
    Z_HALF,
    Z_HALF_INV,
    compile_inverse,
    compose,
    element,
    enumerate_group,
    inverse,
    sample_uniform,
)
from pbsim.qubit import GROUND_AXIS, identity_map
from pbsim.protocol import build_sub_sequence, execute_sequence

AXES = {"z": np.array([0, 0, 1]), "x": np.array([1, 0, 0]), "y": np.array([0, 1, 0])}


def test_group_matches_brute_force_enumeration():
    brute = {R.tobytes() for R in (np.array(P) for P in oracles.signed_permutations()) if round(np.linalg.det(R)) == 1}
    ours = {g.rot.astype(int).tobytes() for g in enumerate_group()}
    assert len(ours) == 24
    assert ours == {np.array(np.frombuffer(b, dtype=int)).reshape(3, 3).tobytes() for b in brute}


def test_identity_first_and_element_invariants():
    assert np.array_equal(element(0).rot, np.eye(3))
    for g in enumerate_group():
        R = g.rot
        assert np.array_equal(R.T @ R, np.eye(3))
        assert set(np.unique(R)) <= {-1, 0, 1}
        assert round(np.linalg.det(R)) == 1


def test_closure_and_table_exhaustive():
    keys = {g.rot.tobytes(): g.index for g in enumerate_group()}
    for a, b in itertools.product(range(24), repeat=2):
        prod = ROTATIONS[a] @ ROTATIONS[b]
        assert keys[prod.tobytes()] == MUL[a, b]


def test_associativity_all_triples():
    a, b, c = np.meshgrid(np.arange(24), np.arange(24), np.arange(24), indexing="ij")
    assert np.array_equal(MUL[MUL[a, b], c], MUL[a, MUL[b, c]])


def test_inverses_unique():
    for g in enumerate_group():
        assert compose(inverse(g), g) == IDENTITY
        assert compose(g, inverse(g)) == IDENTITY
        assert sum(MUL[g.index, h] == 0 for h in range(24)) == 1
        assert inverse(inverse(g)) == g


def test_named_elements():
    assert compose(IDENTITY, Z_HALF) == Z_HALF
    assert compose(X_PI, X_PI) == IDENTITY
    assert inverse(IDENTITY) == IDENTITY
    # inverse of +pi/2 about z is the transpose, i.e. -pi/2 about z
    assert inverse(Z_HALF) == Z_HALF_INV
    assert np.array_equal(Z_HALF_INV.rot, Z_HALF.rot.T)


@pytest.mark.parametrize("basis", ["z", "x", "y"])
def test_basis_rotations_map_measurement_axis(basis):
    # R_basis sends the z axis onto the basis axis, so a ground-state (-z)
    # readout after R_basis reads the component along that axis.
    R = BASIS_ROTATION[basis].rot
    assert np.array_equal(R @ AXES["z"], AXES[basis])
    readout = R.T @ GROUND_AXIS
    assert np.array_equal(readout, {"z": -1, "x": 1, "y": 1}[basis] * AXES[basis])


def test_compile_inverse_empty():
    assert compile_inverse([], "z") == IDENTITY


@given(st.lists(st.integers(0, 23), max_size=30), st.sampled_from(["z", "x", "y"]), st.booleans())
def test_compile_inverse_axis_mapping(seq, basis, flip):
    net = np.eye(3, dtype=int)
    for g in seq:
        net = ROTATIONS[g] @ net
    total = compile_inverse(seq, basis, flip).rot @ net
    expected = X_PI.rot @ BASIS_ROTATION[basis].rot if flip else BASIS_ROTATION[basis].rot
    assert np.array_equal(total, expected)
    # the ground readout axis is pulled back onto the requested axis, reversed under flip
    readout = BASIS_ROTATION[basis].rot.T @ GROUND_AXIS
    assert np.array_equal(total.T @ GROUND_AXIS, (-1 if flip else 1) * readout)
    assert np.array_equal(np.abs(readout), AXES[basis])


def test_noiseless_execution_survival():
    rng = np.random.default_rng(3)
    for m in (0, 1, 5, 40):
        sub = build_sub_sequence(m, rng)
        assert execute_sequence(sub, "z", identity_map(), 1)[0] == pytest.approx(1.0)
        assert execute_sequence(sub, "z_flip", identity_map(), 1)[0] == pytest.approx(0.0)
        # x and y variants of a state on the z axis read zero
        assert execute_sequence(sub, "x", identity_map(), 1)[0] == pytest.approx(0.5)
        assert execute_sequence(sub, "y", identity_map(), 1)[0] == pytest.approx(0.5)


def test_sample_uniform_basics():
    rng = np.random.default_rng(0)
    assert sample_uniform(rng, 0) == []
    a = sample_uniform(np.random.default_rng(11), 50)
    b = sample_uniform(np.random.default_rng(11), 50)
    assert a == b
    with pytest.raises(ValueError):
        sample_uniform(rng, -1)


def _chi2_pvalue(counts):
    from scipy.stats import chisquare

    return chisquare(counts).pvalue


def test_sampling_uniform_24000_draws():
    draws = [g.index for g in sample_uniform(np.random.default_rng(2024), 24_000)]
    counts = np.bincount(draws, minlength=24)
    assert counts.min() >= 800 and counts.max() <= 1200
    assert _chi2_pvalue(counts) > 0.001


def test_sampling_uniform_1e5_draws():
    counts = np.bincount(clifford.sample_indices(np.random.default_rng(7), 100_000), minlength=24)
    assert _chi2_pvalue(counts) > 0.001


def test_quarter_turns_are_rotations():
    from pbsim.qubit import rotation_matrix

    assert np.array_equal(np.rint(rotation_matrix([0, 0, 1], math.pi / 2)).astype(int), Z_HALF.rot)
    assert INV[0] == 0
