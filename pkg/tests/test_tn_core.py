"""Tests for tensor-train algebra."""

import numpy as np
import pytest

from src.controllers import tn_core
from src.models.lattice import build_hamiltonian_mpo, build_observable_mpo, sparse_hamiltonian
from src.models.tensor_train import OperatorTrain, TensorTrain, TruncationPolicy, isometry_deviation
from src.utils.constants import SIGMA_X, SIGMA_Z
from src.utils.errors import LengthMismatch, StructurallyInvalid


def test_exact_compression_preserves_state(random_state):
    """Compression without truncation keeps the vector and yields a canonical form."""
    state = random_state(6, bond=4)
    compressed, error = tn_core.canonical_compress(state, TruncationPolicy.exact())
    assert error < 1e-12
    assert compressed.canonical_center == 0
    assert isometry_deviation(compressed) < 1e-10
    assert np.allclose(compressed.to_dense(), state.to_dense())


def test_truncation_error_is_recorded(random_state):
    """Truncating to bond 1 loses weight and reports it."""
    state = random_state(6, bond=4)
    compressed, error = tn_core.canonical_compress(state, TruncationPolicy(max_bond=1))
    assert compressed.max_bond == 1
    assert error > 0
    assert compressed.truncation_error == pytest.approx(state.truncation_error + error)


def test_ghz_truncation_error():
    """Cutting the N=6 GHZ state to bond 1 discards 1/sqrt(2) of its norm."""
    copy = np.zeros((2, 2, 2), dtype=complex)
    copy[0, 0, 0] = copy[1, 1, 1] = 1.0
    edge = np.eye(2, dtype=complex)
    ghz = TensorTrain((edge.reshape(1, 2, 2),) + (copy,) * 4 + (edge.reshape(2, 2, 1),))
    compressed, error = tn_core.canonical_compress(ghz, TruncationPolicy(max_bond=1))
    assert error == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-10)
    assert compressed.max_bond == 1


def test_sandwich_matches_dense(random_state, six_site_spec):
    """<a|H|b> and <a|b> agree with dense linear algebra."""
    a, b = random_state(6, 3), random_state(6, 2)
    hamiltonian = sparse_hamiltonian(six_site_spec).toarray()
    expected = np.vdot(a.to_dense(), hamiltonian @ b.to_dense())
    assert tn_core.sandwich(a, build_hamiltonian_mpo(six_site_spec), b) == pytest.approx(expected)
    assert tn_core.sandwich(a, None, b) == pytest.approx(np.vdot(a.to_dense(), b.to_dense()))
    assert tn_core.sandwich(a, "identity", b) == pytest.approx(np.vdot(a.to_dense(), b.to_dense()))


def test_length_mismatch(random_state):
    """Trains of different lengths cannot be contracted."""
    with pytest.raises(LengthMismatch):
        tn_core.sandwich(random_state(4), None, random_state(5))


def test_mpo_trace_of_identity_is_dimension():
    """tr(1) = 2^N even for large N thanks to the carried log scale."""
    assert tn_core.mpo_trace(OperatorTrain.identity(10)) == pytest.approx(1024.0)
    assert abs(tn_core.mpo_trace(OperatorTrain.identity(60))) == pytest.approx(2.0**60, rel=1e-10)
    with pytest.raises(StructurallyInvalid):
        tn_core.mpo_trace(TensorTrain.from_bits((0, 1)))


def test_trace_sandwich(six_site_spec):
    """tr(A^dagger O B) agrees with the dense expression."""
    a = build_hamiltonian_mpo(six_site_spec)
    b = OperatorTrain.from_local([SIGMA_X] * 6)
    obs = build_observable_mpo(six_site_spec, "m_z")
    dense = np.trace(a.to_dense().conj().T @ obs.to_dense() @ b.to_dense())
    assert tn_core.trace_sandwich(a, obs, b) == pytest.approx(dense)
    plain = np.trace(a.to_dense().conj().T @ b.to_dense())
    assert tn_core.trace_sandwich(a, None, b) == pytest.approx(plain, abs=1e-9)


@pytest.mark.parametrize("method", ["zipup", "direct"])
def test_apply_mpo(random_state, six_site_spec, method):
    """Both contraction methods reproduce H|psi> when nothing is truncated."""
    state = random_state(6, 2)
    hamiltonian = build_hamiltonian_mpo(six_site_spec)
    result = tn_core.apply_mpo(hamiltonian, state, TruncationPolicy.exact(), method=method)
    expected = sparse_hamiltonian(six_site_spec).toarray() @ state.to_dense()
    assert np.allclose(result.to_dense(), expected)


def test_unknown_apply_method(random_state, six_site_spec):
    """Only zipup and direct are known."""
    with pytest.raises(StructurallyInvalid):
        tn_core.apply_mpo(build_hamiltonian_mpo(six_site_spec), random_state(6), TruncationPolicy(), "variational")


def test_mpo_multiply_and_add(six_site_spec):
    """Products and sums follow the dense matrices."""
    h = build_hamiltonian_mpo(six_site_spec)
    z = OperatorTrain.from_local([SIGMA_Z] * 6)
    product = tn_core.mpo_multiply(h, z, TruncationPolicy.exact())
    assert np.allclose(product.to_dense(), h.to_dense() @ z.to_dense())
    total = tn_core.mpo_add(h, z.scaled(2.0))
    assert np.allclose(total.to_dense(), h.to_dense() + 2.0 * z.to_dense())


def test_mpo_matvec(six_site_spec, rng):
    """Operator trains act on batches of dense vectors."""
    h = build_hamiltonian_mpo(six_site_spec)
    vectors = rng.normal(size=(64, 3))
    assert np.allclose(tn_core.mpo_matvec(h, vectors), h.to_dense() @ vectors)
    assert np.allclose(tn_core.mpo_matvec(h, vectors[:, 0]), h.to_dense() @ vectors[:, 0])


def test_local_application_and_normalisation(random_state):
    """apply_local keeps bonds; normalized yields unit norm; expectation is the real ratio."""
    state = random_state(4, 2).scaled(0.7)
    flipped = tn_core.apply_local(state, 1, SIGMA_X)
    assert flipped.bond_dims == state.bond_dims
    assert tn_core.state_norm(tn_core.normalized(state)) == pytest.approx(1.0)
    z_all = OperatorTrain.from_local([SIGMA_Z] * 4)
    vector = state.to_dense()
    expected = np.vdot(vector, z_all.to_dense() @ vector).real / np.vdot(vector, vector).real
    assert tn_core.expectation(state, z_all) == pytest.approx(expected)
