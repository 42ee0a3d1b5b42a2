"""Tests for the tensor-train data types."""

import numpy as np
import pytest

from src.models.tensor_train import (
    OperatorTrain,
    TensorTrain,
    TruncationPolicy,
    dumps_train,
    isometry_deviation,
    loads_train,
)
from src.utils.constants import SIGMA_X, SIGMA_Z
from src.utils.errors import CorruptCache, NonPositiveParameter, StructurallyInvalid


def test_from_bits_orders_site_zero_first():
    """Site 0 is the most significant index and bit 1 is spin down."""
    vector = TensorTrain.from_bits((0, 1, 1)).to_dense()
    assert vector[3] == pytest.approx(1.0)
    assert np.count_nonzero(np.abs(vector) > 0) == 1


def test_from_dense_reproduces_vector(rng):
    """An exact MPS of a dense vector contracts back to it."""
    vector = rng.normal(size=32) + 1j * rng.normal(size=32)
    train = TensorTrain.from_dense(vector, 5)
    assert np.allclose(train.to_dense(), vector)
    assert train.canonical_center == 4
    assert isometry_deviation(train) < 1e-10


def test_bond_mismatch_rejected():
    """Adjacent bond dimensions must agree."""
    with pytest.raises(StructurallyInvalid):
        TensorTrain((np.ones((1, 2, 2)), np.ones((3, 2, 1))))
    with pytest.raises(StructurallyInvalid):
        TensorTrain((np.ones((2, 2, 1)),))


def test_operator_identity_and_local():
    """Identity and product operators match their dense Kronecker forms."""
    assert np.allclose(OperatorTrain.identity(3).to_dense(), np.eye(8))
    op = OperatorTrain.from_local([SIGMA_X, SIGMA_Z])
    assert np.allclose(op.to_dense(), np.kron(SIGMA_X, SIGMA_Z))


def test_dagger_and_scaling():
    """dagger conjugate-transposes; scaled multiplies by any non-zero scalar."""
    local = np.array([[1.0, 2.0j], [0.5, -1.0]])
    op = OperatorTrain.from_local([local, SIGMA_X])
    dense = op.to_dense()
    assert np.allclose(op.dagger().to_dense(), dense.conj().T)
    assert np.allclose(op.scaled(-2.5).to_dense(), -2.5 * dense)
    with pytest.raises(StructurallyInvalid):
        op.scaled(0)


def test_truncation_policy_keep():
    """Singular values below the relative cutoff or beyond max_bond are dropped."""
    values = np.array([1.0, 0.5, 1e-12])
    assert TruncationPolicy(max_bond=10, sv_cutoff=1e-10).keep(values) == 2
    assert TruncationPolicy(max_bond=1).keep(values) == 1
    with pytest.raises(NonPositiveParameter):
        TruncationPolicy(max_bond=0)


def test_binary_format(random_state):
    """Stored trains load back with their tensors and scale."""
    state = random_state(4, bond=3).scaled(1.5)
    loaded = loads_train(dumps_train(state))
    assert isinstance(loaded, TensorTrain)
    assert np.allclose(loaded.to_dense(), state.to_dense())
    op = OperatorTrain.from_local([SIGMA_X, SIGMA_Z])
    assert isinstance(loads_train(dumps_train(op)), OperatorTrain)


def test_corrupt_payload_names_file(random_state):
    """Bad magic and truncated data raise CorruptCache with the file name."""
    payload = dumps_train(random_state(3))
    with pytest.raises(CorruptCache, match="U_000001.fett"):
        loads_train(payload[:-20], name="U_000001.fett")
    with pytest.raises(CorruptCache):
        loads_train(b"XXXXX" + payload[5:])
