"""Tests for variance minimisation and state filtering."""

import math

import numpy as np
import pytest

from src.controllers import tn_core
from src.controllers.ed_oracle import dense_eigensystem
from src.controllers.estimators import thermal_reference
from src.controllers.variance import (
    convergence_scan,
    minimize_variance_mps,
    squared_shifted_hamiltonian,
    state_filter_pipeline,
)
from src.models.lattice import IsingSpec, sparse_hamiltonian
from src.utils.errors import NonConvergent, NonPositiveParameter


def test_squared_operator_matches_dense(small_spec):
    """(H - E)^2 as a train equals the dense square."""
    dense = sparse_hamiltonian(small_spec).toarray() - 0.3 * np.eye(16)
    assert np.allclose(squared_shifted_hamiltonian(small_spec, 0.3).to_dense(), dense @ dense)


def test_ground_state_has_zero_variance(small_spec):
    """At the ground energy with an exact bond the minimiser finds the eigenstate."""
    eigenvalues, _ = dense_eigensystem(small_spec)
    result = minimize_variance_mps(small_spec, eigenvalues[0], 4, max_sweeps=50)
    assert result.converged
    assert result.variance < 1e-8
    assert result.E_mean == pytest.approx(eigenvalues[0], abs=1e-4)
    assert tn_core.state_norm(result.state) == pytest.approx(1.0)


def test_sweeps_do_not_increase_objective(six_site_spec):
    """Each recorded objective is at most the previous one."""
    result = minimize_variance_mps(six_site_spec, -1.0, 2, strict=False)
    history = np.asarray(result.sweep_history)
    assert np.all(np.diff(history) <= 1e-9)
    assert result.variance == pytest.approx(history[-1], abs=1e-8)
    assert result.sigma_D == pytest.approx(math.sqrt(result.variance))
    assert result.bond == 2


def test_larger_bond_lowers_variance(six_site_spec):
    """Bond 4 reaches a variance no worse than a product state."""
    product = minimize_variance_mps(six_site_spec, 0.5, 1, strict=False)
    entangled = minimize_variance_mps(six_site_spec, 0.5, 4, strict=False)
    assert product.state.max_bond == 1
    assert entangled.variance <= product.variance + 1e-9


def test_non_convergence_carries_result(six_site_spec):
    """Running out of sweeps raises with the best state attached."""
    with pytest.raises(NonConvergent) as info:
        minimize_variance_mps(six_site_spec, 0.5, 2, max_sweeps=1, tol=0.0)
    assert info.value.result.bond == 2
    assert not info.value.result.converged
    with pytest.raises(NonPositiveParameter):
        minimize_variance_mps(six_site_spec, 0.5, 0)


def test_state_filter_pipeline(small_spec):
    """One row per bond with delta = sigma_D / (2 sqrt N) and the thermal gap."""
    rows = state_filter_pipeline(small_spec, -2.0, [1, 2], backend="dense")
    thermal = thermal_reference(small_spec, -2.0).value
    assert [row.D0 for row in rows] == [1, 2]
    for row in rows:
        assert row.delta == pytest.approx(row.sigma_D / 4.0)
        assert row.alpha == pytest.approx(3.0 * row.sigma_D)
        assert row.thermal_ref == pytest.approx(thermal)
        assert row.abs_gap == pytest.approx(abs(row.value - thermal))
        assert -1.0 <= row.value <= 1.0
        assert row.truncation_error == 0.0


def test_convergence_scan(small_spec, six_site_spec):
    """One scaling point per size and a rank correlation in [-1, 1]."""
    points, correlation = convergence_scan([small_spec, six_site_spec], -0.3, 2)
    assert [p.N for p in points] == [4, 6]
    assert all(p.scale == pytest.approx(1.0 / (p.N**2 * p.delta)) for p in points)
    assert -1.0 <= correlation <= 1.0
    single, nan = convergence_scan([IsingSpec(N=4)], -0.3, 2)
    assert len(single) == 1
    assert math.isnan(nan)
