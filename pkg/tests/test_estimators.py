"""Tests for direct-trace estimators and thermal references."""

import math

import numpy as np
import pytest

from src.controllers.ed_oracle import ed_filter_values, ed_gibbs, ed_spectrum, synthetic_gaussian_spectrum
from src.controllers.estimators import (
    GaussianDosModel,
    direct_trace_ratio,
    direct_trace_scan,
    dos_trace,
    exclusion_radius,
    filter_ensemble_moments,
    gaussian_ensemble_predictions,
    gaussian_ldos_weight,
    thermal_reference,
)
from src.controllers.evolution import DenseBackend, EvolutionConfig, make_backend
from src.models.filter_params import full_spectrum_alpha, make_filter_params
from src.models.lattice import pauli_moments
from src.utils.errors import NonPositiveParameter, OutOfThermalRange, StructurallyInvalid


def test_gaussian_dos_model(benchmark_spec):
    """sigma0^2 N is the second moment and gamma = 1 + delta^2 / (N sigma0^2)."""
    model = GaussianDosModel.from_spec(benchmark_spec)
    assert model.N * model.sigma0**2 == pytest.approx(pauli_moments(benchmark_spec)[1])
    assert model.gamma(0.0) == 1.0
    assert model.gamma(math.sqrt(8) * model.sigma0) == pytest.approx(2.0)
    assert model.dos_shape(0.0, 1.0) == 1.0
    with pytest.raises(NonPositiveParameter):
        GaussianDosModel(sigma0=0.0, N=4)


def test_ensemble_predictions():
    """Filtered ensembles are pulled toward zero by gamma and narrowed by sqrt(gamma)."""
    model = GaussianDosModel(sigma0=1.0, N=4)
    shifted, width, state_width = gaussian_ensemble_predictions(model, 2.0, 2.0)
    assert shifted == pytest.approx(1.0)
    assert width == pytest.approx(math.sqrt(2.0))
    assert state_width is None
    _, _, state_width = gaussian_ensemble_predictions(model, 2.0, 2.0, sigma_state=1.0)
    assert state_width == pytest.approx(2.0 / math.sqrt(3.0))


def test_exclusion_radius_hits_threshold():
    """At the exclusion radius the LDOS weight equals epsilon."""
    radius = exclusion_radius(0.5, 16, 1.0, 1e-6)
    assert gaussian_ldos_weight(radius, 0.0, 0.5, 16, 1.0) == pytest.approx(1e-6, rel=1e-9)
    assert gaussian_ldos_weight(0.0, 0.0, 0.5, 16, 1.0) == pytest.approx(math.sqrt(1.0 / 5.0))
    assert exclusion_radius(0.5, 16, 1.0, 1.0) == 0.0


def test_filter_ensemble_moments_on_gaussian_levels():
    """A Gaussian spectrum of width W filtered at E0 has mean E0 W^2 / (W^2 + delta^2)."""
    sd = synthetic_gaussian_spectrum(20000, 3.0)
    mean, width = filter_ensemble_moments(sd, 2.0, 1.5)
    gamma = 1.0 + 1.5**2 / 9.0
    assert mean == pytest.approx(2.0 / gamma, rel=1e-2)
    assert width == pytest.approx(1.5 / math.sqrt(gamma), rel=1e-2)


def test_dense_trace_ratio_matches_exact(six_site_spec):
    """Dense traces reproduce the exact cosine-filter ensemble."""
    fp = make_filter_params(0.0, 1.0, full_spectrum_alpha(six_site_spec))
    dense = DenseBackend(six_site_spec, fp)
    sd = ed_spectrum(six_site_spec, "m_z")
    for energy in (-3.0, 0.0, 2.0):
        exact = ed_filter_values(sd, energy, 1.0, kind="cosine", fp=fp)
        value, dos_weight = direct_trace_ratio(dense, fp.with_energy(energy), "m_z")
        assert value == pytest.approx(exact.trace_ratio, abs=1e-8)
        assert dos_weight * fp.normalization == pytest.approx(exact.dos, rel=1e-8)
        assert dos_trace(dense, fp.with_energy(energy)) == pytest.approx(exact.dos, rel=1e-8)


def test_operator_traces_match_exact(six_site_spec):
    """Stored Trotter operators give the trace ratio up to Trotter error."""
    fp = make_filter_params(0.0, 1.0, 3.0)
    family = make_backend(six_site_spec, fp, EvolutionConfig(), "mpo-cache")
    sd = ed_spectrum(six_site_spec, "m_z")
    for energy in (-1.0, 0.0, 1.0):
        exact = ed_filter_values(sd, energy, 1.0, kind="cosine", fp=fp)
        value, _ = direct_trace_ratio(family, fp.with_energy(energy), "m_z")
        assert value == pytest.approx(exact.trace_ratio, abs=5e-3)


def test_on_demand_family_has_no_traces(six_site_spec):
    """Traces need the stored operators."""
    fp = make_filter_params(0.0, 1.0, 3.0)
    family = make_backend(six_site_spec, fp, EvolutionConfig(), "mps-on-demand")
    with pytest.raises(StructurallyInvalid):
        direct_trace_ratio(family, fp, "m_z")


def test_scan_marks_empty_windows(small_spec):
    """Energies far outside the spectrum come back as NaN instead of raising."""
    fp = make_filter_params(0.0, 0.5, 20.0, x=10.0)
    dense = DenseBackend(small_spec, fp)
    points = direct_trace_scan(dense, fp, "m_z", [0.0, 30.0])
    assert [point.E for point in points] == [0.0, 30.0]
    assert np.isfinite(points[0].value)
    assert math.isnan(points[1].value)
    assert math.isnan(points[1].dos_weight)


def test_thermal_reference_at_infinite_temperature(six_site_spec):
    """E = tr H / 2^N is reached at beta = 0, where m_z averages to zero."""
    point = thermal_reference(six_site_spec, 0.0)
    assert point.beta == 0.0
    assert point.value == pytest.approx(0.0, abs=1e-12)


def test_thermal_reference_both_signs(six_site_spec):
    """Energies below zero need beta > 0, above zero beta < 0."""
    sd = ed_spectrum(six_site_spec, "m_z")
    cold = thermal_reference(six_site_spec, -2.0)
    assert cold.beta > 0
    assert cold.energy == pytest.approx(-2.0, abs=1e-6)
    assert cold.value == pytest.approx(ed_gibbs(sd, cold.beta)[1])
    hot = thermal_reference(six_site_spec, 2.0)
    assert hot.beta < 0
    assert hot.energy == pytest.approx(2.0, abs=1e-6)


def test_thermal_reference_out_of_range(six_site_spec):
    """Targets outside the spectrum have no temperature."""
    with pytest.raises(OutOfThermalRange):
        thermal_reference(six_site_spec, -100.0)
    with pytest.raises(StructurallyInvalid):
        thermal_reference(six_site_spec, -1.0, method="quantum")


def test_gibbs_mpo_reference_matches_exact(small_spec):
    """The imaginary-time MPO ladder agrees with the dense thermal value."""
    exact = thermal_reference(small_spec, -1.5, method="ed")
    approx = thermal_reference(small_spec, -1.5, method="gibbs-mpo", dbeta=0.005)
    assert approx.energy == pytest.approx(-1.5, abs=1e-6)
    assert approx.beta == pytest.approx(exact.beta, abs=1e-3)
    assert approx.value == pytest.approx(exact.value, abs=1e-3)
