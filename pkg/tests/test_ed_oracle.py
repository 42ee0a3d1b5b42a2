"""Tests for the exact-diagonalisation oracle."""

import math
import os

import numpy as np
import pytest

from src.controllers.ed_oracle import (
    dense_eigensystem,
    ed_diagonal_ensemble,
    ed_filter_values,
    ed_gibbs,
    ed_microcanonical,
    ed_spectrum,
    ed_time_average,
    filter_kernel,
    synthetic_gaussian_spectrum,
    with_state,
)
from src.models.filter_params import make_filter_params
from src.models.lattice import IsingSpec, sparse_observable
from src.models.spectrum import SpectrumData, dumps_spectrum, loads_spectrum
from src.models.tensor_train import TensorTrain
from src.utils.errors import (
    CorruptCache,
    EmptyWindow,
    HashMismatch,
    MissingOverlaps,
    SizeTooLarge,
    StructurallyInvalid,
    VanishingDenominator,
)


def test_single_spin_levels():
    """N=1: E = +-sqrt(g^2 + h^2)."""
    eigenvalues, _ = dense_eigensystem(IsingSpec(N=1))
    assert eigenvalues == pytest.approx([-1.16297, 1.16297], abs=1e-5)


def test_size_limit():
    """Dense diagonalisation refuses large chains."""
    with pytest.raises(SizeTooLarge):
        dense_eigensystem(IsingSpec(N=30))


def test_infinite_temperature_gibbs():
    """beta = 0 averages over all levels; for a single spin both vanish."""
    energy, value = ed_gibbs(ed_spectrum(IsingSpec(N=1), "m_z"), 0.0)
    assert energy == pytest.approx(0.0, abs=1e-12)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_low_temperature_gibbs_reaches_ground_state(small_spec):
    """Large beta concentrates on the ground level, negative beta on the top one."""
    sd = ed_spectrum(small_spec, "m_z")
    energy, value = ed_gibbs(sd, 2000.0)
    assert energy == pytest.approx(sd.eigenvalues[0], abs=1e-8)
    assert value == pytest.approx(sd.obs_diag[0], abs=1e-8)
    assert ed_gibbs(sd, -2000.0)[0] == pytest.approx(sd.eigenvalues[-1], abs=1e-8)


def test_gaussian_filter_values(six_site_spec):
    """Trace ratio is the weighted O_kk average and the DOS integrates to one."""
    sd = ed_spectrum(six_site_spec, "m_z")
    weights = np.exp(-((sd.eigenvalues + 1.0) ** 2) / 2.0)
    values = ed_filter_values(sd, -1.0, 1.0)
    assert values.trace_ratio == pytest.approx(np.dot(weights, sd.obs_diag) / weights.sum())
    assert values.state_filter_value is None
    energies = np.linspace(-20.0, 20.0, 4001)
    total = sum(ed_filter_values(sd, e, 1.0).dos for e in energies) * (energies[1] - energies[0])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_cosine_kernel_needs_params(six_site_spec):
    """The cosine kernel is the truncated series at each level."""
    sd = ed_spectrum(six_site_spec, "m_z")
    fp = make_filter_params(0.0, 1.0, 10.0)
    kernel = filter_kernel(sd, 0.5, 1.0, kind="cosine", fp=fp)
    assert np.allclose(kernel, fp.with_energy(0.5).weight(sd.eigenvalues))
    with pytest.raises(StructurallyInvalid):
        filter_kernel(sd, 0.5, 1.0, kind="cosine")
    with pytest.raises(StructurallyInvalid):
        filter_kernel(sd, 0.5, 1.0, kind="lorentzian")


def test_state_filter_of_eigenstate(six_site_spec):
    """Filtering an eigenstate returns its own O_kk."""
    sd = ed_spectrum(six_site_spec, "m_z")
    k = 10
    state = with_state(sd, sd.eigenvectors[:, k], 6)
    values = ed_filter_values(state, sd.eigenvalues[k], 0.5)
    assert values.state_filter_value == pytest.approx(sd.obs_diag[k], abs=1e-10)
    assert ed_diagonal_ensemble(state) == pytest.approx(sd.obs_diag[k], abs=1e-10)


def test_state_overlaps_from_tensor_train(six_site_spec):
    """Overlaps of an MPS state are normalised and reproduce its energy."""
    train = TensorTrain.from_bits((0, 1, 0, 1, 0, 1))
    sd = ed_spectrum(six_site_spec, "m_z", state=train)
    vector = train.to_dense()
    assert sd.overlaps.sum() == pytest.approx(1.0)
    h = sd.eigenvectors @ np.diag(sd.eigenvalues) @ sd.eigenvectors.conj().T
    assert np.dot(sd.overlaps, sd.eigenvalues) == pytest.approx(np.vdot(vector, h @ vector).real)


def test_empty_filter_window():
    """A Gaussian far from every level has no weight."""
    sd = synthetic_gaussian_spectrum(10, 1.0)
    with pytest.raises(VanishingDenominator):
        ed_filter_values(sd, 1e4, 0.1)


def test_microcanonical_window(six_site_spec):
    """Plain mean of O_kk inside the window; empty windows raise."""
    sd = ed_spectrum(six_site_spec, "m_z")
    mask = np.abs(sd.eigenvalues - 0.5) <= 1.0
    assert ed_microcanonical(sd, 0.5, window=2.0) == pytest.approx(np.mean(sd.obs_diag[mask]))
    with pytest.raises(EmptyWindow):
        ed_microcanonical(sd, 100.0)


def test_time_average_limits(six_site_spec):
    """Zero duration gives the initial value, long times approach the diagonal ensemble."""
    train = TensorTrain.from_bits((0,) * 6)
    sd = ed_spectrum(six_site_spec, "m_z", state=train)
    assert ed_time_average(sd, 0.0) == pytest.approx(1.0)
    assert ed_time_average(sd, 1e7) == pytest.approx(ed_diagonal_ensemble(sd), abs=1e-3)
    with pytest.raises(MissingOverlaps):
        ed_time_average(ed_spectrum(six_site_spec, "m_z"), 1.0)


def test_observable_diagonal(small_spec):
    """O_kk are the diagonal of O in the eigenbasis."""
    sd = ed_spectrum(small_spec, "m_x")
    obs = sparse_observable(small_spec, "m_x").toarray()
    rotated = sd.eigenvectors.conj().T @ obs @ sd.eigenvectors
    assert np.allclose(sd.obs_diag, np.diag(rotated).real)


def test_spectrum_cache_file(small_spec, cache_dir):
    """The second call reads the stored spectrum file."""
    first = ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)
    second = ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)
    assert np.allclose(first.obs_diag, second.obs_diag)


def test_spectrum_cache_hit_skips_diagonalisation(small_spec, cache_dir, monkeypatch):
    """An eigenvalue-only request is answered from the file without calling eigh."""
    first = ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)
    calls = []

    def counting(spec):
        calls.append(spec)
        return dense_eigensystem(spec)

    monkeypatch.setattr("src.controllers.ed_oracle.dense_eigensystem", counting)
    cached = ed_spectrum(small_spec, "m_z", cache_dir=cache_dir, vectors=False)
    assert calls == []
    assert cached.eigenvectors is None
    assert np.allclose(cached.eigenvalues, first.eigenvalues)
    with_vectors = ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)
    assert len(calls) == 1
    assert with_vectors.eigenvectors is not None


def test_spectrum_cache_mismatch(small_spec, cache_dir):
    """A cached file whose eigenvalues disagree with H is rejected when vectors are rebuilt."""
    ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)
    (path,) = [os.path.join(cache_dir, name) for name in os.listdir(cache_dir)]
    with open(path, "rb") as handle:
        stored = loads_spectrum(handle.read())
    with open(path, "wb") as handle:
        handle.write(dumps_spectrum(SpectrumData(stored.eigenvalues + 1.0, stored.obs_diag)))
    with pytest.raises(HashMismatch, match="does not match"):
        ed_spectrum(small_spec, "m_z", cache_dir=cache_dir)


def test_spectrum_binary_format():
    """Spectra round-trip and damaged files are reported."""
    sd = SpectrumData(np.array([-1.0, 0.5]), np.array([0.2, -0.2]), np.array([0.25, 0.75]))
    loaded = loads_spectrum(dumps_spectrum(sd))
    assert np.array_equal(loaded.eigenvalues, sd.eigenvalues)
    assert np.array_equal(loaded.overlaps, sd.overlaps)
    with pytest.raises(CorruptCache, match="spec.fesd"):
        loads_spectrum(dumps_spectrum(sd)[:-8], name="spec.fesd")


def test_spectrum_validation():
    """Eigenvalues must ascend and overlaps must sum to one."""
    with pytest.raises(StructurallyInvalid):
        SpectrumData(np.array([1.0, 0.0]), np.zeros(2))
    with pytest.raises(StructurallyInvalid):
        SpectrumData(np.array([0.0, 1.0]), np.zeros(2), np.array([0.5, 0.6]))


def test_synthetic_spectrum_width():
    """Quantile levels have the requested width."""
    sd = synthetic_gaussian_spectrum(50000, 2.0, center=1.0)
    assert np.mean(sd.eigenvalues) == pytest.approx(1.0, abs=1e-9)
    assert math.sqrt(np.var(sd.eigenvalues)) == pytest.approx(2.0, rel=1e-3)


def test_narrow_filter_tracks_microcanonical_mean():
    """At N=12 the delta=0.5 ensemble is closer to the window mean than delta=4 at E/N = 0, 0.3, 0.6."""
    spec = IsingSpec(N=12)
    sd = ed_spectrum(spec, "m_z", vectors=False)
    for density in (0.0, 0.3, 0.6):
        energy = density * spec.N
        micro = ed_microcanonical(sd, energy, 0.5)
        narrow = abs(ed_filter_values(sd, energy, 0.5).trace_ratio - micro)
        wide = abs(ed_filter_values(sd, energy, 4.0).trace_ratio - micro)
        assert narrow < wide
