"""Exact-diagonalisation ground truth for filters, ensembles and thermal values."""

import os
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from scipy.stats import norm

from ..models.lattice import sparse_hamiltonian, sparse_observable
from ..models.spectrum import SpectrumData, dumps_spectrum, loads_spectrum
from ..models.tensor_train import TensorTrain
from ..utils.constants import DEFAULT_WINDOW, DENOMINATOR_FLOOR, ED_MAX_SITES
from ..utils.errors import (
    EmptyWindow,
    HashMismatch,
    MissingOverlaps,
    StructurallyInvalid,
    SizeTooLarge,
    VanishingDenominator,
)
from ..utils.log import get_logger

logger = get_logger(__name__)

SPECTRUM_MATCH_TOLERANCE = 1e-9


class FilterValues(NamedTuple):
    trace_ratio: float
    dos: float
    state_filter_value: float = None
    ldos: float = None


@lru_cache(maxsize=4)
def dense_eigensystem(spec):
    """Eigenvalues (ascending) and eigenvectors (columns) of H; read-only arrays."""
    if spec.N > ED_MAX_SITES:
        raise SizeTooLarge(f"exact diagonalisation limited to N <= {ED_MAX_SITES}, got {spec.N}")
    hamiltonian = sparse_hamiltonian(spec).toarray()
    eigenvalues, eigenvectors = scipy.linalg.eigh(hamiltonian)
    eigenvalues.setflags(write=False)
    eigenvectors.setflags(write=False)
    logger.debug("diagonalised N=%d (%d levels)", spec.N, eigenvalues.size)
    return eigenvalues, eigenvectors


def _state_vector(state, num_sites):
    if isinstance(state, TensorTrain):
        vector = state.to_dense()
    else:
        vector = np.asarray(state, dtype=complex).reshape(-1)
    if vector.size != 2**num_sites:
        raise StructurallyInvalid(f"state of size {vector.size} does not match N={num_sites}")
    return vector / np.linalg.norm(vector)


def _read_spectrum(path, observable):
    with open(path, "rb") as handle:
        return loads_spectrum(handle.read(), name=path, observable=observable)


def ed_spectrum(spec, observable="m_z", state=None, cache_dir=None, vectors=True):
    """Full dense spectrum with O_kk and, for a given state, |<E_k|state>|^2.

    A cached FESD1 file answers eigenvalue-only requests without diagonalising.
    When eigenvectors are needed the cached eigenvalues are checked against the
    fresh ones.

    Args:
        spec (IsingSpec): Chain (N <= ED_MAX_SITES).
        observable (str): Registered observable name.
        state (TensorTrain | ndarray, optional): State whose overlaps are wanted.
        cache_dir (str, optional): Directory for FESD1 files (stateless spectra only).
        vectors (bool): Attach eigenvectors and the observable matrix.

    Returns:
        SpectrumData: With eigenvectors and observable matrix attached when requested.

    Raises:
        HashMismatch: The cached eigenvalues disagree with the Hamiltonian.
    """
    if spec.N > ED_MAX_SITES:
        raise SizeTooLarge(f"exact diagonalisation limited to N <= {ED_MAX_SITES}, got {spec.N}")
    path = None
    if cache_dir is not None and state is None:
        path = os.path.join(cache_dir, f"spectrum_{spec.spec_hash()}_{observable}.fesd")
    cached = None
    if path is not None and os.path.exists(path):
        cached = _read_spectrum(path, observable)
        logger.info("spectrum cache hit: %s", path)
        if not vectors:
            return cached
    eigenvalues, eigenvectors = dense_eigensystem(spec)
    obs_matrix = sparse_observable(spec, observable)
    if cached is not None:
        if cached.size != eigenvalues.size or np.max(np.abs(cached.eigenvalues - eigenvalues)) > (
            SPECTRUM_MATCH_TOLERANCE * max(1.0, np.max(np.abs(eigenvalues)))
        ):
            raise HashMismatch(f"cached spectrum {path} does not match the Hamiltonian", path=path)
        obs_diag = cached.obs_diag
    else:
        obs_diag = np.real(np.einsum("ik,ik->k", eigenvectors.conj(), obs_matrix @ eigenvectors))
    overlaps = coefficients = None
    if state is not None:
        coefficients = eigenvectors.conj().T @ _state_vector(state, spec.N)
        overlaps = np.abs(coefficients) ** 2
        overlaps = overlaps / overlaps.sum()
    sd = SpectrumData(
        eigenvalues=eigenvalues,
        obs_diag=obs_diag,
        overlaps=overlaps,
        observable=observable,
        eigenvectors=eigenvectors if vectors else None,
        coefficients=coefficients,
        observable_matrix=obs_matrix if vectors else None,
    )
    if path is not None and cached is None:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(dumps_spectrum(sd))
    return sd


def with_state(sd, state, num_sites):
    """Same spectrum with overlaps of another state (needs eigenvectors)."""
    if sd.eigenvectors is None:
        raise MissingOverlaps("spectrum was loaded without eigenvectors")
    coefficients = sd.eigenvectors.conj().T @ _state_vector(state, num_sites)
    overlaps = np.abs(coefficients) ** 2
    return SpectrumData(
        eigenvalues=sd.eigenvalues,
        obs_diag=sd.obs_diag,
        overlaps=overlaps / overlaps.sum(),
        observable=sd.observable,
        eigenvectors=sd.eigenvectors,
        coefficients=coefficients,
        observable_matrix=sd.observable_matrix,
    )


def filter_kernel(sd, E, delta, kind="gaussian", fp=None):
    """Filter value w_k at every eigenvalue: Gaussian or truncated cosine series."""
    if kind == "gaussian":
        return np.exp(-((sd.eigenvalues - E) ** 2) / (2.0 * delta**2))
    if kind == "cosine":
        if fp is None:
            raise StructurallyInvalid("cosine kernel needs filter parameters")
        return fp.with_energy(E).weight(sd.eigenvalues)
    raise StructurallyInvalid(f"unknown filter kind {kind!r}")


def ed_filter_values(sd, E, delta, kind="gaussian", fp=None):
    """Exact filter-ensemble ratio, broadened DOS and (with overlaps) state-filter values.

    The state-filter value is <psi|P O P|psi> / <psi|P^2|psi>, evaluated with
    the dense filtered vector so off-diagonal elements of O are included.
    """
    weights = filter_kernel(sd, E, delta, kind, fp)
    norm_factor = 1.0 / (np.sqrt(2.0 * np.pi) * delta)
    denominator = float(np.sum(weights))
    if not denominator > 0.0 or not np.isfinite(denominator):
        raise VanishingDenominator(f"no spectral weight near E={E} (sum of weights {denominator:.3e})")
    trace_ratio = float(np.dot(weights, sd.obs_diag) / denominator)
    dos = norm_factor * denominator / sd.size
    if not sd.has_overlaps:
        return FilterValues(trace_ratio, dos)

    ldos = norm_factor * float(np.dot(sd.overlaps, weights))
    if sd.coefficients is not None and sd.eigenvectors is not None and sd.observable_matrix is not None:
        filtered = sd.eigenvectors @ (weights * sd.coefficients)
        numerator = np.vdot(filtered, sd.observable_matrix @ filtered).real
        norm_sq = np.vdot(filtered, filtered).real
    else:
        # diagonal part only
        numerator = float(np.dot(sd.overlaps * weights**2, sd.obs_diag))
        norm_sq = float(np.dot(sd.overlaps, weights**2))
    if norm_sq <= DENOMINATOR_FLOOR * np.sum(sd.overlaps):
        raise VanishingDenominator(f"state has no weight in the filter window at E={E}")
    return FilterValues(trace_ratio, dos, float(numerator / norm_sq), ldos)


def ed_microcanonical(sd, E, window=DEFAULT_WINDOW):
    """Unweighted mean of O_kk over |E_k - E| <= window / 2."""
    mask = np.abs(sd.eigenvalues - E) <= window / 2.0
    if not np.any(mask):
        raise EmptyWindow(f"no level within {window / 2} of E={E}")
    return float(np.mean(sd.obs_diag[mask]))


def ed_diagonal_ensemble(sd):
    """sum_k |c_k|^2 O_kk."""
    if not sd.has_overlaps:
        raise MissingOverlaps("diagonal ensemble needs state overlaps")
    return float(np.dot(sd.overlaps, sd.obs_diag))


def ed_time_average(sd, duration):
    """Exact average of <psi(t)|O|psi(t)> over t in [0, duration]."""
    if sd.coefficients is None or sd.eigenvectors is None or sd.observable_matrix is None:
        raise MissingOverlaps("time average needs state coefficients and eigenvectors")
    if duration <= 0:
        vector = sd.eigenvectors @ sd.coefficients
        return float(np.real(np.vdot(vector, sd.observable_matrix @ vector)))
    obs_eigen = sd.eigenvectors.conj().T @ (sd.observable_matrix @ sd.eigenvectors)
    omega = sd.eigenvalues[:, None] - sd.eigenvalues[None, :]
    phase = omega * duration
    small = np.abs(phase) < 1e-12
    safe = np.where(small, 1.0, phase)
    average = np.where(small, 1.0, (np.exp(1j * safe) - 1.0) / (1j * safe))
    c = sd.coefficients
    return float(np.real(np.sum(np.conj(c)[:, None] * c[None, :] * obs_eigen * average)))


def ed_gibbs(sd, beta):
    """Boltzmann averages (energy, O) at inverse temperature beta (any sign)."""
    log_weights = -beta * sd.eigenvalues
    weights = np.exp(log_weights - logsumexp(log_weights))
    return float(np.dot(weights, sd.eigenvalues)), float(np.dot(weights, sd.obs_diag))


def synthetic_gaussian_spectrum(num_levels, width, center=0.0):
    """Deterministic levels at the Gaussian quantiles (k + 1/2) / n."""
    quantiles = (np.arange(num_levels) + 0.5) / num_levels
    levels = center + width * norm.ppf(quantiles)
    return SpectrumData(eigenvalues=levels, obs_diag=np.zeros(num_levels), observable="none")
