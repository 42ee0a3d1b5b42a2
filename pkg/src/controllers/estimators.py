"""Filter-ensemble quantities without sampling: trace ratios, DOS and thermal references."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.optimize

from ..models.filter_params import AmplitudeSeries
from ..models.lattice import build_hamiltonian_mpo, build_observable_mpo, pauli_moments
from ..models.tensor_train import TruncationPolicy
from ..utils.constants import DEFAULT_DBETA, DOS_WEIGHT_FLOOR, NEGATIVE_WEIGHT_TOLERANCE
from ..utils.errors import NonPositiveParameter, OutOfThermalRange, StructurallyInvalid, VanishingDenominator
from ..utils.log import get_logger
from .ed_oracle import ed_gibbs, ed_spectrum
from .evolution import build_gibbs_mpo, gibbs_expectation, gibbs_step
from .filtering import combine_series, series_rows

logger = get_logger(__name__)

BETA_CAP = 1e6


@dataclass(frozen=True)
class GaussianDosModel:
    """Gaussian DOS of width sqrt(N) sigma0 and the filter-ensemble shift it predicts."""

    sigma0: float
    N: int
    d: int = 2

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise NonPositiveParameter(f"sigma0 must be positive, got {self.sigma0}")
        if self.N < 1:
            raise NonPositiveParameter(f"N must be positive, got {self.N}")

    @classmethod
    def from_spec(cls, spec):
        """sigma0^2 = tr(H^2) / (2^N N)."""
        return cls(sigma0=math.sqrt(pauli_moments(spec)[1] / spec.N), N=spec.N)

    def gamma(self, delta):
        return 1.0 + delta**2 / (self.N * self.sigma0**2)

    def dos_shape(self, E, delta):
        """Relative DOS weight exp(-E^2 / (2 gamma N sigma0^2)) seen through the filter."""
        return math.exp(-E**2 / (2.0 * self.gamma(delta) * self.N * self.sigma0**2))


def gaussian_ensemble_predictions(model, E0, delta, sigma_state=None):
    """(E0 / gamma, delta / sqrt(gamma), filtered-state width or None)."""
    gamma = model.gamma(delta)
    state_width = None
    if sigma_state is not None:
        state_width = delta / math.sqrt(2.0 + delta**2 / (model.N * sigma_state**2))
    return E0 / gamma, delta / math.sqrt(gamma), state_width


def gaussian_ldos_weight(E, E_phi, sigma_phi, N, delta):
    """Gaussian LDOS of width sqrt(N) sigma_phi seen through a Gaussian filter of width delta."""
    spread = delta**2 + N * sigma_phi**2
    return math.sqrt(delta**2 / spread) * math.exp(-((E - E_phi) ** 2) / (2.0 * spread))


def exclusion_radius(sigma_phi, N, delta, epsilon):
    """Distance |E - E_phi| beyond which gaussian_ldos_weight drops below epsilon."""
    spread = delta**2 + N * sigma_phi**2
    log_ratio = math.log(delta / (epsilon * math.sqrt(spread)))
    return math.sqrt(2.0 * spread * max(log_ratio, 0.0))


def filter_ensemble_moments(sd, E0, delta):
    """Mean and width of the Gaussian-filtered ensemble over a spectrum."""
    weights = np.exp(-((sd.eigenvalues - E0) ** 2) / (2.0 * delta**2))
    total = weights.sum()
    if not total > 0:
        raise VanishingDenominator(f"no levels near E0={E0}")
    mean = float(np.dot(weights, sd.eigenvalues) / total)
    width = float(np.sqrt(np.dot(weights, (sd.eigenvalues - mean) ** 2) / total))
    return mean, width


class TracePoint(NamedTuple):
    E: float
    value: float
    dos_weight: float
    residue: float
    truncation_error: float


class _TraceSeries:
    """tr U(t_m) and tr(O U(t_m)) on the full grid, reusable across energies."""

    def __init__(self, family, observable):
        plain, weighted = family.traces(observable)
        self.plain = AmplitudeSeries.from_forward(plain, family.forward_times, family.truncation_error)
        self.weighted = None
        if weighted is not None:
            self.weighted = AmplitudeSeries.from_forward(weighted, family.forward_times, family.truncation_error)
        self.dim = 2.0**family.spec.N
        self.error = family.truncation_error

    def point(self, fp, floor_reference=None):
        denominator = combine_series(fp, self.plain)
        dos_weight = denominator.value.real / self.dim
        reference = floor_reference
        if reference is None:
            reference = combine_series(fp.with_energy(0.0), self.plain).value.real / self.dim
        if dos_weight <= DOS_WEIGHT_FLOOR * abs(reference):
            raise VanishingDenominator(
                f"DOS weight {dos_weight:.3e} below {DOS_WEIGHT_FLOOR:.0e} of the E=0 value at E={fp.E:.6g}",
                E=fp.E,
            )
        value = float("nan")
        residue = denominator.residue
        if self.weighted is not None:
            numerator = combine_series(fp, self.weighted)
            value = numerator.value.real / denominator.value.real
            residue = max(residue, numerator.residue)
        return TracePoint(fp.E, value, dos_weight, residue, self.error)


def direct_trace_ratio(family, fp, observable):
    """Re[sum c_m e^{iEt_m} tr(O U_m)] / Re[sum c_m e^{iEt_m} tr(U_m)] and the DOS weight.

    Returns:
        tuple: (value, dos_weight) where dos_weight is the denominator over 2^N.
    """
    fp = family.align(fp)
    point = _TraceSeries(family, observable).point(fp)
    return point.value, point.dos_weight


def direct_trace_scan(family, fp, observable, energies):
    """Trace ratio over many energies, reusing one set of traces.

    Points in the vanishing-DOS regime are reported with a NaN value.
    """
    fp = family.align(fp)
    traces = _TraceSeries(family, observable)
    reference = combine_series(fp.with_energy(0.0), traces.plain).value.real / traces.dim
    points = []
    for energy in energies:
        try:
            points.append(traces.point(fp.with_energy(energy), reference))
        except VanishingDenominator as error:
            logger.warning("%s", error)
            points.append(TracePoint(float(energy), float("nan"), float("nan"), float("nan"), traces.error))
    return points


def trace_series_rows(family, fp, observable):
    """Amplitude series tr U(t_m) and tr(O U(t_m)) as CSV rows, keyed by dump name."""
    fp = family.align(fp)
    traces = _TraceSeries(family, observable)
    dumps = {"series_trace": series_rows(fp, traces.plain)}
    if traces.weighted is not None:
        dumps["series_observable"] = series_rows(fp, traces.weighted)
    return dumps


def dos_trace(family, fp):
    """tr F(E) / (sqrt(2 pi) delta 2^N); negative values beyond tolerance are logged."""
    fp = family.align(fp)
    traces = _TraceSeries(family, None)
    value = combine_series(fp, traces.plain).value.real / traces.dim * fp.normalization
    if value < -(NEGATIVE_WEIGHT_TOLERANCE + fp.tail_mass + traces.error) * fp.normalization:
        logger.warning("negative broadened DOS %.3e at E=%.6g", value, fp.E)
    return value


class ThermalPoint(NamedTuple):
    beta: float
    value: float
    energy: float


def _solve_beta(energy_of_beta, target, start, tolerance):
    """Bisection for E(beta) = target; E is decreasing in beta."""
    at_zero = energy_of_beta(0.0)
    if abs(at_zero - target) <= tolerance:
        return 0.0
    sign = 1.0 if target < at_zero else -1.0
    bound = start
    while (energy_of_beta(sign * bound) - target) * sign > 0:
        bound *= 2.0
        if bound > BETA_CAP:
            raise OutOfThermalRange(f"no temperature reaches E={target}")
    low, high = sorted((0.0, sign * bound))
    return scipy.optimize.bisect(lambda b: energy_of_beta(b) - target, low, high, xtol=1e-14, maxiter=500)


def thermal_reference(spec, E_target, method="ed", observable="m_z", dbeta=DEFAULT_DBETA, policy=None):
    """Inverse temperature with <H>_beta = E_target and the thermal observable there.

    ``method="ed"`` uses the dense spectrum, ``"gibbs-mpo"`` a purified
    exp(-beta H / 2) built on a dbeta ladder and refined inside the
    bracketing step by bisection. Negative beta is returned for E_target
    above the infinite-temperature energy.
    """
    tolerance = 1e-8 * spec.N
    model = GaussianDosModel.from_spec(spec)
    start = 50.0 / model.sigma0
    if method == "ed":
        sd = ed_spectrum(spec, observable)
        if not sd.eigenvalues[0] < E_target < sd.eigenvalues[-1]:
            raise OutOfThermalRange(
                f"E={E_target} outside the open spectrum range ({sd.eigenvalues[0]:.6g}, {sd.eigenvalues[-1]:.6g})"
            )
        beta = _solve_beta(lambda b: ed_gibbs(sd, b)[0], E_target, start, tolerance)
        energy, value = ed_gibbs(sd, beta)
        return ThermalPoint(float(beta), value, energy)
    if method == "gibbs-mpo":
        return _thermal_from_gibbs_mpo(spec, E_target, observable, dbeta, policy or TruncationPolicy())
    raise StructurallyInvalid(f"unknown thermal method {method!r}")


def _thermal_from_gibbs_mpo(spec, E_target, observable, dbeta, policy):
    hamiltonian = build_hamiltonian_mpo(spec)
    obs = build_observable_mpo(spec, observable)
    current = build_gibbs_mpo(spec, 0.0, dbeta, policy)
    energy = gibbs_expectation(current, hamiltonian)
    if abs(energy - E_target) <= 1e-8 * spec.N:
        return ThermalPoint(0.0, gibbs_expectation(current, obs), energy)
    sign = 1.0 if E_target < energy else -1.0
    beta = 0.0
    while (energy - E_target) * sign > 0:
        previous, previous_beta = current, beta
        current = gibbs_step(spec, current, sign * dbeta, policy)
        beta += sign * dbeta
        energy = gibbs_expectation(current, hamiltonian)
        if abs(beta) > BETA_CAP:
            raise OutOfThermalRange(f"no temperature reaches E={E_target}")

    def energy_at(fraction):
        if fraction == 0.0:
            return gibbs_expectation(previous, hamiltonian) - E_target
        trial = gibbs_step(spec, previous, sign * fraction * dbeta, policy)
        return gibbs_expectation(trial, hamiltonian) - E_target

    fraction = scipy.optimize.bisect(energy_at, 0.0, 1.0, xtol=1e-12, maxiter=200)
    final = gibbs_step(spec, previous, sign * fraction * dbeta, policy) if fraction > 0 else previous
    beta = previous_beta + sign * fraction * dbeta
    logger.debug("gibbs-mpo thermal point: beta=%.6g, max bond %d", beta, final.max_bond)
    return ThermalPoint(beta, gibbs_expectation(final, obs), gibbs_expectation(final, hamiltonian))
