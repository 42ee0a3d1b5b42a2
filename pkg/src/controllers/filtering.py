"""Combine amplitude series into LDOS values and filtered expectation values."""

import math
from typing import NamedTuple

import numpy as np

from ..models.filter_params import AmplitudeSeries
from ..utils.constants import DENOMINATOR_FLOOR, IMAG_RESIDUE_CEILING
from ..utils.errors import IndexMismatch, VanishingDenominator
from ..utils.log import get_logger

logger = get_logger(__name__)


class Amplitudes(NamedTuple):
    survival: AmplitudeSeries
    observable: AmplitudeSeries = None
    gram: np.ndarray = None
    weighted: np.ndarray = None
    truncation_error: float = 0.0


class Combined(NamedTuple):
    value: complex
    scale: float

    @property
    def residue(self):
        """Imaginary part relative to the sum of term magnitudes."""
        return abs(self.value.imag) / self.scale if self.scale > 0 else 0.0


def combine_series(fp, series):
    if series.values.size != 2 * fp.R_eff + 1:
        raise IndexMismatch(
            f"series has {series.values.size} values, filter needs {2 * fp.R_eff + 1}"
        )
    terms = fp.coeffs * np.exp(1j * fp.E * series.times) * series.values
    return Combined(complex(np.sum(terms)), float(np.sum(np.abs(terms))))


def series_combine(fp, series):
    """sum_m c_m exp(i E t_m) z_m, evaluated at the times the series carries."""
    combined = combine_series(fp, series)
    if series.symmetry_tag == "conjugate-symmetric" and combined.residue > 1e-10:
        logger.debug("imaginary residue %.2e in a conjugate-symmetric series", combined.residue)
    return combined.value


def filter_vector(fp):
    """u_m = c_m exp(i E t_m), so that F|psi> = sum_m u_m |psi(t_m)>."""
    return fp.coeffs * np.exp(1j * fp.E * fp.times)


def check_filter_range(spec, fp):
    """Warn when |H - E| may exceed alpha pi / 2, where the cosine filter stops being valid."""
    bound = abs(spec.J) * (spec.N - 1) + math.hypot(spec.g, spec.h) * spec.N
    reach = abs(fp.E) + bound
    ok = reach <= fp.alpha * math.pi / 2.0
    if not ok:
        logger.warning(
            "filter range alpha*pi/2=%.4g below |E|+||H|| bound %.4g; aliased weight possible",
            fp.alpha * math.pi / 2.0, reach,
        )
    return ok


def state_amplitudes(state, fp, observable, backend, double=False):
    """Amplitude series of ``state`` on the backend's time grid.

    Args:
        state: State in the backend's representation (TensorTrain or dense vector).
        fp (FilterParams): Filter; only its grid size matters here.
        observable: Observable name or operator, or None.
        backend: EvolutionFamily or DenseBackend.
        double (bool): Also return the (2R+1)^2 Gram and observable matrices.

    Returns:
        Amplitudes: survival series a(t_m), observable series <state|O U(t_m)|state>,
        optional grid matrices and the truncation error involved.
    """
    backend.align(fp)
    survival = backend.survival_series(state)
    error = survival.truncation_error
    op = backend.prepare_observable(observable)
    observable_series = None
    if op is not None:
        values, obs_error = backend.observable_amplitudes(state, op)
        observable_series = AmplitudeSeries(values, backend.times, "general", obs_error)
        error = max(error, obs_error)
    gram = weighted = None
    if double:
        gram, weighted, grid_error = backend.grid(state, op)
        error = max(error, grid_error)
    return Amplitudes(survival, observable_series, gram, weighted, error)


def ldos_of_state(state, fp, backend, with_residue=False):
    """Filtered LDOS D(E) = Re[series_combine] / (sqrt(2 pi) delta)."""
    fp = backend.align(fp)
    combined = combine_series(fp, backend.survival_series(state))
    if combined.residue > IMAG_RESIDUE_CEILING:
        logger.info("LDOS imaginary residue %.2e at E=%.6g", combined.residue, fp.E)
    value = fp.normalization * combined.value.real
    if with_residue:
        return value, combined.residue
    return value


def filtered_observable_of_state(state, fp, observable, backend):
    """<psi|F O F|psi> / <psi|F F|psi> by the double sum over the time grid.

    Raises:
        VanishingDenominator: The filter window holds no weight of the state.
    """
    fp = backend.align(fp)
    op = backend.prepare_observable(observable)
    gram, weighted, _ = backend.grid(state, op)
    u = filter_vector(fp)
    numerator = np.vdot(u, weighted @ u)
    denominator = np.vdot(u, gram @ u)
    floor = DENOMINATOR_FLOOR * float(np.sum(fp.coeffs**2))
    if abs(denominator) <= floor:
        raise VanishingDenominator(
            f"filtered norm {abs(denominator):.3e} below floor {floor:.1e} at E={fp.E:.6g}"
        )
    ratio = numerator / denominator
    residue = abs(ratio.imag) / max(abs(ratio), 1e-300)
    if residue > IMAG_RESIDUE_CEILING:
        logger.info("filtered-state imaginary residue %.2e at E=%.6g", residue, fp.E)
    return float(ratio.real)


def series_rows(fp, series):
    """CSV rows (m, t_m, c_m, Re z, Im z) for debugging dumps."""
    return [
        {"m": int(m), "t_m": float(t), "c_m": float(c), "re_z": float(z.real), "im_z": float(z.imag)}
        for m, t, c, z in zip(fp.ms, series.times, fp.coeffs, series.values)
    ]
