"""Cosine-filter recipe and amplitude series."""

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from ..utils.constants import DEFAULT_X
from ..utils.errors import IndexMismatch, NonPositiveParameter, StructurallyInvalid, WidthTooLarge


@dataclass(frozen=True, eq=False)
class FilterParams:
    """Truncated cosine filter F(E) = sum_{|m|<=R} c_m exp(-i (H - E) t_m).

    ``times`` and ``coeffs`` are indexed by m = -R_eff..R_eff. The nominal
    grid is t_m = 2m/alpha; an evolution backend may replace it by the
    step-rounded grid it actually realises (see ``with_times``).
    """

    E: float
    delta: float
    alpha: float
    x: float
    M: int
    R_eff: int
    times: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)

    @property
    def ms(self):
        return np.arange(-self.R_eff, self.R_eff + 1)

    @property
    def tail_mass(self):
        """Coefficient weight dropped by the truncation at R_eff."""
        return max(0.0, 1.0 - float(np.sum(self.coeffs)))

    @property
    def tail_bound(self):
        return 2.0 * math.exp(-self.x**2 / 2.0)

    @property
    def normalization(self):
        """1 / (sqrt(2 pi) delta), the Gaussian-filter density prefactor."""
        return 1.0 / (math.sqrt(2.0 * math.pi) * self.delta)

    def phases(self):
        return np.exp(1j * self.E * self.times)

    def with_energy(self, energy):
        return replace(self, E=float(energy))

    def with_times(self, times):
        times = np.asarray(times, dtype=float)
        if times.shape != self.times.shape:
            raise IndexMismatch(f"time grid of length {times.size}, expected {self.times.size}")
        return replace(self, times=times)

    def weight(self, energies):
        """Truncated-series filter value at the given eigenvalues (real)."""
        energies = np.atleast_1d(np.asarray(energies, dtype=float))
        shifted = (energies[:, None] - self.E) * self.times[None, :]
        values = np.cos(shifted) @ self.coeffs
        return values

    def cosine_power(self, energies):
        """Untruncated cos^M((lambda - E) / alpha)."""
        energies = np.asarray(energies, dtype=float)
        return np.cos((energies - self.E) / self.alpha) ** self.M

    def grid_hash(self):
        """Hash of everything but E: two filters with equal hash share U(t_m)."""
        text = f"alpha={self.alpha!r}|M={self.M}|R={self.R_eff}|times={np.round(self.times, 12).tolist()}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class AmplitudeSeries:
    """Values z_m for m = -R..R together with the times they were evaluated at."""

    values: np.ndarray
    times: np.ndarray
    symmetry_tag: str = "general"
    truncation_error: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        times = np.asarray(self.times, dtype=float)
        if values.ndim != 1 or values.size % 2 != 1 or values.shape != times.shape:
            raise IndexMismatch("amplitude series needs 2R+1 values matching its times")
        if self.symmetry_tag not in ("conjugate-symmetric", "general"):
            raise StructurallyInvalid(f"unknown symmetry tag {self.symmetry_tag!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @property
    def R(self):
        return (self.values.size - 1) // 2

    def at(self, m):
        return self.values[m + self.R]

    @classmethod
    def from_forward(cls, forward, forward_times, truncation_error=0.0):
        """Extend z_0..z_R to negative m by z_{-m} = conj(z_m)."""
        forward = np.asarray(forward, dtype=complex)
        forward_times = np.asarray(forward_times, dtype=float)
        values = np.concatenate([np.conj(forward[:0:-1]), forward])
        times = np.concatenate([-forward_times[:0:-1], forward_times])
        return cls(values, times, "conjugate-symmetric", truncation_error)

    def symmetry_deviation(self):
        return float(np.max(np.abs(self.values - np.conj(self.values[::-1]))))


def _filter_order(delta, alpha):
    ratio = alpha**2 / (2.0 * delta**2)
    return 2 * int(math.floor(ratio * (1.0 + 1e-12)))


def filter_coefficients(M, R):
    """c_m = 2^-M C(M, M/2 - m) for m = -R..R, evaluated in log space."""
    ms = np.arange(-R, R + 1)
    half = M // 2
    log_c = gammaln(M + 1) - gammaln(half - ms + 1) - gammaln(half + ms + 1) - M * math.log(2.0)
    return np.exp(log_c)


def make_filter_params(E, delta, alpha, x=DEFAULT_X):
    """Derive M, R_eff, times and coefficients of the cosine filter.

    Args:
        E (float): Filter center.
        delta (float): Gaussian width the filter approximates.
        alpha (float): Period parameter; the filter is accurate for |H - E| <= alpha pi / 2.
        x (float): Truncation constant, tail weight <= 2 exp(-x^2 / 2).

    Returns:
        FilterParams: Populated recipe on the nominal grid t_m = 2m / alpha.

    Raises:
        NonPositiveParameter: If delta, alpha or x is not positive.
        WidthTooLarge: If alpha < sqrt(2) delta, so that M < 2.
    """
    for name, value in (("delta", delta), ("alpha", alpha), ("x", x)):
        if not value > 0 or not math.isfinite(value):
            raise NonPositiveParameter(f"{name} must be positive and finite, got {value}")
    M = _filter_order(delta, alpha)
    if M < 2:
        raise WidthTooLarge(f"delta={delta} too large for alpha={alpha}: M={M} < 2")
    R_eff = min(int(math.floor(x * alpha / delta * (1.0 + 1e-12))), M // 2)
    ms = np.arange(-R_eff, R_eff + 1)
    return FilterParams(
        E=float(E),
        delta=float(delta),
        alpha=float(alpha),
        x=float(x),
        M=M,
        R_eff=R_eff,
        times=2.0 * ms / alpha,
        coeffs=filter_coefficients(M, R_eff),
    )


def choose_alpha(sigma_state, N, delta):
    """alpha = 3 max(sigma_state sqrt(N), delta)."""
    if sigma_state < 0 or N < 1 or delta <= 0:
        raise NonPositiveParameter(f"invalid inputs sigma={sigma_state}, N={N}, delta={delta}")
    return 3.0 * max(sigma_state * math.sqrt(N), delta)


def full_spectrum_alpha(spec):
    """alpha = sqrt(J^2 + g^2 + h^2) N, wide enough for the whole spectrum."""
    return math.sqrt(spec.J**2 + spec.g**2 + spec.h**2) * spec.N
