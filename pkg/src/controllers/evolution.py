"""Real- and imaginary-time evolution with Trotter gate layers.

Three interchangeable backends expose the filter time grid:

* ``EvolutionFamily`` with source "mpo-cache": U(t_m) stored as operator trains.
* ``EvolutionFamily`` with source "mps-on-demand": states are evolved per query.
* ``DenseBackend``: exact evolution through the dense eigendecomposition.

Every backend answers the same questions (survival amplitudes, trajectories,
inner products and, where possible, operator traces) so the filter and
sampler code never needs to know which one it holds.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..models.filter_params import AmplitudeSeries
from ..models.lattice import (
    build_observable_mpo,
    layer_to_mpo,
    sparse_observable,
    trotter_sequence,
)
from ..models.tensor_train import OperatorTrain, TruncationPolicy
from ..utils.constants import (
    DEFAULT_DT,
    DEFAULT_ERROR_CEILING,
    DEFAULT_MEMORY_BUDGET_MB,
    ED_MAX_SITES,
    GRID_ROUNDING_TOLERANCE,
    PAULIS,
)
from ..utils.errors import (
    IndexMismatch,
    MemoryBudgetExceeded,
    NonCommensurateTime,
    NonPositiveParameter,
    SizeTooLarge,
    StructurallyInvalid,
    TruncationBudgetExceeded,
    ZeroNorm,
)
from ..utils.log import get_logger
from . import tn_core
from .ed_oracle import dense_eigensystem

logger = get_logger(__name__)


@dataclass(frozen=True)
class EvolutionConfig:
    """Trotter step, truncation and budgets for one evolution backend."""

    dt: float = DEFAULT_DT
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    direction: str = "forward"
    error_ceiling: float = DEFAULT_ERROR_CEILING
    snap_dt: bool = True
    memory_budget_mb: float = DEFAULT_MEMORY_BUDGET_MB
    method: str = "zipup"

    def __post_init__(self):
        if not self.dt > 0:
            raise NonPositiveParameter(f"dt must be positive, got {self.dt}")
        if self.direction not in ("forward", "backward"):
            raise StructurallyInvalid(f"direction must be forward or backward, got {self.direction!r}")

    def config_hash_text(self):
        p = self.policy
        return (
            f"dt={self.dt!r}|snap={self.snap_dt}|max_bond={p.max_bond}|"
            f"sv_cutoff={p.sv_cutoff!r}|method={self.method}"
        )


def step_count(t, dt):
    """Integer number of dt steps in |t|; NonCommensurateTime if |t| is off the grid."""
    steps = int(round(abs(t) / dt))
    if abs(steps * dt - abs(t)) > 1e-12 * max(1.0, abs(t)):
        raise NonCommensurateTime(f"t={t} is not an integer multiple of dt={dt}")
    return steps


def time_grid(fp, dt, snap_dt=True):
    """Step counts and effective times for m = 0..R_eff.

    With ``snap_dt`` the step shrinks to 2/alpha divided by an integer, so the
    grid is hit exactly. Otherwise each t_m is rounded to n_m = round(t_m / dt)
    steps and the rounded times are returned (with a warning if any rounding
    exceeds the tolerance).

    Returns:
        tuple: (effective dt, step counts n_m, effective forward times)
    """
    nominal = fp.times[fp.R_eff:]
    if fp.R_eff == 0:
        return dt, np.zeros(1, dtype=int), np.zeros(1)
    spacing = 2.0 / fp.alpha
    if snap_dt:
        per_point = max(1, math.ceil(spacing / dt - 1e-12))
        dt_eff = spacing / per_point
        steps = per_point * np.arange(fp.R_eff + 1)
        return dt_eff, steps, dt_eff * steps
    steps = np.rint(nominal / dt).astype(int)
    rounded = steps * dt
    worst = float(np.max(np.abs(rounded - nominal) / np.maximum(nominal, 1e-300)))
    if worst > GRID_ROUNDING_TOLERANCE:
        logger.warning(
            "time grid 2m/alpha is not commensurate with dt=%g (relative rounding %.2e); "
            "using rounded times in the filter phases", dt, worst,
        )
    return dt, steps, rounded


@lru_cache(maxsize=64)
def _sequence_mpos(spec, dt, steps, imaginary):
    return tuple(layer_to_mpo(layer, spec.N) for layer in trotter_sequence(spec, dt, steps, imaginary))


def _apply_steps(state, spec, signed_dt, steps, cfg):
    for layer in _sequence_mpos(spec, signed_dt, steps, False):
        state = tn_core.apply_mpo(layer, state, cfg.policy, method=cfg.method)
    return state


def evolve_mps(state, t, cfg, spec):
    """Approximate exp(-i H t)|state> (exp(+i H t) for direction "backward").

    Args:
        state (TensorTrain): Normalised initial state.
        t (float): Evolution time; must be an integer multiple of cfg.dt.
        cfg (EvolutionConfig): Step, truncation and error ceiling.
        spec (IsingSpec): Hamiltonian.

    Returns:
        tuple: (evolved TensorTrain, truncation error added by this call)
    """
    steps = step_count(t, cfg.dt)
    if steps == 0:
        return state, 0.0
    sign = math.copysign(1.0, t) * (1.0 if cfg.direction == "forward" else -1.0)
    evolved = _apply_steps(state, spec, sign * cfg.dt, steps, cfg)
    added = evolved.truncation_error - state.truncation_error
    if added > cfg.error_ceiling:
        raise TruncationBudgetExceeded(
            f"evolution to t={t} accumulated truncation error {added:.3e} > {cfg.error_ceiling:.1e}"
        )
    return evolved, added


def _operator_bytes(operators):
    return sum(t.nbytes for op in operators for t in op.site_tensors)


class EvolutionFamily:
    """U(t_m) for m = 0..R_eff, stored or realised on demand.

    ``times`` covers m = -R_eff..R_eff; negative times are never stored and
    use U(-t) = U(t)^dagger.
    """

    def __init__(self, spec, cfg, source, dt_eff, steps, forward_times, operators=None, errors=None):
        if source not in ("mpo-cache", "mps-on-demand"):
            raise StructurallyInvalid(f"unknown family source {source!r}")
        self.spec = spec
        self.cfg = cfg
        self.source = source
        self.dt_eff = float(dt_eff)
        self.steps = np.asarray(steps, dtype=int)
        self.forward_times = np.asarray(forward_times, dtype=float)
        self.operators = None if operators is None else tuple(operators)
        self.errors = list(errors) if errors is not None else [0.0] * len(self.forward_times)

    @property
    def R(self):
        return len(self.forward_times) - 1

    @property
    def times(self):
        return np.concatenate([-self.forward_times[:0:-1], self.forward_times])

    @property
    def truncation_error(self):
        return max(self.errors) if self.errors else 0.0

    def align(self, fp):
        """fp on the times this family realises."""
        if fp.R_eff != self.R:
            raise IndexMismatch(f"filter has R_eff={fp.R_eff}, family has R={self.R}")
        return fp.with_times(self.times)

    def _step_cfg(self):
        return EvolutionConfig(
            dt=self.dt_eff,
            policy=self.cfg.policy,
            error_ceiling=self.cfg.error_ceiling,
            snap_dt=self.cfg.snap_dt,
            memory_budget_mb=self.cfg.memory_budget_mb,
            method=self.cfg.method,
        )

    def operator(self, m):
        if self.operators is None:
            raise StructurallyInvalid("operators are only stored in mpo-cache mode")
        op = self.operators[abs(m)]
        return op if m >= 0 else op.dagger()

    def prepare_observable(self, observable):
        if observable is None or isinstance(observable, OperatorTrain):
            return observable
        return build_observable_mpo(self.spec, observable)

    def point_state(self, point):
        return point.to_train()

    def inner(self, bra, ket):
        return tn_core.sandwich(bra, None, ket)

    def between(self, bra, op, ket):
        return tn_core.sandwich(bra, op, ket)

    def survival(self, state):
        """a(t_m) = <state|U(t_m)|state> for m = 0..R and the truncation error involved."""
        if self.source == "mpo-cache":
            values = [tn_core.sandwich(state, op, state) for op in self.operators]
            return np.asarray(values), self.truncation_error
        forward, errors = self._chain(state, +1)
        values = [self.inner(state, evolved) for evolved in forward]
        return np.asarray(values), max(errors)

    def survival_series(self, state):
        values, error = self.survival(state)
        return AmplitudeSeries.from_forward(values, self.forward_times, error)

    def _chain(self, state, sign):
        cfg = self._step_cfg()
        states = [state]
        errors = [0.0]
        current = state
        for m in range(1, self.R + 1):
            increment = int(self.steps[m] - self.steps[m - 1])
            current = _apply_steps(current, self.spec, sign * self.dt_eff, increment, cfg)
            cumulative = current.truncation_error - state.truncation_error
            if cumulative > cfg.error_ceiling:
                raise TruncationBudgetExceeded(
                    f"evolution to m={sign * m} accumulated truncation error {cumulative:.3e}"
                )
            states.append(current)
            errors.append(cumulative)
        return states, errors

    def trajectory(self, state):
        """States U(t_m)|state> for m = -R..R and their truncation errors."""
        if self.source == "mpo-cache":
            states, errors = [], []
            for m in range(-self.R, self.R + 1):
                evolved = tn_core.apply_mpo(self.operator(m), state, self.cfg.policy, method=self.cfg.method)
                states.append(evolved)
                errors.append(evolved.truncation_error - state.truncation_error)
            return states, errors
        forward, forward_errors = self._chain(state, +1)
        backward, backward_errors = self._chain(state, -1)
        return backward[:0:-1] + forward, backward_errors[:0:-1] + forward_errors

    def observable_amplitudes(self, state, op):
        """<state|O U(t_m)|state> for m = -R..R (O Hermitian) and the error involved."""
        if self.source == "mpo-cache":
            try:
                applied = tn_core.apply_mpo(op, state, self.cfg.policy, method=self.cfg.method)
            except ZeroNorm:
                return np.zeros(2 * self.R + 1, dtype=complex), self.truncation_error
            forward = [tn_core.sandwich(applied, u, state) for u in self.operators]
            backward = [np.conj(tn_core.sandwich(state, u, applied)) for u in self.operators[:0:-1]]
            error = self.truncation_error + applied.truncation_error - state.truncation_error
            return np.asarray(backward + forward), error
        states, errors = self.trajectory(state)
        return np.asarray([self.between(state, op, s) for s in states]), max(errors)

    def grid(self, state, op):
        """Gram matrix <psi(t_m)|psi(t_n)> and, for an observable, <psi(t_m)|O|psi(t_n)>."""
        states, errors = self.trajectory(state)
        size = len(states)
        gram = np.empty((size, size), dtype=complex)
        weighted = None if op is None else np.empty((size, size), dtype=complex)
        for i, bra in enumerate(states):
            for j, ket in enumerate(states):
                gram[i, j] = self.inner(bra, ket)
                if op is not None:
                    weighted[i, j] = self.between(bra, op, ket)
        return gram, weighted, 2.0 * max(errors)

    def traces(self, observable=None):
        """(tr U(t_m), tr(O U(t_m))) for m = 0..R; needs stored operators."""
        if self.source != "mpo-cache":
            raise StructurallyInvalid("operator traces need an mpo-cache family")
        op = self.prepare_observable(observable)
        identity = OperatorTrain.identity(self.spec.N)
        plain = np.array([tn_core.mpo_trace(u) for u in self.operators])
        if op is None:
            return plain, None
        weighted = np.array([tn_core.trace_sandwich(identity, op, u) for u in self.operators])
        return plain, weighted


def family_hash_text(fp, cfg):
    return f"{fp.grid_hash()}|{cfg.config_hash_text()}"


def build_evolution_family(spec, fp, cfg, mode="mpo-cache", cache=None):
    """Time grid and, in mpo-cache mode, the operator trains U(t_m).

    U(t_{m+1}) is obtained from U(t_m) by multiplying in the Trotter layers of
    the intervening steps, compressing after each layer. With a ``cache``
    handle the family is loaded when the manifest matches and persisted
    otherwise.
    """
    dt_eff, steps, forward_times = time_grid(fp, cfg.dt, cfg.snap_dt)
    if mode == "mps-on-demand":
        return EvolutionFamily(spec, cfg, mode, dt_eff, steps, forward_times)
    if mode != "mpo-cache":
        raise StructurallyInvalid(f"unknown family mode {mode!r}")

    fingerprint = family_hash_text(fp, cfg)
    if cache is not None:
        stored = cache.load_family(spec.spec_hash(), fingerprint, len(forward_times))
        if stored is not None:
            operators, errors = stored
            return EvolutionFamily(spec, cfg, mode, dt_eff, steps, forward_times, operators, errors)

    budget = cfg.memory_budget_mb * 1024**2
    current = OperatorTrain.identity(spec.N)
    operators = [current]
    errors = [0.0]
    for m in range(1, len(forward_times)):
        increment = int(steps[m] - steps[m - 1])
        for layer in _sequence_mpos(spec, dt_eff, increment, False):
            current = tn_core.mpo_multiply(layer, current, cfg.policy)
        if current.truncation_error > cfg.error_ceiling:
            raise TruncationBudgetExceeded(
                f"U(t_{m}) accumulated truncation error {current.truncation_error:.3e} > {cfg.error_ceiling:.1e}"
            )
        operators.append(current)
        errors.append(current.truncation_error)
        if _operator_bytes(operators) > budget:
            raise MemoryBudgetExceeded(
                f"evolution operators exceed {cfg.memory_budget_mb} MB at m={m} (max bond {current.max_bond})"
            )
        logger.debug("U(t_%d) built: max bond %d, error %.2e", m, current.max_bond, current.truncation_error)
    family = EvolutionFamily(spec, cfg, mode, dt_eff, steps, forward_times, operators, errors)
    if cache is not None:
        cache.store_family(spec.spec_hash(), fingerprint, operators, errors, cfg)
    return family


class DenseBackend:
    """Exact evolution via the dense eigendecomposition (N <= ED_MAX_SITES)."""

    source = "dense"

    def __init__(self, spec, fp):
        if spec.N > ED_MAX_SITES:
            raise SizeTooLarge(f"dense backend limited to N <= {ED_MAX_SITES}, got {spec.N}")
        self.spec = spec
        self.eigenvalues, self.eigenvectors = dense_eigensystem(spec)
        self.forward_times = np.asarray(fp.times[fp.R_eff:], dtype=float)
        self.errors = [0.0] * len(self.forward_times)
        self.truncation_error = 0.0

    @property
    def R(self):
        return len(self.forward_times) - 1

    @property
    def times(self):
        return np.concatenate([-self.forward_times[:0:-1], self.forward_times])

    def align(self, fp):
        if fp.R_eff != self.R:
            raise IndexMismatch(f"filter has R_eff={fp.R_eff}, backend has R={self.R}")
        return fp.with_times(self.times)

    def prepare_observable(self, observable):
        if observable is None:
            return None
        if isinstance(observable, str):
            return sparse_observable(self.spec, observable)
        if isinstance(observable, OperatorTrain):
            return observable.to_dense()
        return observable

    def point_state(self, point):
        if point.kind == "computational":
            index = int("".join(str(int(b)) for b in point.bits), 2)
            vector = np.zeros(2**self.spec.N, dtype=complex)
            vector[index] = 1.0
            return vector
        vector = point.seed.to_dense()
        vector = vector / np.linalg.norm(vector)
        tensor = vector.reshape((2,) * self.spec.N)
        for site, label in enumerate(point.pauli_string):
            if label:
                tensor = np.moveaxis(np.tensordot(PAULIS[label], tensor, axes=(1, site)), 0, site)
        return tensor.reshape(-1)

    def inner(self, bra, ket):
        return complex(np.vdot(bra, ket))

    def between(self, bra, op, ket):
        return complex(np.vdot(bra, op @ ket))

    def evolve(self, vector, t):
        coeffs = self.eigenvectors.conj().T @ vector
        return self.eigenvectors @ (np.exp(-1j * self.eigenvalues * t) * coeffs)

    def survival(self, vector):
        weights = np.abs(self.eigenvectors.conj().T @ vector) ** 2
        values = np.exp(-1j * np.outer(self.forward_times, self.eigenvalues)) @ weights
        return values, 0.0

    def survival_series(self, vector):
        values, _ = self.survival(vector)
        return AmplitudeSeries.from_forward(values, self.forward_times)

    def trajectory(self, vector):
        coeffs = self.eigenvectors.conj().T @ vector
        phases = np.exp(-1j * np.outer(self.times, self.eigenvalues))
        states = list((phases * coeffs[None, :]) @ self.eigenvectors.T)
        return states, [0.0] * len(states)

    def observable_amplitudes(self, vector, op):
        coeffs = self.eigenvectors.conj().T @ vector
        dual = self.eigenvectors.conj().T @ (op @ vector)
        phases = np.exp(-1j * np.outer(self.times, self.eigenvalues))
        return phases @ (np.conj(dual) * coeffs), 0.0

    def grid(self, vector, op):
        states, _ = self.trajectory(vector)
        states = np.asarray(states)
        gram = states.conj() @ states.T
        weighted = None if op is None else states.conj() @ (op @ states.T)
        return gram, weighted, 0.0

    def traces(self, observable=None):
        plain = np.exp(-1j * np.outer(self.forward_times, self.eigenvalues)).sum(axis=1)
        if observable is None:
            return plain, None
        op = self.prepare_observable(observable)
        diagonal = np.real(np.einsum("ik,ik->k", self.eigenvectors.conj(), op @ self.eigenvectors))
        weighted = np.exp(-1j * np.outer(self.forward_times, self.eigenvalues)) @ diagonal
        return plain, weighted


def make_backend(spec, fp, cfg, backend="mpo-cache", cache=None):
    """Backend by name: "mpo-cache", "mps-on-demand" or "dense"."""
    if backend == "dense":
        return DenseBackend(spec, fp)
    return build_evolution_family(spec, fp, cfg, backend, cache=cache)


def gibbs_step(spec, current, dbeta, policy):
    """Multiply one imaginary-time step exp(-dbeta H / 2) onto ``current``.

    A negative ``dbeta`` grows the high-energy part instead (negative temperatures).
    """
    for layer in _sequence_mpos(spec, dbeta / 2.0, 1, True):
        current = tn_core.mpo_multiply(layer, current, policy)
    return current


def build_gibbs_mpo(spec, beta, dbeta, policy):
    """M(beta) ~ exp(-beta H / 2) from imaginary-time Trotter steps of size dbeta.

    The thermal value of O is tr(M^dagger O M) / tr(M^dagger M), see
    ``gibbs_expectation``.
    """
    if not dbeta > 0:
        raise NonPositiveParameter(f"dbeta must be positive, got {dbeta}")
    steps = step_count(beta, dbeta)
    current = OperatorTrain.identity(spec.N)
    if steps == 0:
        return current
    sign = math.copysign(1.0, beta)
    for layer in _sequence_mpos(spec, sign * dbeta / 2.0, steps, True):
        current = tn_core.mpo_multiply(layer, current, policy)
    return current


def gibbs_expectation(gibbs, op):
    """tr(M^dagger O M) / tr(M^dagger M) for a purified Gibbs operator M."""
    return tn_core.trace_sandwich(gibbs, op, gibbs).real / tn_core.trace_sandwich(gibbs, None, gibbs).real
