"""Variance minimisation over fixed-bond MPS and the state-filtering pipeline.

``minimize_variance_mps`` runs single-site sweeps on the squared operator
(H - E)^2: each step replaces one tensor by the lowest eigenvector of the
local effective operator, so the objective can only decrease.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy.stats import spearmanr

from ..models.basis import BasisPoint
from ..models.filter_params import make_filter_params
from ..models.lattice import build_hamiltonian_mpo, build_observable_mpo
from ..models.tensor_train import TensorTrain, TruncationPolicy
from ..utils.constants import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_SWEEP_TOL,
    DEFAULT_X,
    DENSE_EIGH_MAX_DIM,
    ED_MAX_SITES,
    EIGENSTATE_WIDTH,
    PADDING_NOISE,
)
from ..utils.errors import NonConvergent, NonPositiveParameter, OutOfThermalRange
from ..utils.log import get_logger
from . import tn_core
from .estimators import thermal_reference
from .evolution import EvolutionConfig, make_backend
from .filtering import check_filter_range, filtered_observable_of_state
from .sampler import best_bitstring

logger = get_logger(__name__)

SQUARE_POLICY = TruncationPolicy(max_bond=2**31 - 1, sv_cutoff=1e-12)


@dataclass(frozen=True, eq=False)
class VarMinResult:
    """Minimiser of <(H - E)^2> at bond D0 with its sweep history."""

    state: TensorTrain
    target: float
    E_mean: float
    variance: float
    sweep_history: tuple
    bond: int
    converged: bool = True

    @property
    def sigma_D(self):
        return math.sqrt(self.variance)


def squared_shifted_hamiltonian(spec, E):
    """(H - E)^2 as an operator train (exact bond 9 up to the 1e-12 cutoff)."""
    shifted = build_hamiltonian_mpo(spec, shift=E)
    return tn_core.mpo_multiply(shifted, shifted, SQUARE_POLICY)


def _absorbed(op):
    tensors = list(op.site_tensors)
    tensors[0] = tensors[0] * np.exp(op.log_norm)
    return tensors


def _bond_dims(num_sites, bond):
    return [1] + [min(bond, 2 ** min(i, num_sites - i)) for i in range(1, num_sites)] + [1]


def _initial_tensors(spec, E, bond, rng):
    """Best bitstring, padded to bond ``bond`` with small random entries."""
    bits, _ = best_bitstring(spec, E)
    dims = _bond_dims(spec.N, bond)
    tensors = []
    for site, bit in enumerate(bits):
        shape = (dims[site], 2, dims[site + 1])
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        tensor = PADDING_NOISE * noise
        tensor[0, int(bit), 0] += 1.0
        tensors.append(tensor)
    return tensors


def _right_canonical(tensors):
    """Right-normalise sites 1..N-1 by LQ steps; site 0 carries the norm."""
    tensors = list(tensors)
    for index in range(len(tensors) - 1, 0, -1):
        left, phys, right = tensors[index].shape
        q, r = np.linalg.qr(tensors[index].reshape(left, phys * right).T)
        tensors[index] = q.T.reshape(-1, phys, right)
        tensors[index - 1] = np.tensordot(tensors[index - 1], r.T, axes=(2, 0))
    tensors[0] = tensors[0] / np.linalg.norm(tensors[0])
    return tensors


def _grow_left(env, tensor, w):
    tmp = np.tensordot(env, np.conj(tensor), axes=(0, 0))          # (w, b, s, a')
    tmp = np.tensordot(tmp, w, axes=([0, 2], [0, 1]))               # (b, a', t, w')
    return np.tensordot(tmp, tensor, axes=([0, 2], [0, 1]))         # (a', w', b')


def _grow_right(env, tensor, w):
    tmp = np.tensordot(np.conj(tensor), env, axes=(2, 0))           # (a, s, w', b')
    tmp = np.tensordot(tmp, w, axes=([1, 2], [1, 3]))               # (a, b', w, t)
    return np.tensordot(tmp, tensor, axes=([1, 3], [2, 1]))         # (a, w, b)


def _local_minimum(left, w, right, guess):
    """Lowest eigenpair of the effective operator L W R at one site."""
    shape = guess.shape
    dim = guess.size
    if dim <= DENSE_EIGH_MAX_DIM:
        matrix = np.einsum("awb,wstv,cvd->ascbtd", left, w, right).reshape(dim, dim)
        matrix = 0.5 * (matrix + matrix.conj().T)
        values, vectors = scipy.linalg.eigh(matrix, subset_by_index=[0, 0])
        return float(values[0]), vectors[:, 0].reshape(shape)

    def matvec(vector):
        x = vector.reshape(shape)
        tmp = np.tensordot(left, x, axes=(2, 0))                    # (a, w, t, d)
        tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))           # (a, d, s, v)
        out = np.tensordot(tmp, right, axes=([1, 3], [2, 1]))       # (a, s, c)
        return out.reshape(-1)

    operator = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=matvec, dtype=complex)
    values, vectors = scipy.sparse.linalg.eigsh(operator, k=1, which="SA", v0=guess.reshape(-1), tol=1e-10)
    return float(values[0]), vectors[:, 0].reshape(shape)


def minimize_variance_mps(spec, E, D0, max_sweeps=DEFAULT_MAX_SWEEPS, tol=DEFAULT_SWEEP_TOL, rng_seed=0, strict=True):
    """Single-site sweeps minimising <psi|(H - E)^2|psi> at fixed bond D0.

    Args:
        spec (IsingSpec): Chain.
        E (float): Target energy.
        D0 (int): Bond dimension, kept fixed.
        max_sweeps (int): Full (right and left) sweeps allowed.
        tol (float): Stop when the objective changes by less than tol * max(objective, 1).
        rng_seed (int): Seed of the padding noise.
        strict (bool): Raise NonConvergent (carrying the best result) when
            max_sweeps runs out.

    Returns:
        VarMinResult: Normalised state with canonical center 0.
    """
    if D0 < 1:
        raise NonPositiveParameter(f"D0 must be >= 1, got {D0}")
    square = squared_shifted_hamiltonian(spec, E)
    hamiltonian = build_hamiltonian_mpo(spec)
    operators = _absorbed(square)
    num_sites = spec.N
    rng = np.random.Generator(np.random.Philox(rng_seed))
    tensors = _right_canonical(_initial_tensors(spec, E, D0, rng))

    rights = [None] * (num_sites + 1)
    rights[num_sites] = np.ones((1, 1, 1), dtype=complex)
    for index in range(num_sites - 1, 0, -1):
        rights[index] = _grow_right(rights[index + 1], tensors[index], operators[index])
    lefts = [None] * (num_sites + 1)
    lefts[0] = np.ones((1, 1, 1), dtype=complex)

    history = []
    converged = False
    for sweep in range(max_sweeps):
        objective = None
        for index in range(num_sites - 1):
            objective, tensor = _local_minimum(lefts[index], operators[index], rights[index + 1], tensors[index])
            left, phys, right = tensor.shape
            q, r = np.linalg.qr(tensor.reshape(left * phys, right))
            tensors[index] = q.reshape(left, phys, -1)
            tensors[index + 1] = np.tensordot(r, tensors[index + 1], axes=(1, 0))
            lefts[index + 1] = _grow_left(lefts[index], tensors[index], operators[index])
        if objective is not None:
            history.append(objective)
        for index in range(num_sites - 1, 0, -1):
            objective, tensor = _local_minimum(lefts[index], operators[index], rights[index + 1], tensors[index])
            left, phys, right = tensor.shape
            q, r = np.linalg.qr(tensor.reshape(left, phys * right).T)
            tensors[index] = q.T.reshape(-1, phys, right)
            tensors[index - 1] = np.tensordot(tensors[index - 1], r.T, axes=(2, 0))
            rights[index] = _grow_right(rights[index + 1], tensors[index], operators[index])
        objective, tensors[0] = _local_minimum(lefts[0], operators[0], rights[1], tensors[0])
        history.append(objective)
        logger.debug("variance sweep %d at E=%.6g, D0=%d: %.6e", sweep, E, D0, objective)
        if len(history) >= 2 and abs(history[-2] - history[-1]) <= tol * max(abs(history[-2]), 1.0):
            converged = True
            break

    state = TensorTrain(tuple(tensors), canonical_center=0)
    state = tn_core.normalized(state)
    variance = max(tn_core.sandwich(state, square, state).real, 0.0)
    result = VarMinResult(
        state=state,
        target=float(E),
        E_mean=tn_core.sandwich(state, hamiltonian, state).real,
        variance=variance,
        sweep_history=tuple(max(value, 0.0) for value in history),
        bond=D0,
        converged=converged,
    )
    if not converged:
        logger.warning("variance minimisation at E=%.6g, D0=%d stopped after %d sweeps", E, D0, max_sweeps)
        if strict:
            raise NonConvergent(f"no convergence within {max_sweeps} sweeps", result=result, E=E, D0=D0)
    return result


class StateFilterRow(NamedTuple):
    D0: int
    sigma_D: float
    delta: float
    alpha: float
    value: float
    thermal_ref: float
    abs_gap: float
    raw_value: float
    E_mean: float
    truncation_error: float


def _thermal_or_nan(spec, E, observable, method):
    try:
        return thermal_reference(spec, E, method=method, observable=observable).value
    except OutOfThermalRange as error:
        logger.warning("%s", error)
        return float("nan")


def filter_minimized_state(spec, result, x=DEFAULT_X, observable="m_z", cfg=None, backend="mps-on-demand"):
    """Filtered value of a variance-minimised state with delta = sigma_D/(2 sqrt N), alpha = 3 sigma_D.

    Returns:
        tuple: (delta, alpha, filtered value, raw value, truncation error)
    """
    raw = tn_core.expectation(result.state, build_observable_mpo(spec, observable))
    sigma = result.sigma_D
    delta = sigma / (2.0 * math.sqrt(spec.N))
    if sigma <= EIGENSTATE_WIDTH:
        return delta, 3.0 * sigma, raw, raw, 0.0
    alpha = 3.0 * sigma
    fp = make_filter_params(result.target, delta, alpha, x)
    check_filter_range(spec, fp)
    evolution = make_backend(spec, fp, cfg or EvolutionConfig(), backend)
    state = evolution.point_state(BasisPoint.dressed(result.state))
    value = filtered_observable_of_state(state, fp, observable, evolution)
    return delta, alpha, value, raw, evolution.truncation_error


def state_filter_pipeline(spec, E, D0_list, x=DEFAULT_X, observable="m_z", cfg=None, backend="mps-on-demand",
                          thermal_method=None, max_sweeps=DEFAULT_MAX_SWEEPS, tol=DEFAULT_SWEEP_TOL, workers=1):
    """Variance-minimise at each D0, filter the result and compare with the thermal value at E.

    Returns:
        list[StateFilterRow]: One row per bond dimension, in the order given.
    """
    method = thermal_method or ("ed" if spec.N <= ED_MAX_SITES else "gibbs-mpo")
    thermal = _thermal_or_nan(spec, E, observable, method)

    def run(bond):
        try:
            result = minimize_variance_mps(spec, E, bond, max_sweeps=max_sweeps, tol=tol)
        except NonConvergent as error:
            result = error.result
        delta, alpha, value, raw, error = filter_minimized_state(spec, result, x, observable, cfg, backend)
        return StateFilterRow(
            D0=bond,
            sigma_D=result.sigma_D,
            delta=delta,
            alpha=alpha,
            value=value,
            thermal_ref=thermal,
            abs_gap=abs(value - thermal),
            raw_value=raw,
            E_mean=result.E_mean,
            truncation_error=error,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, D0_list))


class ScalingPoint(NamedTuple):
    N: int
    delta: float
    scale: float
    rel_error: float


def convergence_scan(specs, energy_density, D0, x=DEFAULT_X, observable="m_z", cfg=None, backend="dense"):
    """Relative filtered-state error against 1/(N^2 delta) across system sizes.

    Returns:
        tuple: (list[ScalingPoint], Spearman rank correlation of scale vs error)
    """
    points = []
    for spec in specs:
        E = energy_density * spec.N
        row = state_filter_pipeline(spec, E, [D0], x, observable, cfg, backend)[0]
        if not row.delta > 0 or not np.isfinite(row.thermal_ref):
            continue
        rel_error = row.abs_gap / max(abs(row.thermal_ref), 1e-12)
        points.append(ScalingPoint(spec.N, row.delta, 1.0 / (spec.N**2 * row.delta), rel_error))
    if len(points) < 2:
        return points, float("nan")
    correlation, _ = spearmanr([p.scale for p in points], [p.rel_error for p in points])
    return points, float(correlation)
