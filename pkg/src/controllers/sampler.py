"""Metropolis importance sampling of the filter ensemble over a product basis.

The chain visits basis points phi with probability proportional to the
filtered LDOS D(phi) and averages the local value

    O_loc(phi) = Re[ sum_m c_m e^{iEt_m} <phi|O U(t_m)|phi> / sum_m c_m e^{iEt_m} <phi|U(t_m)|phi> ]

which reproduces tr(O F) / tr(F) once summed over the whole basis.
"""

import itertools
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from ..models.basis import BasisPoint, ChainState
from ..models.filter_params import AmplitudeSeries
from ..models.lattice import bitstring_energy, bitstring_objective
from ..utils.constants import EXHAUSTIVE_SEED_MAX_SITES, GREEDY_STARTS, NEGATIVE_WEIGHT_TOLERANCE
from ..utils.errors import ChainStuck, NegativeWeight, SeedBelowCutoff, StructurallyInvalid, VanishingDenominator
from ..utils.log import get_logger
from .filtering import combine_series

logger = get_logger(__name__)


class LocalSample(NamedTuple):
    weight: float
    value: float
    residue: float


class ChainResult(NamedTuple):
    estimate: float
    stderr: float
    diagnostics: dict


class SeedResult(NamedTuple):
    point: BasisPoint
    objective: float


def local_weight_and_value(point, fp, observable, backend):
    """Filtered LDOS D(phi) and local value O_loc(phi) of one basis point.

    Returns:
        LocalSample: (D, O_loc, imaginary residue of the LDOS sum)

    Raises:
        NegativeWeight: D is negative beyond truncation and tail tolerance.
        VanishingDenominator: D is exactly zero, so O_loc is undefined.
    """
    fp = backend.align(fp)
    state = backend.point_state(point)
    survival = backend.survival_series(state)
    denominator = combine_series(fp, survival)
    weight = fp.normalization * denominator.value.real
    if weight < 0.0:
        tolerance = (NEGATIVE_WEIGHT_TOLERANCE + fp.tail_mass + survival.truncation_error) * fp.normalization
        if -weight > tolerance:
            raise NegativeWeight(f"LDOS {weight:.3e} below -{tolerance:.1e}", E=fp.E, point=point.key)
        weight = 0.0
    if weight == 0.0:
        return LocalSample(0.0, 0.0, denominator.residue)
    op = backend.prepare_observable(observable)
    if op is None:
        return LocalSample(weight, 1.0, denominator.residue)
    values, error = backend.observable_amplitudes(state, op)
    numerator = combine_series(fp, AmplitudeSeries(values, fp.times, "general", error))
    if denominator.value == 0:
        raise VanishingDenominator(f"zero LDOS sum at E={fp.E:.6g}", point=point.key)
    value = (numerator.value / denominator.value).real
    return LocalSample(weight, float(value), denominator.residue)


def propose(point, rng):
    """Single-site move: a bit flip, or one random non-identity Pauli on a random site."""
    site = int(rng.integers(point.num_sites))
    if point.kind == "computational":
        return point.flipped(site)
    return point.with_pauli(site, int(rng.integers(1, 4)))


def batch_means_stderr(values, batches):
    """Standard error of the mean from non-overlapping batch means."""
    values = np.asarray(values, dtype=float)
    size = values.size // batches
    if size < 2:
        return float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else float("nan")
    means = values[: size * batches].reshape(batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(batches))


def metropolis_chain(seed_point, fp, observable, scfg, backend, chain_index=0):
    """One Metropolis chain targeting D(phi) / sum D.

    Proposals with D below ``cutoff_rel * D(seed)`` are discarded without a
    random draw. Rejected proposals re-count the current point.

    Args:
        seed_point (BasisPoint): Starting point; its weight is the cutoff reference.
        fp (FilterParams): Filter.
        observable: Observable name or operator.
        scfg (SamplerConfig): Chain settings.
        backend: Evolution backend shared read-only between chains.
        chain_index (int): Offsets the RNG seed.

    Returns:
        ChainResult: (estimate, batch-means stderr, diagnostics dict)
    """
    rng = np.random.Generator(np.random.Philox(scfg.rng_seed + chain_index))
    memo = {}

    def evaluate(point):
        if point.key not in memo:
            memo[point.key] = local_weight_and_value(point, fp, observable, backend)
        return memo[point.key]

    seed = evaluate(seed_point)
    if not seed.weight > 0.0:
        raise SeedBelowCutoff(f"seed weight {seed.weight:.3e} is not positive", E=fp.E, chain=chain_index)
    cutoff = scfg.cutoff_rel * seed.weight
    chain = ChainState(point=seed_point, weight=seed.weight, value=seed.value, rng=rng, max_residue=seed.residue)
    visits = Counter()

    for step in range(scfg.n_samples):
        candidate = propose(chain.point, rng)
        sample = evaluate(candidate)
        chain.max_residue = max(chain.max_residue, sample.residue)
        if sample.weight < cutoff:
            accepted = False
            chain.cutoff_rejections += 1
        elif sample.weight <= 0.0:
            accepted = False
        elif sample.weight >= chain.weight:
            accepted = True
        else:
            accepted = rng.random() < sample.weight / chain.weight
        if accepted:
            chain.point, chain.weight, chain.value = candidate, sample.weight, sample.value
            chain.accepted += 1
            if step >= scfg.burn_in:
                chain.accepted_after_burn_in += 1
        chain.steps += 1
        if step >= scfg.burn_in:
            chain.values.append(chain.value)
            chain.value_sum += chain.value
            visits[chain.point.key] += 1
        if scfg.keep_trace:
            chain.trace.append(
                {
                    "step": step,
                    "accepted": int(accepted),
                    "point": "".join(str(label) for label in chain.point.key),
                    "D": chain.weight,
                    "O_loc": chain.value,
                    "estimate": chain.estimate,
                }
            )

    post = scfg.n_samples - scfg.burn_in
    if chain.accepted_after_burn_in == 0:
        raise ChainStuck(
            f"no proposal accepted in {post} steps after burn-in", E=fp.E, chain=chain_index
        )
    diagnostics = {
        "acceptance_rate": chain.accepted_after_burn_in / post,
        "cutoff_rate": chain.cutoff_rejections / scfg.n_samples,
        "max_imag_residue": chain.max_residue,
        "evaluations": len(memo),
        "samples": len(chain.values),
        "visits": dict(visits),
        "trace": chain.trace,
    }
    logger.debug(
        "chain %d at E=%.6g: acceptance %.3f, cutoff rate %.3f, %d distinct points",
        chain_index, fp.E, diagnostics["acceptance_rate"], diagnostics["cutoff_rate"], len(memo),
    )
    return ChainResult(chain.estimate, batch_means_stderr(chain.values, scfg.batches), diagnostics)


def run_chains(seed_point, fp, observable, scfg, backend, workers=1):
    """``scfg.n_chains`` independent chains pooled into one estimate.

    Chains share only the backend; each owns its RNG stream (rng_seed + index).
    """
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(
            pool.map(
                lambda index: metropolis_chain(seed_point, fp, observable, scfg, backend, chain_index=index),
                range(scfg.n_chains),
            )
        )
    estimates = np.array([r.estimate for r in results])
    stderrs = np.array([r.stderr for r in results])
    pooled = float(np.mean(estimates))
    stderr = float(np.sqrt(np.sum(stderrs**2)) / len(results))
    diagnostics = {
        "acceptance_rate": float(np.mean([r.diagnostics["acceptance_rate"] for r in results])),
        "cutoff_rate": float(np.mean([r.diagnostics["cutoff_rate"] for r in results])),
        "max_imag_residue": float(max(r.diagnostics["max_imag_residue"] for r in results)),
        "chains": len(results),
        "chain_estimates": estimates.tolist(),
        "trace": results[0].diagnostics["trace"],
    }
    return ChainResult(pooled, stderr, diagnostics)


def exhaustive_basis_sum(fp, observable, backend, num_sites):
    """sum_phi D O_loc / sum_phi D over all 2^N bitstrings."""
    numerator = denominator = 0.0
    for bits in itertools.product((0, 1), repeat=num_sites):
        sample = local_weight_and_value(BasisPoint.computational(bits), fp, observable, backend)
        numerator += sample.weight * sample.value
        denominator += sample.weight
    if not denominator > 0.0:
        raise VanishingDenominator(f"no basis weight at E={fp.E:.6g}")
    return numerator / denominator


def all_bitstrings(num_sites):
    """Every bitstring as rows of a (2^N, N) array, site 0 most significant."""
    shifts = np.arange(num_sites - 1, -1, -1)
    return ((np.arange(2**num_sites)[:, None] >> shifts) & 1).astype(np.int8)


def exhaustive_bitstring_search(spec, energy):
    bits = all_bitstrings(spec.N)
    objective = bitstring_objective(spec, bits, energy)
    best = int(np.argmin(objective))
    return bits[best], float(objective[best])


def greedy_bitstring_search(spec, energy, starts=GREEDY_STARTS, rng_seed=0):
    """Best single-flip descent over ``starts`` random initial bitstrings."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    best_bits, best_objective = None, math.inf
    flips = np.eye(spec.N, dtype=np.int8)
    for _ in range(starts):
        bits = rng.integers(0, 2, size=spec.N, dtype=np.int8)
        objective = float(bitstring_objective(spec, bits, energy))
        while True:
            neighbours = bits[None, :] ^ flips
            scores = bitstring_objective(spec, neighbours, energy)
            move = int(np.argmin(scores))
            if not scores[move] < objective:
                break
            bits, objective = neighbours[move], float(scores[move])
        if objective < best_objective:
            best_bits, best_objective = bits, objective
    return best_bits, best_objective


def best_bitstring(spec, energy, rng_seed=0):
    """Bitstring minimising <b|(H - E)^2|b>: exhaustive up to 20 sites, greedy beyond."""
    if spec.N <= EXHAUSTIVE_SEED_MAX_SITES:
        return exhaustive_bitstring_search(spec, energy)
    return greedy_bitstring_search(spec, energy, rng_seed=rng_seed)


def seed_state_search(spec, E, basis_kind="computational", rng_seed=0, seed_bond=2):
    """Basis point minimising <phi|(H - E)^2|phi>.

    Computational points carry their diagonal energy and the per-site width
    |g|; pauli-dressed points are built on a variance-minimised MPS of bond
    ``seed_bond`` with the identity string.
    """
    if basis_kind == "computational":
        bits, objective = best_bitstring(spec, E, rng_seed)
        point = BasisPoint.computational(bits, mean_energy=float(bitstring_energy(spec, bits)), width=abs(spec.g))
        return SeedResult(point, objective)
    if basis_kind == "pauli-dressed":
        from .variance import minimize_variance_mps

        result = minimize_variance_mps(spec, E, seed_bond, rng_seed=rng_seed, strict=False)
        width = math.sqrt(max(result.variance - (result.E_mean - E) ** 2, 0.0) / spec.N)
        point = BasisPoint.dressed(result.state, mean_energy=result.E_mean, width=width)
        return SeedResult(point, result.variance)
    raise StructurallyInvalid(f"unknown basis kind {basis_kind!r}")
