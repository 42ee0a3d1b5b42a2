"""Run orchestration: one resolved RunConfig in, one ResultRecord out."""

import math
import os
import time
from dataclasses import replace

import numpy as np

from ..models.lattice import build_hamiltonian_mpo, pauli_moments, sparse_hamiltonian
from ..models.result import ResultRecord
from ..models.tensor_train import TensorTrain, TruncationPolicy
from ..utils.cache import CacheHandle
from ..utils.constants import ED_MAX_SITES
from ..utils.database import save_record
from ..utils.errors import EmptyWindow, SizeTooLarge, SpectraFilterError, VanishingDenominator, add_context
from ..utils.formatting import render_report, write_csv
from ..utils.log import get_logger
from .ed_oracle import ed_diagonal_ensemble, ed_filter_values, ed_microcanonical, ed_spectrum, with_state
from .estimators import (
    GaussianDosModel,
    direct_trace_ratio,
    direct_trace_scan,
    thermal_reference,
    trace_series_rows,
)
from .evolution import EvolutionConfig, make_backend
from .filtering import check_filter_range
from .sampler import best_bitstring, exhaustive_basis_sum, run_chains, seed_state_search
from .variance import state_filter_pipeline

logger = get_logger(__name__)

EXHAUSTIVE_CHECK_MAX_SITES = 10
ORACLE_EXACT_BOND = 256
MICRO_CHECK_MIN_SITES = 8
MICRO_CHECK_DENSITIES = (0.0, 0.3, 0.6)
STATE_CHECK_MIN_POINTS = 3
CHAIN_TRACE_COLUMNS = ["step", "accepted", "point", "D", "O_loc", "estimate"]
SERIES_COLUMNS = ["m", "t_m", "c_m", "re_z", "im_z"]


def evolution_config(cfg):
    e = cfg.evolution
    return EvolutionConfig(
        dt=e.dt,
        policy=TruncationPolicy(max_bond=e.max_bond, sv_cutoff=e.sv_cutoff),
        error_ceiling=e.error_ceiling,
        snap_dt=e.snap_dt,
        memory_budget_mb=e.memory_budget_mb,
        method=e.method,
    )


def oracle_evolution_config(cfg):
    """Evolution settings for ed-check: untruncated bonds whenever the exact MPO fits."""
    evolution = evolution_config(cfg)
    exact_bond = 4 ** (cfg.model.N // 2)
    if evolution.policy.max_bond < exact_bond <= ORACLE_EXACT_BOND:
        logger.info("ed-check raises max_bond %d -> %d (exact at N=%d)",
                    evolution.policy.max_bond, exact_bond, cfg.model.N)
        evolution = replace(evolution, policy=replace(evolution.policy, max_bond=exact_bond))
    return evolution


def _cache(cfg):
    return CacheHandle(cfg.evolution.cache_dir) if cfg.evolution.cache_dir else None


def _oracle_spectrum(cfg):
    """Eigenvalue-level ED spectrum for the reference columns, None above ED_MAX_SITES."""
    if cfg.model.N > ED_MAX_SITES:
        return None
    return ed_spectrum(cfg.spec(), cfg.model.observable, cache_dir=cfg.evolution.cache_dir or None, vectors=False)


def micro_reference(sd, energy, window):
    """Microcanonical mean at E and its spread over half and double the window.

    Returns:
        tuple: (value at ``window``, max - min over the three widths); NaN where a window is empty.
    """
    values = []
    for width in (0.5 * window, window, 2.0 * window):
        try:
            values.append(ed_microcanonical(sd, energy, width))
        except EmptyWindow:
            values.append(float("nan"))
    finite = [v for v in values if np.isfinite(v)]
    spread = max(finite) - min(finite) if len(finite) > 1 else float("nan")
    return values[1], spread


def _with_context(mode, E, task):
    try:
        return task()
    except SpectraFilterError as error:
        raise add_context(error, mode=mode, E=E)


def _trace_scan(cfg, record):
    spec = cfg.spec()
    fp = cfg.filter_params(cfg.energies[0])
    check_filter_range(spec, fp)
    backend = cfg.evolution.backend
    if backend == "mps-on-demand":
        logger.warning("trace-scan needs operator traces; using mpo-cache instead of mps-on-demand")
        backend = "mpo-cache"
    family = _with_context(
        cfg.mode, fp.E, lambda: make_backend(spec, fp, evolution_config(cfg), backend, cache=_cache(cfg))
    )
    points = _with_context(
        cfg.mode, None, lambda: direct_trace_scan(family, fp, cfg.model.observable, cfg.energies)
    )
    sd = _oracle_spectrum(cfg)
    for point in points:
        micro, spread = micro_reference(sd, point.E, cfg.run.window) if sd is not None else (None, None)
        record.add_row(
            {
                "E": point.E,
                "E_over_N": point.E / spec.N,
                "value": point.value,
                "dos": point.dos_weight * fp.normalization,
                "dos_weight": point.dos_weight,
                "imag_residue": point.residue,
                "truncation_error": point.truncation_error,
                "budget": point.truncation_error + fp.tail_mass,
                "micro": micro,
                "micro_spread": spread,
            }
        )
    record.diagnostics["R"] = family.R
    record.diagnostics["M"] = fp.M
    if cfg.run.dump_series:
        record.traces.update(trace_series_rows(family, fp, cfg.model.observable))


def _monte_carlo(cfg, record):
    spec = cfg.spec()
    scfg = cfg.sampler_config()
    model = GaussianDosModel.from_spec(spec)
    fp0 = cfg.filter_params(cfg.energies[0])
    check_filter_range(spec, fp0)
    backend = _with_context(
        cfg.mode, fp0.E, lambda: make_backend(spec, fp0, evolution_config(cfg), scfg.backend, cache=_cache(cfg))
    )
    for index, energy in enumerate(cfg.energies):
        fp = fp0.with_energy(energy)

        def task():
            seed = seed_state_search(
                spec, energy, cfg.sampler.basis, rng_seed=cfg.run.rng_seed, seed_bond=cfg.sampler.seed_bond
            )
            return seed, run_chains(seed.point, fp, cfg.model.observable, scfg, backend, workers=cfg.run.workers)

        seed, result = _with_context(cfg.mode, energy, task)
        record.add_row(
            {
                "E": energy,
                "E_over_N": energy / spec.N,
                "value": result.estimate,
                "stderr": result.stderr,
                "acceptance_rate": result.diagnostics["acceptance_rate"],
                "cutoff_rate": result.diagnostics["cutoff_rate"],
                "max_imag_residue": result.diagnostics["max_imag_residue"],
                "seed_objective": seed.objective,
                "truncation_error": backend.truncation_error,
                "budget": backend.truncation_error + fp.tail_mass,
            }
        )
        record.diagnostics.setdefault("chain_estimates", {})[f"{energy!r}"] = result.diagnostics["chain_estimates"]
        record.diagnostics.setdefault("shifted_energy", {})[f"{energy!r}"] = energy / model.gamma(fp.delta)
        if scfg.keep_trace:
            record.traces[f"chain_trace_{index:03d}"] = result.diagnostics["trace"]


def _state_filter(cfg, record):
    spec = cfg.spec()
    backend = cfg.evolution.backend
    if backend == "mpo-cache":
        backend = "mps-on-demand"
    sd = _oracle_spectrum(cfg)
    for energy in cfg.energies:
        rows = _with_context(
            cfg.mode,
            energy,
            lambda: state_filter_pipeline(
                spec,
                energy,
                cfg.state_filter.bond_dims,
                x=cfg.filter.x,
                observable=cfg.model.observable,
                cfg=evolution_config(cfg),
                backend=backend,
                thermal_method=cfg.run.thermal_method if spec.N <= ED_MAX_SITES else "gibbs-mpo",
                max_sweeps=cfg.state_filter.max_sweeps,
                tol=cfg.state_filter.tol,
                workers=cfg.run.workers,
            ),
        )
        micro, spread = micro_reference(sd, energy, cfg.run.window) if sd is not None else (None, None)
        for row in rows:
            data = row._asdict()
            data.update(
                E=energy, E_over_N=energy / spec.N, budget=row.truncation_error, micro=micro, micro_spread=spread
            )
            record.add_row(data)


def _gibbs_reference(cfg, record):
    spec = cfg.spec()
    policy = TruncationPolicy(max_bond=cfg.evolution.max_bond, sv_cutoff=cfg.evolution.sv_cutoff)
    method = cfg.run.thermal_method
    if method == "ed" and spec.N > ED_MAX_SITES:
        raise SizeTooLarge(f"thermal_method=ed limited to N <= {ED_MAX_SITES}", mode=cfg.mode)
    for energy in cfg.energies:
        point = _with_context(
            cfg.mode,
            energy,
            lambda: thermal_reference(
                spec, energy, method=method, observable=cfg.model.observable, dbeta=cfg.evolution.dbeta, policy=policy
            ),
        )
        record.add_row(
            {
                "E": energy,
                "E_over_N": energy / spec.N,
                "beta": point.beta,
                "value": point.value,
                "energy": point.energy,
                "budget": abs(point.energy - energy),
            }
        )


def _check(name, measured, bound):
    return {"check": name, "passed": bool(measured <= bound), "measured": float(measured), "bound": float(bound)}


def _micro_convergence(sd, spec, window):
    """Summed |O_delta - O_micro| at delta=0.5 over the same at delta=4."""
    narrow = wide = 0.0
    for density in MICRO_CHECK_DENSITIES:
        energy = density * spec.N
        try:
            micro = ed_microcanonical(sd, energy, window)
        except EmptyWindow:
            continue
        narrow += abs(ed_filter_values(sd, energy, 0.5).trace_ratio - micro)
        wide += abs(ed_filter_values(sd, energy, 4.0).trace_ratio - micro)
    if wide == 0.0:
        return None
    return narrow / wide


def _state_vs_trace(sd, spec, energies, delta, window, rng_seed):
    """Per-energy micro, trace-ratio, state-filter and diagonal-ensemble values for product seeds."""
    points = []
    for energy in energies:
        if not sd.eigenvalues[0] < energy < sd.eigenvalues[-1]:
            continue
        bits, _ = best_bitstring(spec, energy, rng_seed)
        state = with_state(sd, TensorTrain.from_bits(bits), spec.N)
        try:
            micro = ed_microcanonical(sd, energy, window)
            values = ed_filter_values(state, energy, delta)
        except (EmptyWindow, VanishingDenominator) as error:
            logger.debug("state vs trace skips E=%.4g: %s", energy, error)
            continue
        points.append(
            {
                "E": float(energy),
                "micro": micro,
                "trace": values.trace_ratio,
                "state": values.state_filter_value,
                "diagonal": ed_diagonal_ensemble(state),
            }
        )
    return points


def run_ed_check(cfg, diagnostics=None):
    """Oracle-equivalence suite at the configured size.

    From N = 8 on it also compares narrow and wide filters with the
    microcanonical mean, and trace-ratio with state-filter gaps; the
    per-energy values go into ``diagnostics`` when a dict is given.

    Returns:
        list[dict]: One row per assertion with its measured deviation and bound.
    """
    spec = cfg.spec()
    if spec.N > ED_MAX_SITES:
        raise SizeTooLarge(f"ed-check limited to N <= {ED_MAX_SITES}, got {spec.N}", mode=cfg.mode)
    observable = cfg.model.observable
    sd = ed_spectrum(spec, observable)
    dim = 2.0**spec.N
    checks = []

    first, second = pauli_moments(spec)
    checks.append(_check("trace H / 2^N", abs(sd.eigenvalues.sum() / dim - first), 1e-9 * max(1.0, second)))
    checks.append(
        _check("trace H^2 / 2^N", abs(np.sum(sd.eigenvalues**2) / dim - second), 1e-9 * max(1.0, second))
    )
    if spec.N <= EXHAUSTIVE_CHECK_MAX_SITES:
        mpo = build_hamiltonian_mpo(spec).to_dense()
        checks.append(
            _check("hamiltonian mpo vs sparse", np.max(np.abs(mpo - sparse_hamiltonian(spec).toarray())), 1e-10)
        )

    fp0 = cfg.filter_params(cfg.energies[0])
    gaussian = np.exp(-((sd.eigenvalues - fp0.E) ** 2) / (2.0 * fp0.delta**2))
    shape = np.max(np.abs(fp0.cosine_power(sd.eigenvalues) - gaussian))
    checks.append(
        _check("filter vs gaussian", np.max(np.abs(fp0.weight(sd.eigenvalues) - gaussian)), fp0.tail_mass + shape + 1e-12)
    )
    checks.append(_check("series tail", fp0.tail_mass, fp0.tail_bound))

    evolution = oracle_evolution_config(cfg)
    dense = make_backend(spec, fp0, evolution, "dense")
    family = make_backend(spec, fp0, evolution, "mpo-cache", cache=_cache(cfg))
    exact_points = direct_trace_scan(dense, fp0, observable, cfg.energies)
    tn_points = direct_trace_scan(family, fp0, observable, cfg.energies)
    peak = max((p.dos_weight for p in exact_points if np.isfinite(p.dos_weight)), default=0.0)
    for exact, tn in zip(exact_points, tn_points):
        if not np.isfinite(exact.dos_weight) or exact.dos_weight < 1e-6 * peak:
            continue
        fp = dense.align(fp0.with_energy(exact.E))
        reference = ed_filter_values(sd, fp.E, fp.delta, kind="cosine", fp=fp).trace_ratio
        label = f"E/N={exact.E / spec.N:+.3f}"
        checks.append(_check(f"dense trace ratio {label}", abs(exact.value - reference), 1e-8))
        checks.append(_check(f"mpo trace ratio {label}", abs(tn.value - reference), 5e-3))

    if spec.N <= EXHAUSTIVE_CHECK_MAX_SITES:
        central = min(cfg.energies, key=abs)
        fp = fp0.with_energy(central)
        direct, _ = direct_trace_ratio(dense, fp, observable)
        summed = exhaustive_basis_sum(fp, observable, dense, spec.N)
        checks.append(_check(f"basis sum identity E={central:.4g}", abs(summed - direct), 1e-10 + fp.tail_mass))

    nonzero = [e for e in cfg.energies if abs(e) > 1e-9 and sd.eigenvalues[0] < e < sd.eigenvalues[-1]]
    if nonzero:
        energy = min(nonzero, key=abs)
        policy = TruncationPolicy(max_bond=cfg.evolution.max_bond, sv_cutoff=cfg.evolution.sv_cutoff)
        exact = thermal_reference(spec, energy, "ed", observable)
        mpo = thermal_reference(spec, energy, "gibbs-mpo", observable, cfg.evolution.dbeta, policy)
        checks.append(_check(f"gibbs ed vs mpo E={energy:.4g}", abs(exact.value - mpo.value), 1e-3))

    if spec.N >= MICRO_CHECK_MIN_SITES:
        ratio = _micro_convergence(sd, spec, cfg.run.window)
        if ratio is not None:
            checks.append(_check("microcanonical: delta=0.5 vs delta=4", ratio, 1.0))
        points = _state_vs_trace(sd, spec, cfg.energies, fp0.delta, cfg.run.window, cfg.run.rng_seed)
        if len(points) >= STATE_CHECK_MIN_POINTS:
            trace_gap = float(np.median([abs(p["trace"] - p["micro"]) for p in points]))
            state_gap = float(np.median([abs(p["state"] - p["micro"]) for p in points]))
            checks.append(_check("median trace gap vs state gap", trace_gap / max(state_gap, 1e-300), 1.0))
        if diagnostics is not None:
            diagnostics["state_vs_trace"] = points
    if diagnostics is not None:
        diagnostics["micro_window"] = {
            f"{e!r}": dict(zip(("micro", "spread"), micro_reference(sd, e, cfg.run.window))) for e in cfg.energies
        }

    for row in checks:
        logger.debug("%s: %.3e (bound %.1e) %s", row["check"], row["measured"], row["bound"],
                     "ok" if row["passed"] else "FAILED")
    return checks


MODES = {
    "trace-scan": _trace_scan,
    "mc": _monte_carlo,
    "state-filter": _state_filter,
    "gibbs-ref": _gibbs_reference,
}


def run_pipeline(cfg):
    """
    Execute the configured mode end to end.

    Args:
        cfg (RunConfig): Resolved configuration.

    Returns:
        ResultRecord: Rows, diagnostics and the configuration echo.

    Raises:
        SpectraFilterError: Module errors, with mode and energy attached.
    """
    started = time.perf_counter()
    record = ResultRecord(mode=cfg.mode, config_hash=cfg.config_hash(), config_echo=cfg.echo())
    logger.info("running %s for N=%d over %d energies", cfg.mode, cfg.model.N, len(cfg.energies))
    if cfg.mode == "ed-check":
        try:
            for row in run_ed_check(cfg, record.diagnostics):
                record.add_row(row)
        except SpectraFilterError as error:
            raise add_context(error, mode=cfg.mode)
    else:
        MODES[cfg.mode](cfg, record)
    record.wall_clock = time.perf_counter() - started
    return record


def write_outputs(record, out_dir, db_path=None):
    """
    Write result.json, results.csv, report.txt and any chain traces or series dumps,
    then log the run to the result store.

    Returns:
        dict: Paths written, keyed by kind, plus the run id.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "json": os.path.join(out_dir, "result.json"),
        "csv": os.path.join(out_dir, "results.csv"),
        "report": os.path.join(out_dir, "report.txt"),
    }
    with open(paths["json"], "w", encoding="utf-8", newline="\n") as handle:
        handle.write(record.to_json())
    write_csv(paths["csv"], record.rows, record.columns)
    with open(paths["report"], "w", encoding="utf-8", newline="\n") as handle:
        handle.write(render_report(record.rows, record.columns, title=f"{record.mode} [{record.config_hash}]"))
    for name, rows in sorted(record.traces.items()):
        path = os.path.join(out_dir, f"{name}.csv")
        write_csv(path, rows, SERIES_COLUMNS if name.startswith("series_") else CHAIN_TRACE_COLUMNS)
        paths[name] = path
    paths["run_id"] = save_record(record, db_path or os.path.join(out_dir, "results.db"))
    logger.info("wrote %s", out_dir)
    return paths


def summarize(record):
    """Headline numbers for the dashboard."""
    values = [row.get("value") for row in record.rows if row.get("value") is not None]
    finite = [v for v in values if isinstance(v, float) and math.isfinite(v)]
    return {
        "mode": record.mode,
        "rows": len(record.rows),
        "finite": len(finite),
        "passed": record.passed,
        "wall_clock": record.wall_clock,
        "config_hash": record.config_hash,
    }
