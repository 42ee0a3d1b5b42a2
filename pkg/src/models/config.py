"""Run configuration: flat INI text resolved into frozen blocks."""

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

from ..utils.constants import (
    DEFAULT_BATCHES,
    DEFAULT_BURN_IN,
    DEFAULT_CUTOFF_REL,
    DEFAULT_DBETA,
    DEFAULT_DT,
    DEFAULT_ERROR_CEILING,
    DEFAULT_MAX_BOND,
    DEFAULT_MAX_SWEEPS,
    DEFAULT_MEMORY_BUDGET_MB,
    DEFAULT_N_SAMPLES,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SV_CUTOFF,
    DEFAULT_SWEEP_TOL,
    DEFAULT_WINDOW,
    DEFAULT_X,
)
from ..utils.errors import MissingRequired, RuleUnresolvable, UnknownKey
from ..utils.formatting import (
    parse_bool,
    parse_float_list,
    parse_int_list,
    parse_rule,
    parse_scan,
)
from .basis import BASIS_KINDS, SamplerConfig
from .filter_params import choose_alpha, full_spectrum_alpha, make_filter_params
from .lattice import OBSERVABLES, IsingSpec

MODES = ("trace-scan", "mc", "state-filter", "ed-check", "gibbs-ref")
BACKENDS = ("mpo-cache", "mps-on-demand", "dense")

# Every accepted key with its default; None marks a required key.
SCHEMA = {
    "model": {"N": None, "J": "1.0", "g": "-1.05", "h": "0.5", "observable": "m_z"},
    "filter": {
        "energies": "",
        "e_over_n": "",
        "e_scan": "",
        "delta": "",
        "alpha": "",
        "x": str(DEFAULT_X),
        "preset": "",
    },
    "evolution": {
        "dt": str(DEFAULT_DT),
        "max_bond": str(DEFAULT_MAX_BOND),
        "sv_cutoff": str(DEFAULT_SV_CUTOFF),
        "backend": "mpo-cache",
        "snap_dt": "true",
        "error_ceiling": str(DEFAULT_ERROR_CEILING),
        "dbeta": str(DEFAULT_DBETA),
        "memory_budget_mb": str(DEFAULT_MEMORY_BUDGET_MB),
        "cache_dir": "",
        "method": "zipup",
    },
    "sampler": {
        "n_samples": str(DEFAULT_N_SAMPLES),
        "burn_in": str(DEFAULT_BURN_IN),
        "proposal": "",
        "cutoff_rel": "",
        "n_chains": "1",
        "batches": str(DEFAULT_BATCHES),
        "basis": "computational",
        "seed_bond": "2",
        "trace": "false",
    },
    "state_filter": {
        "bond_dims": "1,2,4",
        "max_sweeps": str(DEFAULT_MAX_SWEEPS),
        "tol": str(DEFAULT_SWEEP_TOL),
    },
    "run": {
        "mode": None,
        "output": DEFAULT_OUTPUT_DIR,
        "rng_seed": "0",
        "workers": "1",
        "thermal_method": "ed",
        "window": str(DEFAULT_WINDOW),
        "dump_series": "false",
    },
}

# Filter-parameter regimes: direct trace, Monte Carlo with delta ~ sqrt(N) and a
# cutoff, Monte Carlo with constant delta and no cutoff, and state filtering.
PRESETS = {
    "trace": {"delta": "0.5*sqrtN", "alpha": "full-spectrum", "cutoff_rel": str(DEFAULT_CUTOFF_REL)},
    "mc-sqrtN": {"delta": "sqrtN", "alpha": "full-spectrum", "cutoff_rel": str(DEFAULT_CUTOFF_REL)},
    "mc-const": {"delta": "1.0", "alpha": "6*sqrtN", "cutoff_rel": "0.0"},
    "state": {"delta": "from-state", "alpha": "from-state", "cutoff_rel": str(DEFAULT_CUTOFF_REL)},
}

MODE_PRESETS = {
    "trace-scan": "trace",
    "mc": "mc-sqrtN",
    "state-filter": "state",
    "ed-check": "trace",
    "gibbs-ref": "trace",
}

DEFAULT_SCANS = {"trace-scan": "-1.0:1.0:21", "ed-check": "-0.6:0.6:7"}


@dataclass(frozen=True)
class ModelBlock:
    N: int
    J: float
    g: float
    h: float
    observable: str

    def spec(self):
        return IsingSpec(N=self.N, J=self.J, g=self.g, h=self.h)


@dataclass(frozen=True)
class FilterBlock:
    energies: tuple
    delta: float
    alpha: float
    x: float
    preset: str
    delta_rule: str
    alpha_rule: str


@dataclass(frozen=True)
class EvolutionBlock:
    dt: float
    max_bond: int
    sv_cutoff: float
    backend: str
    snap_dt: bool
    error_ceiling: float
    dbeta: float
    memory_budget_mb: float
    cache_dir: str
    method: str


@dataclass(frozen=True)
class SamplerBlock:
    n_samples: int
    burn_in: int
    proposal: str
    cutoff_rel: float
    n_chains: int
    batches: int
    basis: str
    seed_bond: int
    trace: bool


@dataclass(frozen=True)
class StateFilterBlock:
    bond_dims: tuple
    max_sweeps: int
    tol: float


@dataclass(frozen=True)
class RunBlock:
    mode: str
    output: str
    rng_seed: int
    workers: int
    thermal_method: str
    window: float
    dump_series: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run: every rule already turned into a number."""

    model: ModelBlock
    filter: FilterBlock
    evolution: EvolutionBlock
    sampler: SamplerBlock
    state_filter: StateFilterBlock
    run: RunBlock

    @property
    def mode(self):
        return self.run.mode

    @property
    def energies(self):
        return self.filter.energies

    def spec(self):
        return self.model.spec()

    def filter_params(self, E):
        return make_filter_params(E, self.filter.delta, self.filter.alpha, self.filter.x)

    def sampler_config(self):
        s = self.sampler
        return SamplerConfig(
            n_samples=s.n_samples,
            burn_in=s.burn_in,
            proposal=s.proposal,
            cutoff_rel=s.cutoff_rel,
            rng_seed=self.run.rng_seed,
            backend=self.evolution.backend,
            batches=s.batches,
            n_chains=s.n_chains,
            keep_trace=s.trace,
        )

    def with_overrides(self, output=None, rng_seed=None, workers=None):
        """Copy with command-line overrides applied."""
        changes = {}
        if output is not None:
            changes["output"] = output
        if rng_seed is not None:
            changes["rng_seed"] = int(rng_seed)
        if workers is not None:
            changes["workers"] = int(workers)
        return replace(self, run=replace(self.run, **changes)) if changes else self

    def echo(self):
        """Resolved numbers as plain JSON-serialisable data."""
        data = asdict(self)
        data["filter"]["energies"] = list(self.filter.energies)
        data["state_filter"]["bond_dims"] = list(self.state_filter.bond_dims)
        return data

    def config_hash(self):
        """Hash of everything that influences the numbers (not output paths, workers or debug dumps)."""
        data = self.echo()
        data["run"] = {k: v for k, v in data["run"].items() if k not in ("output", "workers", "dump_series")}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


def _read_sections(text):
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as error:
        raise RuleUnresolvable(f"malformed configuration: {error}") from error
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise UnknownKey(f"unknown section [{section}]; known: {', '.join(SCHEMA)}")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise UnknownKey(f"unknown key {key!r} in [{section}]; known: {', '.join(SCHEMA[section])}")
            values[(section, key)] = raw.strip()
    return values


def _number(text, kind, name):
    try:
        return kind(text)
    except ValueError:
        raise RuleUnresolvable(f"{name} must be a number, got {text!r}")


def _energies(values, N, mode):
    given = [key for key in ("energies", "e_over_n", "e_scan") if values.get(("filter", key))]
    if len(given) > 1:
        raise RuleUnresolvable(f"give only one of energies, e_over_n, e_scan (got {', '.join(given)})")
    if not given:
        if mode not in DEFAULT_SCANS:
            raise MissingRequired(f"mode {mode} needs [filter] energies, e_over_n or e_scan")
        return tuple(N * e for e in parse_scan(DEFAULT_SCANS[mode]))
    key = given[0]
    text = values[("filter", key)]
    if key == "energies":
        return parse_float_list(text, key)
    densities = parse_float_list(text, key) if key == "e_over_n" else parse_scan(text, key)
    return tuple(N * e for e in densities)


def _filter_block(values, model, mode):
    preset = values.get(("filter", "preset")) or MODE_PRESETS[mode]
    if preset not in PRESETS:
        raise RuleUnresolvable(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
    delta_rule = values.get(("filter", "delta")) or PRESETS[preset]["delta"]
    alpha_rule = values.get(("filter", "alpha")) or PRESETS[preset]["alpha"]
    x = _number(values.get(("filter", "x"), SCHEMA["filter"]["x"]), float, "x")
    N = model.N
    if delta_rule == "from-state":
        delta = alpha = math.nan
    else:
        delta = parse_rule(delta_rule, N, "delta")
        if not delta > 0:
            raise RuleUnresolvable(f"delta must be positive, got {delta_rule!r}")
        if alpha_rule == "full-spectrum":
            alpha = full_spectrum_alpha(model.spec())
        elif alpha_rule == "3max":
            alpha = choose_alpha(abs(model.g), N, delta)
        elif alpha_rule == "from-state":
            raise RuleUnresolvable("alpha = from-state needs delta = from-state")
        else:
            alpha = parse_rule(alpha_rule, N, "alpha")
    return FilterBlock(
        energies=_energies(values, N, mode),
        delta=delta,
        alpha=alpha,
        x=x,
        preset=preset,
        delta_rule=delta_rule,
        alpha_rule=alpha_rule,
    )


def parse_config(text):
    """
    Parse and resolve a run configuration.

    Args:
        text (str): INI text with the sections and keys listed in ``SCHEMA``.

    Returns:
        RunConfig: Fully resolved configuration.

    Raises:
        UnknownKey: Unknown section or key (named in the message).
        MissingRequired: A required key is absent.
        RuleUnresolvable: A value or rule cannot be turned into a number.
    """
    values = _read_sections(text)
    for section, keys in SCHEMA.items():
        for key, default in keys.items():
            if default is None and (section, key) not in values:
                raise MissingRequired(f"[{section}] {key} is required")

    def get(section, key):
        return values.get((section, key), SCHEMA[section][key])

    mode = get("run", "mode")
    if mode not in MODES:
        raise RuleUnresolvable(f"unknown mode {mode!r}; known: {', '.join(MODES)}")
    observable = get("model", "observable")
    if observable not in OBSERVABLES:
        raise RuleUnresolvable(f"unknown observable {observable!r}")
    model = ModelBlock(
        N=_number(get("model", "N"), int, "N"),
        J=_number(get("model", "J"), float, "J"),
        g=_number(get("model", "g"), float, "g"),
        h=_number(get("model", "h"), float, "h"),
        observable=observable,
    )
    if model.N < 1:
        raise RuleUnresolvable(f"N must be positive, got {model.N}")
    filter_block = _filter_block(values, model, mode)

    backend = get("evolution", "backend")
    if backend not in BACKENDS:
        raise RuleUnresolvable(f"unknown backend {backend!r}; known: {', '.join(BACKENDS)}")
    evolution = EvolutionBlock(
        dt=_number(get("evolution", "dt"), float, "dt"),
        max_bond=_number(get("evolution", "max_bond"), int, "max_bond"),
        sv_cutoff=_number(get("evolution", "sv_cutoff"), float, "sv_cutoff"),
        backend=backend,
        snap_dt=parse_bool(get("evolution", "snap_dt"), "snap_dt"),
        error_ceiling=_number(get("evolution", "error_ceiling"), float, "error_ceiling"),
        dbeta=_number(get("evolution", "dbeta"), float, "dbeta"),
        memory_budget_mb=_number(get("evolution", "memory_budget_mb"), float, "memory_budget_mb"),
        cache_dir=get("evolution", "cache_dir"),
        method=get("evolution", "method"),
    )

    basis = get("sampler", "basis")
    if basis not in BASIS_KINDS:
        raise RuleUnresolvable(f"unknown basis {basis!r}; known: {', '.join(BASIS_KINDS)}")
    proposal = get("sampler", "proposal") or (
        "single-site-flip" if basis == "computational" else "single-site-pauli"
    )
    cutoff_text = get("sampler", "cutoff_rel") or PRESETS[filter_block.preset]["cutoff_rel"]
    sampler = SamplerBlock(
        n_samples=_number(get("sampler", "n_samples"), int, "n_samples"),
        burn_in=_number(get("sampler", "burn_in"), int, "burn_in"),
        proposal=proposal,
        cutoff_rel=_number(cutoff_text, float, "cutoff_rel"),
        n_chains=_number(get("sampler", "n_chains"), int, "n_chains"),
        batches=_number(get("sampler", "batches"), int, "batches"),
        basis=basis,
        seed_bond=_number(get("sampler", "seed_bond"), int, "seed_bond"),
        trace=parse_bool(get("sampler", "trace"), "trace"),
    )
    state_filter = StateFilterBlock(
        bond_dims=parse_int_list(get("state_filter", "bond_dims"), "bond_dims"),
        max_sweeps=_number(get("state_filter", "max_sweeps"), int, "max_sweeps"),
        tol=_number(get("state_filter", "tol"), float, "tol"),
    )
    thermal_method = get("run", "thermal_method")
    if thermal_method not in ("ed", "gibbs-mpo"):
        raise RuleUnresolvable(f"thermal_method must be ed or gibbs-mpo, got {thermal_method!r}")
    run = RunBlock(
        mode=mode,
        output=get("run", "output"),
        rng_seed=_number(get("run", "rng_seed"), int, "rng_seed"),
        workers=_number(get("run", "workers"), int, "workers"),
        thermal_method=thermal_method,
        window=_number(get("run", "window"), float, "window"),
        dump_series=parse_bool(get("run", "dump_series"), "dump_series"),
    )
    return RunConfig(model, filter_block, evolution, sampler, state_filter, run)


def load_config(path):
    with open(path, encoding="utf-8") as handle:
        return parse_config(handle.read())


def defaults_help():
    """Lines documenting every key and its default, for ``--help``."""
    lines = []
    for section, keys in SCHEMA.items():
        entries = ", ".join(f"{key}={'<required>' if default is None else (default or '<auto>')}"
                            for key, default in keys.items())
        lines.append(f"[{section}] {entries}")
    lines.append("presets: " + "; ".join(f"{name}: delta={p['delta']}, alpha={p['alpha']}"
                                          for name, p in PRESETS.items()))
    return "\n".join(lines)
