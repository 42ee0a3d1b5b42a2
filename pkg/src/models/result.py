"""Result record of one pipeline run."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..utils.constants import CODE_VERSION
from ..utils.errors import StructurallyInvalid

# CSV columns per mode, in output order.
COLUMNS = {
    "trace-scan": [
        "E", "E_over_N", "value", "dos", "dos_weight", "imag_residue",
        "truncation_error", "budget", "micro", "micro_spread",
    ],
    "mc": [
        "E", "E_over_N", "value", "stderr", "acceptance_rate", "cutoff_rate",
        "max_imag_residue", "seed_objective", "truncation_error", "budget",
    ],
    "state-filter": [
        "E", "E_over_N", "D0", "sigma_D", "delta", "alpha", "value", "thermal_ref",
        "abs_gap", "raw_value", "E_mean", "truncation_error", "budget", "micro", "micro_spread",
    ],
    "gibbs-ref": ["E", "E_over_N", "beta", "value", "energy", "budget"],
    "ed-check": ["check", "passed", "measured", "bound"],
}


def _plain(value):
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class ResultRecord:
    """Rows of one run plus the resolved configuration they came from.

    Every numeric row carries a ``stderr`` (stochastic) or a ``budget``
    (deterministic truncation and tail error); ed-check rows carry their bound.
    """

    mode: str
    config_hash: str
    config_echo: dict
    rows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    code_version: str = CODE_VERSION

    def __post_init__(self):
        if self.mode not in COLUMNS:
            raise StructurallyInvalid(f"unknown mode {self.mode!r}")
        for row in self.rows:
            self.check_row(row)

    def check_row(self, row):
        if self.mode == "ed-check":
            return
        if row.get("stderr") is None and row.get("budget") is None:
            raise StructurallyInvalid(f"row at E={row.get('E')} has neither stderr nor budget")

    def add_row(self, row):
        self.check_row(row)
        self.rows.append(row)

    @property
    def columns(self):
        return COLUMNS[self.mode]

    @property
    def passed(self):
        """All ed-check assertions hold (always True for other modes)."""
        return all(row["passed"] for row in self.rows) if self.mode == "ed-check" else True

    def to_dict(self, include_timing=True):
        data = {
            "mode": self.mode,
            "config_hash": self.config_hash,
            "config": self.config_echo,
            "rows": self.rows,
            "diagnostics": self.diagnostics,
            "code_version": self.code_version,
        }
        if include_timing:
            data["wall_clock"] = self.wall_clock
        return _plain(data)

    def to_json(self, include_timing=True):
        """Sorted-key JSON; identical for identical runs when timing is excluded."""
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"
