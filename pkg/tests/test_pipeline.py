"""Tests for run orchestration and output files."""

import json
import os

import numpy as np
import pytest

from src.controllers.ed_oracle import ed_filter_values, ed_microcanonical, ed_spectrum
from src.controllers.pipeline import (
    SERIES_COLUMNS,
    micro_reference,
    oracle_evolution_config,
    run_ed_check,
    run_pipeline,
    summarize,
    write_outputs,
)
from src.models.config import parse_config
from src.models.filter_params import full_spectrum_alpha
from src.utils.database import recent_runs
from src.utils.errors import OutOfThermalRange, SizeTooLarge


def _config(body, mode):
    return parse_config(f"[model]\nN = 4\n{body}\n[run]\nmode = {mode}\n")


def test_trace_scan_rows(small_spec):
    """Dense trace-scan rows equal the exact cosine-filter ratios and carry a budget."""
    cfg = _config("[filter]\nenergies = -1.0, 0.5\ndelta = 1.0\n[evolution]\nbackend = dense", "trace-scan")
    record = run_pipeline(cfg)
    sd = ed_spectrum(small_spec, "m_z")
    fp = cfg.filter_params(0.0)
    assert fp.alpha == pytest.approx(full_spectrum_alpha(small_spec))
    assert [row["E"] for row in record.rows] == [-1.0, 0.5]
    for row in record.rows:
        exact = ed_filter_values(sd, row["E"], 1.0, kind="cosine", fp=fp)
        assert row["value"] == pytest.approx(exact.trace_ratio, abs=1e-8)
        assert row["dos"] == pytest.approx(exact.dos, rel=1e-8)
        assert row["budget"] == pytest.approx(fp.tail_mass)
        assert row["E_over_N"] == pytest.approx(row["E"] / 4)
    assert record.diagnostics["R"] == fp.R_eff
    assert record.wall_clock > 0


def test_monte_carlo_rows(tmp_path):
    """Each energy gets an estimate with its standard error and kept chain traces."""
    cfg = _config(
        "[filter]\nenergies = 0.0\ndelta = 1.0\n[evolution]\nbackend = dense\n"
        "[sampler]\nn_samples = 2000\nburn_in = 100\nbatches = 20\ntrace = true",
        "mc",
    )
    record = run_pipeline(cfg)
    row = record.rows[0]
    assert row["stderr"] > 0
    assert -1.0 <= row["value"] <= 1.0
    assert 0.0 < row["acceptance_rate"] <= 1.0
    assert "chain_trace_000" in record.traces
    paths = write_outputs(record, str(tmp_path / "mc"))
    assert os.path.exists(paths["chain_trace_000"])


def test_state_filter_rows():
    """One row per bond dimension with the thermal reference attached."""
    cfg = _config("[filter]\nenergies = -2.0\n[evolution]\nbackend = dense\n[state_filter]\nbond_dims = 1,2", "state-filter")
    record = run_pipeline(cfg)
    assert [row["D0"] for row in record.rows] == [1, 2]
    assert all(row["budget"] == 0.0 for row in record.rows)
    assert all(np.isfinite(row["thermal_ref"]) for row in record.rows)


def test_gibbs_reference_rows():
    """The thermal point reaches the requested energy."""
    record = run_pipeline(_config("[filter]\nenergies = -1.5, 1.0", "gibbs-ref"))
    cold, hot = record.rows
    assert cold["beta"] > 0 > hot["beta"]
    assert cold["budget"] < 1e-6


def test_errors_carry_mode_and_energy():
    """Module errors are re-raised with the run context."""
    with pytest.raises(OutOfThermalRange) as info:
        run_pipeline(_config("[filter]\nenergies = -100.0", "gibbs-ref"))
    assert info.value.context["mode"] == "gibbs-ref"
    assert info.value.context["E"] == -100.0
    assert "mode=gibbs-ref" in str(info.value)


def test_ed_check_passes_on_small_chain():
    """Every oracle assertion holds at N=4."""
    cfg = _config("", "ed-check")
    rows = run_ed_check(cfg)
    names = [row["check"] for row in rows]
    assert "trace H / 2^N" in names
    assert "hamiltonian mpo vs sparse" in names
    assert any(name.startswith("mpo trace ratio") for name in names)
    assert any(name.startswith("basis sum identity") for name in names)
    failed = [row for row in rows if not row["passed"]]
    assert failed == []


def test_ed_check_size_limit():
    """The oracle refuses chains it cannot diagonalise."""
    cfg = parse_config("[model]\nN = 20\n[run]\nmode = ed-check\n")
    with pytest.raises(SizeTooLarge):
        run_pipeline(cfg)


def test_write_outputs(tmp_path):
    """JSON, CSV and report land in the output directory and the run is recorded."""
    cfg = _config("[filter]\nenergies = -1.0, 0.0\n[evolution]\nbackend = dense", "trace-scan")
    record = run_pipeline(cfg)
    out = str(tmp_path / "scan")
    paths = write_outputs(record, out)
    with open(paths["json"], encoding="utf-8") as handle:
        data = json.load(handle)
    assert data["config_hash"] == cfg.config_hash()
    assert data["config"]["model"]["N"] == 4
    with open(paths["csv"], encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
    assert header == record.columns
    assert os.path.exists(paths["report"])
    runs = recent_runs(path=os.path.join(out, "results.db"))
    assert runs[0]["id"] == paths["run_id"]
    summary = summarize(record)
    assert summary["rows"] == 2
    assert summary["passed"] is True


def test_identical_runs_have_identical_json():
    """Without timing, the record depends only on the configuration."""
    cfg = _config("[filter]\nenergies = 0.0\n[evolution]\nbackend = dense", "trace-scan")
    first = run_pipeline(cfg).to_json(include_timing=False)
    second = run_pipeline(cfg).to_json(include_timing=False)
    assert first == second


def test_trace_scan_reports_microcanonical_reference(small_spec):
    """Trace-scan rows carry the ED window mean at [run] window and its spread."""
    cfg = _config(
        "[filter]\nenergies = -1.0, 0.5\ndelta = 1.0\n[evolution]\nbackend = dense\n[run]\nwindow = 4.0", "trace-scan"
    )
    record = run_pipeline(cfg)
    sd = ed_spectrum(small_spec, "m_z")
    for row in record.rows:
        assert row["micro"] == pytest.approx(ed_microcanonical(sd, row["E"], 4.0))
        assert row["micro_spread"] >= 0.0 or np.isnan(row["micro_spread"])
    assert "micro" in record.columns


def test_state_filter_reports_microcanonical_reference():
    """State-filter rows carry the same window mean for every bond dimension."""
    cfg = _config(
        "[filter]\nenergies = -2.0\n[evolution]\nbackend = dense\n[state_filter]\nbond_dims = 1,2\n[run]\nwindow = 4.0",
        "state-filter",
    )
    first, second = run_pipeline(cfg).rows
    assert np.isfinite(first["micro"])
    assert first["micro"] == second["micro"]


def test_micro_reference_full_window(small_spec):
    """A window covering the whole spectrum gives tr(O)/2^N with no spread."""
    sd = ed_spectrum(small_spec, "m_z")
    micro, spread = micro_reference(sd, 0.0, 1e3)
    assert micro == pytest.approx(np.mean(sd.obs_diag))
    assert spread == pytest.approx(0.0, abs=1e-15)


def test_micro_reference_empty_windows(small_spec):
    """Windows far outside the spectrum report NaN."""
    sd = ed_spectrum(small_spec, "m_z")
    micro, spread = micro_reference(sd, 100.0, 0.5)
    assert np.isnan(micro)
    assert np.isnan(spread)


def test_series_dump(tmp_path):
    """dump_series writes the trace amplitude series next to the results."""
    cfg = _config(
        "[filter]\nenergies = 0.0\ndelta = 1.0\n[evolution]\nbackend = dense\n[run]\ndump_series = true", "trace-scan"
    )
    record = run_pipeline(cfg)
    fp = cfg.filter_params(0.0)
    rows = record.traces["series_trace"]
    assert len(rows) == 2 * fp.R_eff + 1
    assert len(record.traces["series_observable"]) == len(rows)
    center = rows[fp.R_eff]
    assert center["t_m"] == 0.0
    assert center["re_z"] == pytest.approx(16.0)
    assert sum(row["c_m"] for row in rows) == pytest.approx(1.0 - fp.tail_mass, abs=1e-12)
    paths = write_outputs(record, str(tmp_path / "scan"))
    with open(paths["series_trace"], encoding="utf-8") as handle:
        assert handle.readline().strip().split(",") == SERIES_COLUMNS


def test_series_dump_does_not_change_hash():
    """The debug dump leaves the configuration hash alone."""
    plain = _config("[filter]\nenergies = 0.0", "trace-scan")
    dumped = _config("[filter]\nenergies = 0.0\n[run]\ndump_series = true", "trace-scan")
    assert plain.config_hash() == dumped.config_hash()
    assert dumped.run.dump_series is True


def test_oracle_policy_is_exact_when_it_fits():
    """ed-check lifts max_bond to 4^(N/2) up to 256 and keeps it otherwise."""
    eight = parse_config("[model]\nN = 8\n[run]\nmode = ed-check\n")
    assert oracle_evolution_config(eight).policy.max_bond == 256
    ten = parse_config("[model]\nN = 10\n[run]\nmode = ed-check\n")
    assert oracle_evolution_config(ten).policy.max_bond == ten.evolution.max_bond
    small = _config("[evolution]\nmax_bond = 8", "ed-check")
    assert oracle_evolution_config(small).policy.max_bond == 16


def test_ed_check_small_chain_skips_microcanonical_checks():
    """Below N=8 the window checks are skipped but window sensitivity is still reported."""
    cfg = _config("", "ed-check")
    diagnostics = {}
    names = [row["check"] for row in run_ed_check(cfg, diagnostics)]
    assert not any(name.startswith("microcanonical") for name in names)
    assert set(diagnostics["micro_window"]) == {f"{e!r}" for e in cfg.energies}
