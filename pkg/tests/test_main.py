"""Tests for the command-line entry point."""

import json
import os

import pytest

from main import build_parser, main
from src.utils.constants import EXIT_CACHE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parser_requires_command():
    """A subcommand is mandatory."""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_ed_check_command(tmp_path):
    """ed-check writes its outputs and exits 0 when every assertion holds."""
    config = _write(tmp_path, "check.ini", "[model]\nN = 4\n[filter]\ne_over_n = -0.2, 0.0, 0.2\n[run]\nmode = ed-check\n")
    out = str(tmp_path / "out")
    assert main(["--quiet", "ed-check", config, "--out", out]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "result.json"))
    assert os.path.exists(os.path.join(out, "results.db"))
    assert main(["--quiet", "history", "--db", os.path.join(out, "results.db")]) == EXIT_OK


def test_shipped_ed_check_config_passes(tmp_path):
    """configs/ed_check.ini (N=8, default grid) passes every oracle assertion."""
    out = str(tmp_path / "check")
    assert main(["--quiet", "ed-check", os.path.join(CONFIG_DIR, "ed_check.ini"), "--out", out]) == EXIT_OK
    with open(os.path.join(out, "result.json"), encoding="utf-8") as handle:
        data = json.load(handle)
    names = [row["check"] for row in data["rows"]]
    assert "microcanonical: delta=0.5 vs delta=4" in names
    assert "median trace gap vs state gap" in names
    assert all(row["passed"] for row in data["rows"])
    assert len(data["diagnostics"]["state_vs_trace"]) >= 3


def test_configuration_errors_exit_2(tmp_path):
    """Unknown keys and missing files are configuration errors."""
    config = _write(tmp_path, "bad.ini", "[model]\nN = 4\ndeltta = 1\n[run]\nmode = trace-scan\n")
    assert main(["--quiet", "run", config]) == EXIT_CONFIG
    assert main(["--quiet", "run", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_numerical_errors_exit_3(tmp_path):
    """An energy with no temperature is a numerical failure."""
    config = _write(tmp_path, "hot.ini", "[model]\nN = 4\n[filter]\nenergies = 100\n[run]\nmode = gibbs-ref\n")
    assert main(["--quiet", "run", config, "--out", str(tmp_path / "out")]) == EXIT_NUMERICAL


def test_corrupt_cache_exits_4(tmp_path):
    """A damaged cached operator aborts the next run."""
    cache = tmp_path / "cache"
    config = _write(
        tmp_path,
        "scan.ini",
        f"[model]\nN = 4\n[filter]\nenergies = 0.0\nalpha = 3.0\ndelta = 1.0\n"
        f"[evolution]\ncache_dir = {cache}\n[run]\nmode = trace-scan\n",
    )
    out = str(tmp_path / "out")
    assert main(["--quiet", "run", config, "--out", out]) == EXIT_OK
    (family,) = [entry for entry in cache.iterdir() if entry.is_dir()]
    (family / "U_000001.fett").write_bytes(b"broken")
    assert main(["--quiet", "run", config, "--out", out]) == EXIT_CACHE


def test_cache_commands(tmp_path):
    """cache ls and rm work on an empty directory."""
    directory = str(tmp_path / "cache")
    assert main(["--quiet", "cache", "ls", directory]) == EXIT_OK
    assert main(["--quiet", "cache", "rm", directory]) == EXIT_OK
