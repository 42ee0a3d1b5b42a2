"""Utility functions for parsing rules and formatting numbers, CSV files and text reports."""

import csv
import math
import os
import re

import numpy as np
from tabulate import tabulate

from .errors import RuleUnresolvable

_RULE = re.compile(r"^\s*(?:(?P<coef>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\*\s*)?(?P<unit>sqrtN|N)\s*$")


def parse_rule(text, N, name="value"):
    """
    Resolve a size rule to a number.

    Args:
        text (str): A plain number, ``sqrtN``, ``N`` or ``c*sqrtN`` / ``c*N``.
        N (int): Number of sites.
        name (str): Key name used in error messages.

    Returns:
        float: The resolved value.

    Raises:
        RuleUnresolvable: If the text is none of the accepted forms.
    """
    text = str(text).strip()
    try:
        return float(text)
    except ValueError:
        pass
    match = _RULE.match(text)
    if match is None:
        raise RuleUnresolvable(f"cannot resolve {name} = {text!r}; expected a number, c*sqrtN or c*N")
    coef = float(match.group("coef")) if match.group("coef") else 1.0
    unit = math.sqrt(N) if match.group("unit") == "sqrtN" else float(N)
    return coef * unit


def parse_float_list(text, name="value"):
    """Parse ``"0.1, 0.2"`` into a tuple of floats."""
    try:
        return tuple(float(item) for item in str(text).split(",") if item.strip())
    except ValueError:
        raise RuleUnresolvable(f"{name} must be a comma-separated list of numbers, got {text!r}")


def parse_int_list(text, name="value"):
    try:
        return tuple(int(item) for item in str(text).split(",") if item.strip())
    except ValueError:
        raise RuleUnresolvable(f"{name} must be a comma-separated list of integers, got {text!r}")


def parse_scan(text, name="e_scan"):
    """Parse ``start:stop:count`` into an evenly spaced grid (both ends included)."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise RuleUnresolvable(f"{name} must read start:stop:count, got {text!r}")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise RuleUnresolvable(f"{name} must read start:stop:count, got {text!r}")
    if count < 1:
        raise RuleUnresolvable(f"{name} needs at least one point")
    return tuple(float(v) for v in np.linspace(start, stop, count))


def parse_bool(text, name="value"):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise RuleUnresolvable(f"{name} must be true or false, got {text!r}")


def format_value(value, digits=6):
    """Format a number for tables; NaN and None print as '-'."""
    if value is None:
        return "-"
    if isinstance(value, (int, np.integer)):
        return str(value)
    if not np.isfinite(value):
        return "-"
    return f"{value:.{digits}g}"


def format_uncertainty(value, uncertainty, digits=6):
    """Format ``value ± uncertainty``."""
    if uncertainty is None or not np.isfinite(uncertainty):
        return format_value(value, digits)
    return f"{format_value(value, digits)} ± {uncertainty:.2g}"


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, rows, columns):
    """
    Write dict rows to a UTF-8, LF-terminated CSV file with a fixed header.

    Args:
        path (str): Output file.
        rows (list[dict]): Rows; missing keys are written as empty cells.
        columns (list[str]): Header, in order.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row.get(column)) for column in columns])


def render_report(rows, columns, title=None):
    """Plain-text table of dict rows via tabulate."""
    body = tabulate(
        [[format_value(row.get(column)) if not isinstance(row.get(column), str) else row.get(column)
          for column in columns] for row in rows],
        headers=columns,
        tablefmt="github",
    )
    return f"{title}\n\n{body}\n" if title else f"{body}\n"
