"""Table view components for run results, oracle checks and the operator cache."""

from rich import box
from rich.console import Console
from rich.table import Table

from ..utils.constants import STATUS_EMOJIS
from ..utils.formatting import format_uncertainty, format_value

console = Console()


def show_results(record):
    """Display the rows of a run."""
    if not record.rows:
        console.print("[yellow]No results[/yellow]")
        return
    if record.mode == "ed-check":
        show_checks(record)
        return

    table = Table(title=f"{record.mode} [dim]{record.config_hash}[/dim]", box=box.ROUNDED)
    table.add_column("E", justify="right", style="cyan")
    table.add_column("E/N", justify="right", style="cyan")
    extra = [c for c in record.columns if c not in ("E", "E_over_N", "value", "stderr", "budget")]
    if record.mode == "state-filter":
        extra = ["D0", "sigma_D", "thermal_ref", "abs_gap", "micro"]
    table.add_column("Value", justify="right", style="bold")
    for column in extra:
        table.add_column(column, justify="right")
    table.add_column("Budget", justify="right", style="dim")

    for row in record.rows:
        table.add_row(
            format_value(row["E"]),
            format_value(row["E_over_N"], 4),
            format_uncertainty(row.get("value"), row.get("stderr")),
            *[format_value(row.get(column)) for column in extra],
            format_value(row.get("budget"), 2),
        )
    console.print(table)


def show_checks(record):
    """Display ed-check assertions with pass/fail markers."""
    table = Table(title="Oracle checks", box=box.ROUNDED)
    table.add_column("", justify="center")
    table.add_column("Check", style="magenta")
    table.add_column("Measured", justify="right")
    table.add_column("Bound", justify="right", style="dim")

    for row in record.rows:
        table.add_row(
            STATUS_EMOJIS["pass" if row["passed"] else "fail"],
            row["check"],
            format_value(row["measured"], 3),
            format_value(row["bound"], 3),
        )
    console.print(table)
    failed = sum(not row["passed"] for row in record.rows)
    if failed:
        console.print(f"[red]{failed} of {len(record.rows)} checks failed[/red]")
    else:
        console.print(f"[green]All {len(record.rows)} checks passed[/green]")


def show_cache(entries, root):
    """Display cached operator families."""
    if not entries:
        console.print(f"[yellow]No cached families in {root}[/yellow]")
        return

    table = Table(title=f"Operator cache {root}", box=box.ROUNDED)
    table.add_column("Family", style="cyan")
    table.add_column("Operators", justify="right")
    table.add_column("Size", justify="right")
    table.add_column("dt", justify="right")
    table.add_column("Policy", style="italic")

    for entry in entries:
        table.add_row(
            entry["family"],
            str(entry["count"]),
            f"{entry['bytes'] / 1024**2:.1f} MB",
            entry["dt"],
            entry["policy"],
        )
    console.print(table)


def show_recent_runs(runs):
    """Display the latest runs from the result store."""
    if not runs:
        console.print("[yellow]No runs recorded[/yellow]")
        return

    table = Table(title="Recent Runs", box=box.ROUNDED)
    table.add_column("ID", justify="right", style="cyan")
    table.add_column("Mode", style="magenta")
    table.add_column("Model")
    table.add_column("Rows", justify="right")
    table.add_column("Status", justify="center")
    table.add_column("Wall clock", justify="right")
    table.add_column("Created", style="blue")

    for run in runs:
        table.add_row(
            str(run["id"]),
            run["mode"],
            run["model"],
            str(run["rows"]),
            STATUS_EMOJIS["pass" if run["passed"] else "fail"],
            f"{run['wall_clock']:.1f} s",
            run["created"],
        )
    console.print(table)
