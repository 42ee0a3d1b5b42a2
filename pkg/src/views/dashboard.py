"""Dashboard view component."""

from datetime import datetime

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..utils.constants import STATUS_EMOJIS
from ..utils.database import recent_runs, run_totals
from ..utils.formatting import format_value
from .tables import show_recent_runs

console = Console()


def show_run_summary(record, paths=None):
    """Panel with the headline of a finished run."""
    table = Table(box=None, show_header=False, width=70)
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="yellow")

    model = record.config_echo.get("model", {})
    table.add_row("Mode", f"[bold]{record.mode}[/bold]")
    table.add_row("Model", f"N={model.get('N')}  J={model.get('J')}  g={model.get('g')}  h={model.get('h')}")
    table.add_row("Rows", f"[bold]{len(record.rows)}[/bold]")
    if record.mode == "ed-check":
        status = "pass" if record.passed else "fail"
        color = "green" if record.passed else "red"
        table.add_row("Status", f"{STATUS_EMOJIS[status]} [{color}]{status}[/{color}]")
    budgets = [row.get("budget") for row in record.rows if row.get("budget") is not None]
    if budgets:
        table.add_row("Largest budget", format_value(max(budgets), 2))
    table.add_row("Wall clock", f"{record.wall_clock:.2f} s")
    if paths:
        table.add_row("Output", paths["csv"])

    console.print(
        Panel(
            table,
            title=f"[bold cyan]Run {record.config_hash}[/bold cyan]",
            subtitle=f"[dim]Finished: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}[/dim]",
        )
    )


def show_dashboard(db_path=None, limit=10):
    """Run history from the result store."""
    totals, failed = run_totals(db_path)

    table = Table(box=None, show_header=False, width=60)
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="yellow")
    table.add_row("Runs", f"[bold]{sum(totals.values())}[/bold] recorded")
    for mode, count in sorted(totals.items()):
        table.add_row(f"  {mode}", str(count))
    color = "red" if failed else "green"
    table.add_row("Failed checks", f"[{color}]{failed}[/{color}]")

    console.print(
        Panel(
            table,
            title="[bold cyan]Spectra Filter Dashboard[/bold cyan]",
            subtitle=f"[dim]Updated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}[/dim]",
        )
    )
    show_recent_runs(recent_runs(limit, db_path))
