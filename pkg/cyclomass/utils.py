import logging
from typing import Dict, Iterable, List, Optional

import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

console = Console(record=True, width=110)


def setup_logging(verbose: bool = False) -> None:
    """
    Route the package loggers through the shared console.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "[green]yes[/green]" if value else "[red]no[/red]"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def print_frame(frame: pd.DataFrame, title: str, max_rows: int = 40) -> None:
    """
    Print a DataFrame as a rich table, truncated to `max_rows`.
    """
    if frame.empty:
        console.print(f"[yellow]{title}: nothing to show.[/yellow]")
        return

    table = Table(title=title)
    for col in frame.columns:
        justify = "right" if pd.api.types.is_numeric_dtype(frame[col]) else "left"
        table.add_column(str(col), justify=justify)

    for _, row in frame.head(max_rows).iterrows():
        table.add_row(*[_fmt(v) for v in row.tolist()])

    console.print(table)
    if len(frame) > max_rows:
        console.print(f"[italic]... {len(frame) - max_rows} more rows[/italic]")


def print_summary(title: str, items: Dict[str, object], ok: Optional[bool] = None) -> None:
    lines: List[str] = [f"[bold]{k}[/bold]: {_fmt(v)}" for k, v in items.items()]
    style = "green" if ok else ("red" if ok is False else "blue")
    console.print(Panel("\n".join(lines), title=title, border_style=style))


def print_checks(rows: Iterable[Dict[str, object]], title: str = "Acceptance") -> None:
    table = Table(title=title)
    table.add_column("Suite", style="cyan")
    table.add_column("Check")
    table.add_column("Value", justify="right")
    table.add_column("Bound", justify="right")
    table.add_column("Result")

    for row in rows:
        verdict = "[green]PASS[/green]" if row["passed"] else "[red]FAIL[/red]"
        table.add_row(str(row["suite"]), str(row["check"]), _fmt(row["value"]), str(row["bound"]), verdict)

    console.print(table)
