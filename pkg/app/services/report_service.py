"""
Report Service
InequalityReport / RunResult 의 CSV, JSON 출력과 margin 테이블
"""

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd
from rich.console import Console
from rich.table import Table

from app.models.schemas import InequalityReport, RunResult, Spectrum

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["name", "k", "lhs", "rhs", "margin", "satisfied"]


def reports_frame(reports: Iterable[InequalityReport]) -> pd.DataFrame:
    rows = [{col: getattr(r, col) for col in CSV_COLUMNS} for r in reports]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def spectrum_frame(spectrum: Spectrum) -> pd.DataFrame:
    return pd.DataFrame(
        [{"eigenvalue": e.value, "multiplicity": e.multiplicity} for e in spectrum.entries],
        columns=["eigenvalue", "multiplicity"],
    )


def write_csv(result: RunResult, path: Union[str, Path]) -> Path:
    """
    리포트가 있으면 name,k,lhs,rhs,margin,satisfied, 없고 스펙트럼만 있으면 eigenvalue,multiplicity
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if result.reports or result.spectrum is None:
        frame = reports_frame(result.reports)
    else:
        frame = spectrum_frame(result.spectrum)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("wrote %d rows to %s", len(frame), path)
    return path


def write_json(result: RunResult, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def read_reports(path: Union[str, Path]) -> List[InequalityReport]:
    """write_csv 로 만든 CSV 를 다시 읽음 (tol 은 기본값으로 재계산)"""
    frame = pd.read_csv(path)
    return [
        InequalityReport.build(row["name"], int(row["k"]), float(row["lhs"]), float(row["rhs"]))
        for _, row in frame.iterrows()
    ]


# ========== Console ==========

def _fmt(value: float) -> str:
    return f"{value:.10g}"


def margin_table(reports: Sequence[InequalityReport], title: str = "Inequality margins") -> Table:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    for col, justify in (("name", "left"), ("k", "right"), ("lhs", "right"), ("rhs", "right"), ("margin", "right"), ("status", "center")):
        table.add_column(col, justify=justify)
    for r in reports:
        if not r.applicable:
            status = "[dim]n/a[/dim]"
        elif r.informational:
            status = "[cyan]info[/cyan]" if r.satisfied else "[yellow]info ✗[/yellow]"
        elif r.satisfied:
            status = "[yellow]≈[/yellow]" if r.near_equality else "[green]✓[/green]"
        else:
            status = "[red]✗[/red]"
        table.add_row(r.name, str(r.k), _fmt(r.lhs), _fmt(r.rhs), _fmt(r.margin), status)
    return table


def spectrum_table(spectrum: Spectrum) -> Table:
    table = Table(title=f"{spectrum.convention.value} spectrum, n = {spectrum.dimension}", header_style="bold magenta")
    table.add_column("eigenvalue", justify="right")
    table.add_column("multiplicity", justify="right")
    for e in spectrum.entries:
        table.add_row(_fmt(e.value), str(e.multiplicity))
    return table


def print_result(result: RunResult, console: Optional[Console] = None) -> None:
    console = console or Console()
    if result.spectrum is not None:
        console.print(spectrum_table(result.spectrum))
    if result.reports:
        console.print(margin_table(result.reports))
    if result.balance is not None:
        console.print(f"xi = {result.balance['xi']}  residual = {result.balance['residual']:.3e}")
    if result.trial is not None:
        console.print(
            f"gap = {_fmt(result.trial.gap_lhs)}  certificate = {_fmt(result.trial.certificate)}  "
            f"|F(q)| = {result.trial.field_norm:.2e}"
        )
    violations = len(result.violations)
    if violations:
        console.print(f"[red]{violations} violation(s)[/red]")
