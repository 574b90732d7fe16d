"""
Command line interface

python -m app.cli spectrum --model round-sphere --dim 3 --count 30
python -m app.cli verify --theorem thm1 --family cos --eps 0.3 --kmax 5
python -m app.cli sweep --theorem thm1 --family cos --eps 0:0.5:0.1 --out-csv sweep.csv
"""

import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console

from app.core.errors import SpectralError, exit_code_for
from app.core.logging import configure_logging
from app.models.schemas import Command
from app.services import run_service

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="ppw",
    help="Spectral gap inequalities on spheres and Euclidean domains",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()

# ========== Shared options ==========

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="flat key = value config file")]
OutCsv = Annotated[Optional[Path], typer.Option("--out-csv", "--out", help="CSV report path")]
OutJson = Annotated[Optional[Path], typer.Option("--out-json", help="JSON report path")]
Seed = Annotated[Optional[int], typer.Option(help="seed for multi-start searches")]
LogLevel = Annotated[str, typer.Option("--log-level", help="DEBUG, INFO, WARNING")]
Dim = Annotated[Optional[str], typer.Option("--dim", help="dimension n")]
ModelOpt = Annotated[Optional[str], typer.Option("--model", help="round-sphere | conformal | rectangle | ball")]
Family = Annotated[Optional[str], typer.Option(help="constant | cos | bump | tabulated")]
Param = Annotated[Optional[str], typer.Option(help="family parameter (start:stop:step in sweeps)")]
Profile = Annotated[Optional[Path], typer.Option(help="theta,f CSV for the tabulated family")]
Mesh = Annotated[Optional[int], typer.Option(help="Sturm-Liouville mesh size")]
Count = Annotated[Optional[int], typer.Option(help="eigenvalues counted with multiplicity")]
Kmax = Annotated[Optional[str], typer.Option(help="largest k checked")]
Theorem = Annotated[Optional[str], typer.Option(help="thm1 | thm1bis | thm2 | thm3 | ehi | ehi_quadratic | dirichlet | gauss_schwarz")]
Sides = Annotated[Optional[List[float]], typer.Option("--side", help="box side (repeat per axis)")]
Radius = Annotated[Optional[str], typer.Option(help="ball radius")]
Kappas = Annotated[Optional[List[float]], typer.Option("--kappa", help="principal curvature (repeat)")]
Tol = Annotated[Optional[float], typer.Option(help="report / balance tolerance")]


def _invoke(command: Command, config: Optional[Path], log_level: str, **flags: Any) -> None:
    configure_logging(log_level)
    file_values: Dict[str, Any] = {}
    try:
        if config is not None:
            file_values = run_service.parse_config_file(config)
        flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()}
        if flags.get("sides") == []:
            flags["sides"] = None
        if flags.get("kappas") == []:
            flags["kappas"] = None
        cfg = run_service.build_config(file_values, command=command.value, **flags)
    except (ValidationError, SpectralError, ValueError, OSError) as exc:
        logger.error("invalid configuration: %s", exc)
        raise typer.Exit(3 if isinstance(exc, OSError) else exit_code_for(exc))
    code = run_service.run(cfg, console=console)
    raise typer.Exit(code)


# ========== Commands ==========

@app.command()
def spectrum(
    config: ConfigOpt = None,
    model: ModelOpt = None,
    dim: Dim = None,
    family: Family = None,
    c: Param = None,
    eps: Param = None,
    center: Param = None,
    width: Param = None,
    height: Param = None,
    profile: Profile = None,
    mesh: Mesh = None,
    count: Count = None,
    sides: Sides = None,
    radius: Radius = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Closed-form or computed spectrum of a model geometry"""
    _invoke(
        Command.SPECTRUM, config, log_level,
        model=model, dim=dim, family=family, c=c, eps=eps, center=center, width=width, height=height,
        profile=profile, mesh=mesh, count=count, sides=sides, radius=radius, out_csv=out_csv, out_json=out_json,
    )


@app.command()
def verify(
    config: ConfigOpt = None,
    theorem: Theorem = None,
    model: ModelOpt = None,
    dim: Dim = None,
    family: Family = None,
    c: Param = None,
    eps: Param = None,
    center: Param = None,
    width: Param = None,
    height: Param = None,
    profile: Profile = None,
    mesh: Mesh = None,
    kmax: Kmax = None,
    vc: Param = None,
    y: Param = None,
    a: Param = None,
    c_iso: Param = None,
    sup_h2: Param = None,
    sides: Sides = None,
    radius: Radius = None,
    kappas: Kappas = None,
    tol: Tol = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Evaluate one theorem or classical inequality and print the margins"""
    _invoke(
        Command.VERIFY, config, log_level,
        theorem=theorem, model=model, dim=dim, family=family, c=c, eps=eps, center=center, width=width,
        height=height, profile=profile, mesh=mesh, kmax=kmax, vc=vc, y=y, a=a, c_iso=c_iso, sup_h2=sup_h2,
        sides=sides, radius=radius, kappas=kappas, tol=tol, out_csv=out_csv, out_json=out_json,
    )


@app.command()
def sweep(
    config: ConfigOpt = None,
    theorem: Theorem = None,
    model: ModelOpt = None,
    dim: Dim = None,
    family: Family = None,
    c: Param = None,
    eps: Param = None,
    center: Param = None,
    width: Param = None,
    height: Param = None,
    mesh: Mesh = None,
    kmax: Kmax = None,
    vc: Param = None,
    y: Param = None,
    a: Param = None,
    c_iso: Param = None,
    sup_h2: Param = None,
    sides: Sides = None,
    radius: Radius = None,
    tol: Tol = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Run verify over a start:stop:step grid of one parameter"""
    _invoke(
        Command.SWEEP, config, log_level,
        theorem=theorem, model=model, dim=dim, family=family, c=c, eps=eps, center=center, width=width,
        height=height, mesh=mesh, kmax=kmax, vc=vc, y=y, a=a, c_iso=c_iso, sup_h2=sup_h2, sides=sides,
        radius=radius, tol=tol, out_csv=out_csv, out_json=out_json,
    )


@app.command()
def balance(
    measure: Annotated[Path, typer.Option(help="CSV with columns x0..xm, weight")],
    config: ConfigOpt = None,
    tol: Tol = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Find the Moebius centre xi balancing a discrete measure"""
    _invoke(Command.BALANCE, config, log_level, measure=measure, tol=tol, out_json=out_json)


@app.command()
def sobolev(
    flavor: Annotated[Optional[str], typer.Option(help="aubin | hebey | ilias_ric | ilias_gen | yamabe")] = None,
    config: ConfigOpt = None,
    model: ModelOpt = None,
    dim: Dim = None,
    family: Family = None,
    c: Param = None,
    eps: Param = None,
    center: Param = None,
    width: Param = None,
    height: Param = None,
    profile: Profile = None,
    mesh: Mesh = None,
    tests: Annotated[Optional[int], typer.Option(help="number of test functions")] = None,
    y: Param = None,
    a: Param = None,
    c_iso: Param = None,
    seed: Seed = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Sobolev inequalities on band-limited test functions"""
    _invoke(
        Command.SOBOLEV, config, log_level,
        flavor=flavor, model=model, dim=dim, family=family, c=c, eps=eps, center=center, width=width,
        height=height, profile=profile, mesh=mesh, tests=tests, y=y, a=a, c_iso=c_iso, seed=seed,
        out_csv=out_csv, out_json=out_json,
    )


@app.command()
def pipeline(
    k: Annotated[Optional[int], typer.Option(help="gap index, 1..5")] = None,
    config: ConfigOpt = None,
    model: ModelOpt = None,
    dim: Dim = None,
    family: Family = None,
    c: Param = None,
    eps: Param = None,
    center: Param = None,
    width: Param = None,
    height: Param = None,
    profile: Profile = None,
    mesh: Mesh = None,
    vc: Param = None,
    seed: Seed = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """Build the trial function and certify lambda_{2k+1} - lambda_{2k}"""
    _invoke(
        Command.PIPELINE, config, log_level,
        k=k, model=model, dim=dim, family=family, c=c, eps=eps, center=center, width=width, height=height,
        profile=profile, mesh=mesh, vc=vc, seed=seed, out_csv=out_csv, out_json=out_json,
    )


@app.command()
def degenerate(
    k: Annotated[Optional[int], typer.Option(help="number of equal balls")] = None,
    config: ConfigOpt = None,
    dim: Dim = None,
    count: Count = None,
    out_csv: OutCsv = None,
    out_json: OutJson = None,
    log_level: LogLevel = "INFO",
):
    """lambda_{k+1}/lambda_k on k disjoint equal balls"""
    _invoke(Command.DEGENERATE, config, log_level, k=k, dim=dim, count=count,
            out_csv=out_csv, out_json=out_json)


if __name__ == "__main__":
    app()
