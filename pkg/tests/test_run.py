import io
import json
import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from rich.console import Console
from typer.testing import CliRunner

from app.cli import app
from app.core.errors import NonConvergence, NumericalFailure
from app.models.schemas import Command, InequalityReport, RunConfig, RunResult
from app.services import report_service
from app.services.run_service import build_config, execute, parse_config_file, parse_grid, run

runner = CliRunner()


@pytest.fixture
def quiet():
    return Console(file=io.StringIO())


# ---------- config parsing ----------

def test_parse_grid_is_inclusive():
    assert parse_grid("0:0.5:0.1") == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_grid("1:2:0.25") == [1.0, 1.25, 1.5, 1.75, 2.0]
    assert parse_grid("0.7") == [0.7]


@pytest.mark.parametrize("text", ["0:1", "1:0:0.1", "0:1:0", "0:1:-0.1"])
def test_parse_grid_errors(text):
    with pytest.raises(ValueError):
        parse_grid(text)


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# rectangle run\nmodel = rectangle\n--sides = 1, 2\nkmax = 4  # inline\n")
    values = parse_config_file(path)
    assert values == {"model": "rectangle", "sides": [1.0, 2.0], "kmax": "4"}


def test_config_file_needs_key_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model rectangle\n")
    with pytest.raises(ValueError):
        parse_config_file(path)


def test_flags_override_file_values():
    cfg = build_config({"kmax": "4", "dim": "4"}, command="verify", kmax="2")
    assert cfg.kmax == 2 and cfg.dim == 4


def test_grid_value_turns_into_sweep():
    cfg = build_config(command="sweep", family="cos", eps="0:0.2:0.1")
    assert cfg.sweep_param == "eps"
    assert cfg.sweep_values == [0.0, 0.1, 0.2]


@pytest.mark.parametrize(
    "values",
    [
        {"command": "verify", "theorem": "dirichlet"},
        {"command": "verify", "theorem": "thm1", "model": "ball"},
        {"command": "spectrum", "model": "rectangle"},
        {"command": "sweep", "theorem": "thm1"},
        {"command": "pipeline", "k": 6},
        {"command": "balance"},
        {"command": "verify", "theorem": "gauss_schwarz"},
        {"command": "verify", "kmax": 0},
        {"command": "spectrum", "unknown": 1},
    ],
)
def test_invalid_configurations(values):
    with pytest.raises(ValidationError):
        RunConfig.model_validate(values)


def test_invalid_configuration_exit_code(quiet):
    assert run({"command": "verify", "theorem": "dirichlet"}, console=quiet) == 3


# ---------- execution ----------

def _failing(exc):
    def handler(cfg):
        raise exc

    return handler


@pytest.mark.parametrize(
    "exc, code",
    [
        (NumericalFailure("solver broke", 1e-3), 2),
        (NonConvergence("no zero", 1e-2, iterations=200), 2),
        (ValueError("bad input"), 3),
    ],
)
def test_execute_maps_failures_to_exit_codes(exc, code):
    cfg = RunConfig(command=Command.SPECTRUM)
    result = execute(cfg, {Command.SPECTRUM: _failing(exc)})
    assert result.exit_code == code
    assert result.error == str(exc)


def test_violations_give_exit_code_one(tmp_path, quiet):
    def handler(cfg):
        return RunResult(command=cfg.command, reports=[InequalityReport.build("x", 1, 2.0, 1.0)])

    out = tmp_path / "r.csv"
    cfg = RunConfig(command=Command.VERIFY, out_csv=str(out))
    assert run(cfg, {Command.VERIFY: handler}, console=quiet) == 1
    assert report_service.read_reports(out)[0].violated


def test_failed_run_still_writes_json(tmp_path, quiet):
    out = tmp_path / "r.json"
    cfg = RunConfig(command=Command.SPECTRUM, out_json=str(out))
    assert run(cfg, {Command.SPECTRUM: _failing(NumericalFailure("eigsh"))}, console=quiet) == 2
    data = json.loads(out.read_text())
    assert data["exit_code"] == 2 and data["error"] == "eigsh"


def test_round_sphere_spectrum_run():
    cfg = RunConfig(command=Command.SPECTRUM, model="round-sphere", count=30)
    result = execute(cfg)
    assert result.exit_code == 0
    assert [(e.value, e.multiplicity) for e in result.spectrum.entries] == [(0.0, 1), (3.0, 4), (8.0, 9), (15.0, 16)]


def test_verify_run_with_tolerance_override():
    cfg = RunConfig(command=Command.VERIFY, model="round-sphere", theorem="ehi", kmax=2, tol=1e-3)
    result = execute(cfg)
    assert result.exit_code == 0
    assert all(r.tol == 1e-3 for r in result.reports)
    assert result.reports[0].near_equality


@pytest.mark.parametrize("c", [-0.5, 0.5])
def test_thm1_margins_follow_the_homothety(c):
    base = execute(RunConfig(command=Command.VERIFY, theorem="thm1", family="constant", c=0.0, kmax=3))
    moved = execute(RunConfig(command=Command.VERIFY, theorem="thm1", family="constant", c=c, kmax=3))
    assert base.exit_code == moved.exit_code == 0
    assert [r.k for r in moved.reports] == [1, 2, 3]
    for a, b in zip(base.reports, moved.reports):
        assert b.margin == pytest.approx(math.exp(-2 * c) * a.margin, rel=1e-6, abs=1e-9)


def test_ehi_on_non_constant_profile_needs_sup_h2():
    cfg = RunConfig(command=Command.VERIFY, family="cos", eps=0.2, theorem="ehi", mesh=400)
    assert execute(cfg).exit_code == 3


# ---------- reports ----------

def test_reports_round_trip_through_csv(tmp_path):
    reports = [InequalityReport.build("thm1", k, -1.0 * k, 3.0) for k in (1, 2)]
    path = report_service.write_csv(RunResult(command=Command.VERIFY, reports=reports), tmp_path / "a" / "r.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["name", "k", "lhs", "rhs", "margin", "satisfied"]
    back = report_service.read_reports(path)
    assert [(r.name, r.k, r.lhs, r.rhs) for r in back] == [(r.name, r.k, r.lhs, r.rhs) for r in reports]


def test_margin_table_marks_statuses():
    reports = [
        InequalityReport.build("ok", 1, 0.0, 1.0),
        InequalityReport.build("bad", 1, 2.0, 1.0),
        InequalityReport.build("info", 1, 2.0, 1.0, informational=True),
    ]
    table = report_service.margin_table(reports)
    assert table.row_count == 3


# ---------- command line ----------

def test_cli_round_sphere_spectrum(tmp_path):
    out = tmp_path / "spec.json"
    result = runner.invoke(app, ["spectrum", "--model", "round-sphere", "--dim", "3", "--count", "30", "--out-json", str(out)])
    assert result.exit_code == 0, result.output
    entries = json.loads(out.read_text())["spectrum"]["entries"]
    assert [(e["value"], e["multiplicity"]) for e in entries] == [(0.0, 1), (3.0, 4), (8.0, 9), (15.0, 16)]


def test_cli_spectrum_csv(tmp_path):
    out = tmp_path / "spec.csv"
    result = runner.invoke(app, ["spectrum", "--model", "rectangle", "--side", "1", "--side", "1", "--count", "3", "--out-csv", str(out)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame["multiplicity"]) == [1, 2]
    np.testing.assert_allclose(frame["eigenvalue"], [2 * np.pi**2, 5 * np.pi**2], rtol=1e-12)


def test_cli_sweep_writes_one_row_per_point_and_k(tmp_path):
    out = tmp_path / "sweep.csv"
    result = runner.invoke(
        app,
        ["sweep", "--theorem", "thm1", "--family", "cos", "--eps", "0:0.5:0.1", "--kmax", "5", "--mesh", "400", "--out-csv", str(out)],
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 30
    assert frame["name"].iloc[0] == "thm1@eps=0"
    assert frame["name"].iloc[-1] == "thm1@eps=0.5"
    assert list(frame["k"].iloc[:5]) == [1, 2, 3, 4, 5]


def test_cli_dirichlet_verify():
    result = runner.invoke(app, ["verify", "--theorem", "dirichlet", "--model", "rectangle", "--side", "1", "--side", "2", "--kmax", "4"])
    assert result.exit_code == 0, result.output


def test_cli_gauss_schwarz():
    result = runner.invoke(app, ["verify", "--theorem", "gauss_schwarz", "--kappa", "1", "--kappa", "1", "--kappa", "2"])
    assert result.exit_code == 0, result.output


def test_cli_balance(tmp_path):
    measure = tmp_path / "mu.csv"
    measure.write_text("x0,x1,x2,weight\n1,0,0,1\n0,1,0,1\n0,0,1,1\n")
    out = tmp_path / "balance.json"
    result = runner.invoke(app, ["balance", "--measure", str(measure), "--out-json", str(out)])
    assert result.exit_code == 0, result.output
    xi = json.loads(out.read_text())["balance"]["xi"]
    np.testing.assert_allclose(xi, xi[0], atol=1e-7)


def test_cli_balance_infeasible(tmp_path):
    measure = tmp_path / "mu.csv"
    measure.write_text("x0,x1,x2,weight\n1,0,0,3\n0,1,0,1\n0,0,1,1\n")
    assert runner.invoke(app, ["balance", "--measure", str(measure)]).exit_code == 2


def test_cli_degenerate():
    result = runner.invoke(app, ["degenerate", "--k", "3", "--dim", "2"])
    assert result.exit_code == 0, result.output


def test_cli_invalid_configuration():
    assert runner.invoke(app, ["spectrum", "--model", "rectangle"]).exit_code == 3
    assert runner.invoke(app, ["verify", "--dim", "zero"]).exit_code == 3


def test_cli_missing_config_file(tmp_path):
    assert runner.invoke(app, ["spectrum", "--config", str(tmp_path / "none.cfg")]).exit_code == 3


def test_cli_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model = round-sphere\ncount = 5\n")
    out = tmp_path / "spec.json"
    result = runner.invoke(app, ["spectrum", "--config", str(path), "--out-json", str(out)])
    assert result.exit_code == 0, result.output
    assert json.loads(out.read_text())["spectrum"]["entries"][-1]["multiplicity"] == 4


# ---------- settings ----------

def test_settings_read_environment(monkeypatch):
    from app.core.config import get_settings

    monkeypatch.setenv("PPW_MESH_SIZE", "800")
    monkeypatch.setenv("PPW_SEED", "7")
    get_settings.cache_clear()
    try:
        settings = get_settings()
        assert settings.mesh_size == 800 and settings.seed == 7
        assert settings.api_max_batch == 50
    finally:
        get_settings.cache_clear()
