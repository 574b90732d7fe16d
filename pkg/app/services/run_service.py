"""
Run Service
RunConfig 실행, sweep 오케스트레이션, 아티팩트 출력, 종료 코드 매핑
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from rich.console import Console

from app.core.config import get_settings
from app.core.errors import DomainError, exit_code_for
from app.models.schemas import (
    BallSpec,
    BoxSpec,
    Command,
    EhiMode,
    InequalityReport,
    Model,
    ProfileFamily,
    RunConfig,
    RunResult,
    SobolevFlavor,
    Spectrum,
    Theorem,
)
from app.services import report_service
from app.services.basis_service import build_eigen_basis
from app.services.dirichlet_service import ball_spectrum, degeneration_experiment, rectangle_spectrum
from app.services.moebius_service import DiscreteMeasure, solve_balance
from app.services.pipeline_service import PipelineService
from app.services.sphere_service import (
    ConformalMetric,
    RadialProfile,
    conformal_spectrum,
    geometric_constants,
    radial_metric_assemble,
    ricci_parameter,
    round_spectrum,
    sphere_volume,
)
from app.services.verify_service import (
    SobolevSample,
    check_dirichlet_universal,
    check_ehi,
    check_sobolev,
    check_thm1,
    check_thm1bis,
    check_thm2,
    check_thm3,
    gauss_schwarz_check,
)

logger = logging.getLogger(__name__)

Handler = Callable[[RunConfig], RunResult]
GRID_TOL = 1e-12
LIST_FIELDS = ("sides", "kappas", "sweep_values")


# ========== Config parsing ==========

def parse_grid(text: str) -> List[float]:
    """
    "start:stop:step" -> 끝점 포함 (1e-12 이내) 값 목록, 단일 값도 허용
    """
    parts = [p.strip() for p in str(text).split(":")]
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise DomainError(f"grid must look like start:stop:step, got '{text}'")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise DomainError(f"grid '{text}' needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + GRID_TOL)) + 1
    # 누적 오차 없이 인덱스로 생성, 0.1 * 3 = 0.30000000000000004 는 반올림
    return [round(start + i * step, 12) for i in range(count)]


def parse_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    flat key = value 파일 (# 주석), 키는 CLI 플래그와 동일 (dash/underscore 모두 허용)
    """
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key in LIST_FIELDS:
            values[key] = [float(v) for v in value.split(",") if v.strip()]
        else:
            values[key] = value
    return values


def build_config(file_values: Optional[Mapping[str, Any]] = None, **flags: Any) -> RunConfig:
    """
    파일 값 위에 flag 값을 덮어쓰고 검증; 값에 ':' 가 있는 파라미터는 sweep grid 로 해석
    """
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in flags.items() if v is not None})
    for key, value in list(merged.items()):
        if isinstance(value, str) and ":" in value and key not in ("profile", "measure", "out_csv", "out_json"):
            merged["sweep_param"] = key
            merged["sweep_values"] = parse_grid(value)
            merged.pop(key)
    return RunConfig.model_validate(merged)


# ========== Model construction ==========

def build_profile(cfg: RunConfig) -> RadialProfile:
    n = cfg.dim
    if cfg.family == ProfileFamily.CONSTANT:
        return RadialProfile.constant(cfg.c, n)
    if cfg.family == ProfileFamily.COSINE:
        return RadialProfile.cosine(cfg.eps, n)
    if cfg.family == ProfileFamily.BUMP:
        return RadialProfile.bump(cfg.center, cfg.width, cfg.height, n)
    return RadialProfile.from_csv(cfg.profile, n)


def build_metric(cfg: RunConfig) -> ConformalMetric:
    if cfg.model == Model.ROUND_SPHERE:
        return radial_metric_assemble(RadialProfile.constant(0.0, cfg.dim), cfg.mesh)
    return radial_metric_assemble(build_profile(cfg), cfg.mesh)


def _is_constant(cfg: RunConfig) -> bool:
    return cfg.model == Model.ROUND_SPHERE or cfg.family == ProfileFamily.CONSTANT


def _scale_c(cfg: RunConfig) -> float:
    return 0.0 if cfg.model == Model.ROUND_SPHERE else cfg.c


def closed_spectrum(cfg: RunConfig, count: int) -> Tuple[Spectrum, Dict[str, float]]:
    """
    Sphere 모델의 스펙트럼과 곡률/부피 정보

    Returns:
        (spectrum, {maxS, supS, vol, ...})
    """
    n = cfg.dim
    if cfg.model == Model.ROUND_SPHERE:
        entries = 1
        while round_spectrum(n, entries).total_multiplicity < count:
            entries += 1
        spec = round_spectrum(n, entries).truncate(count)
        S = float(n * (n - 1))
        return spec, {"maxS": S, "supS": S, "vol": sphere_volume(n), "metric": None}
    metric = build_metric(cfg)
    spec = conformal_spectrum(metric, count, cfg.mesh)
    info = {
        "maxS": metric.maxS,
        "supS": max(abs(metric.maxS), abs(metric.minS)),
        "vol": metric.volume,
        "metric": metric,
    }
    return spec, info


def model_spectrum(cfg: RunConfig, count: int) -> Spectrum:
    if cfg.model == Model.RECTANGLE:
        return rectangle_spectrum(BoxSpec(sides=cfg.sides), count)
    if cfg.model == Model.BALL:
        return ball_spectrum(BallSpec(dimension=cfg.dim, radius=cfg.radius), count)
    return closed_spectrum(cfg, count)[0]


# ========== Commands ==========

def _metadata(cfg: RunConfig, **extra: Any) -> Dict[str, Any]:
    settings = get_settings()
    meta = {
        "config": cfg.model_dump(mode="json", exclude_none=True),
        "seed": settings.seed if cfg.seed is None else cfg.seed,
    }
    meta.update(extra)
    return meta


def run_spectrum(cfg: RunConfig) -> RunResult:
    return RunResult(command=cfg.command, spectrum=model_spectrum(cfg, cfg.count), metadata=_metadata(cfg))


def _theorem_reports(cfg: RunConfig) -> List[InequalityReport]:
    n = cfg.dim
    kmax = cfg.kmax
    th = cfg.theorem

    if th == Theorem.GAUSS_SCHWARZ:
        return [gauss_schwarz_check(cfg.kappas)]
    if th == Theorem.DIRICHLET:
        spec = model_spectrum(cfg, max(kmax + 1, 2 * kmax, n + 2))
        return check_dirichlet_universal(spec, kmax, chain=True)
    if th in (Theorem.EHI, Theorem.EHI_QUADRATIC):
        spec, _ = closed_spectrum(cfg, kmax + 2)
        sup_h2 = cfg.sup_h2
        if sup_h2 is None:
            if not _is_constant(cfg):
                raise DomainError("ehi on a non-constant profile needs --sup-h2")
            sup_h2 = n * n * math.exp(-2.0 * _scale_c(cfg))
        mode = EhiMode.GAP if th == Theorem.EHI else EhiMode.QUADRATIC
        return check_ehi(spec, sup_h2, kmax, mode)

    spec, info = closed_spectrum(cfg, 2 * kmax + 2)
    consts = geometric_constants(n)
    vc = cfg.vc or consts.Vc_default
    if th == Theorem.THM1:
        return check_thm1(spec, info["maxS"], kmax)
    if th == Theorem.THM1BIS:
        return check_thm1bis(spec, cfg.y or consts.Y_sphere, vc, info["supS"], kmax)
    if th == Theorem.THM2:
        a = cfg.a
        if a is None:
            a = 1.0 if info["metric"] is None else ricci_parameter(info["metric"])
        return check_thm2(spec, a, info["vol"], vc, kmax)
    c_iso = cfg.c_iso
    if c_iso is None:
        if not _is_constant(cfg):
            raise DomainError("thm3 on a non-constant profile needs --c-iso")
        c_iso = consts.C_iso_round
    return check_thm3(spec, c_iso, vc, info["vol"], kmax)


def run_verify(cfg: RunConfig) -> RunResult:
    reports = _theorem_reports(cfg)
    if cfg.tol is not None:
        reports = [
            InequalityReport.build(r.name, r.k, r.lhs, r.rhs, cfg.tol, r.inputs, r.informational, r.applicable)
            for r in reports
        ]
    return RunResult(command=cfg.command, reports=reports, metadata=_metadata(cfg))


def _sweep_point(cfg: RunConfig, value: float) -> List[InequalityReport]:
    data = cfg.model_dump()
    data.update({"command": Command.VERIFY, cfg.sweep_param: value, "sweep_param": None, "sweep_values": None})
    point = RunConfig.model_validate(data)
    tag = f"{cfg.sweep_param}={value:g}"
    return [r.model_copy(update={"name": f"{r.name}@{tag}"}) for r in run_verify(point).reports]


def run_sweep(cfg: RunConfig) -> RunResult:
    """
    Sweep 점들을 worker pool 에 분배, 결과는 sweep 인덱스 순서
    """
    settings = get_settings()
    values = cfg.sweep_values or []
    workers = max(1, min(settings.threads, len(values)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(lambda v: _sweep_point(cfg, v), values))
    reports = [r for chunk in chunks for r in chunk]
    return RunResult(
        command=cfg.command,
        reports=reports,
        metadata=_metadata(cfg, points=len(values), workers=workers),
    )


def run_balance(cfg: RunConfig) -> RunResult:
    mu = DiscreteMeasure.from_csv(cfg.measure)
    result = solve_balance(mu, cfg.tol)
    logger.info("balanced %d points in %d iterations", len(mu.weights), result.iterations)
    return RunResult(
        command=cfg.command,
        balance={
            "xi": result.point.coords.tolist(),
            "residual": result.residual_norm,
            "iterations": result.iterations,
        },
        metadata=_metadata(cfg),
    )


def sobolev_samples(metric: ConformalMetric, tests: int, seed: int, size: int = 10) -> List[SobolevSample]:
    """상수 1개 + 처음 size 개 고유함수의 무작위 조합"""
    basis = build_eigen_basis(metric, size)
    rng = np.random.default_rng(seed)
    samples = [SobolevSample.constant(basis.grid)]
    for _ in range(tests - 1):
        coeffs = rng.normal(size=basis.size)
        samples.append(SobolevSample.from_grid_function(basis.combine(coeffs), basis.grid))
    return samples


def run_sobolev(cfg: RunConfig) -> RunResult:
    metric = build_metric(cfg)
    n = cfg.dim
    seed = get_settings().seed if cfg.seed is None else cfg.seed
    params: Dict[str, float] = {}
    if cfg.flavor == SobolevFlavor.ILIAS_RIC:
        params["a"] = cfg.a if cfg.a is not None else ricci_parameter(metric)
    if cfg.flavor == SobolevFlavor.ILIAS_GEN:
        if cfg.c_iso is None and not _is_constant(cfg):
            raise DomainError("ilias_gen on a non-constant profile needs --c-iso")
        params["C_iso"] = cfg.c_iso or geometric_constants(n).C_iso_round
    if cfg.flavor == SobolevFlavor.YAMABE and cfg.y is not None:
        params["Y"] = cfg.y
    reports = check_sobolev(cfg.flavor, metric, sobolev_samples(metric, cfg.tests, seed), params)
    return RunResult(command=cfg.command, reports=reports, metadata=_metadata(cfg))


def run_pipeline(cfg: RunConfig) -> RunResult:
    metric = build_metric(cfg)
    seed = get_settings().seed if cfg.seed is None else cfg.seed
    trial = PipelineService().certify(cfg.k, metric, cfg.vc, seed=seed)
    return RunResult(
        command=cfg.command,
        reports=trial.reports,
        trial=trial.to_report(),
        metadata=_metadata(cfg, stages_ms=trial.stages),
    )


def run_degenerate(cfg: RunConfig) -> RunResult:
    reports = list(degeneration_experiment(cfg.k, cfg.dim, cfg.count))
    return RunResult(command=cfg.command, reports=reports, metadata=_metadata(cfg))


HANDLERS: Dict[Command, Handler] = {
    Command.SPECTRUM: run_spectrum,
    Command.VERIFY: run_verify,
    Command.SWEEP: run_sweep,
    Command.BALANCE: run_balance,
    Command.SOBOLEV: run_sobolev,
    Command.PIPELINE: run_pipeline,
    Command.DEGENERATE: run_degenerate,
}


# ========== Entry points ==========

def execute(cfg: RunConfig, handlers: Optional[Mapping[Command, Handler]] = None) -> RunResult:
    """
    설정된 명령 실행; 예외는 exit code 와 함께 RunResult.error 로 변환
    """
    table = dict(HANDLERS)
    table.update(handlers or {})
    start = time.time()
    try:
        result = table[cfg.command](cfg)
    except Exception as exc:
        code = exit_code_for(exc)
        logger.error("%s failed: %s", cfg.command.value, exc)
        return RunResult(command=cfg.command, exit_code=code, error=str(exc), metadata=_metadata(cfg))
    result.exit_code = 1 if result.violations else 0
    logger.info(
        "%s finished in %.0f ms: %d reports, %d violations",
        cfg.command.value, (time.time() - start) * 1000, len(result.reports), len(result.violations),
    )
    return result


def run(
    config: Union[RunConfig, Mapping[str, Any]],
    handlers: Optional[Mapping[Command, Handler]] = None,
    console: Optional[Console] = None,
) -> int:
    """
    실행 후 CSV/JSON 을 쓰고 margin 테이블 출력

    Returns:
        0 모두 만족, 1 위반, 2 수치 실패, 3 잘못된 설정
    """
    try:
        cfg = config if isinstance(config, RunConfig) else RunConfig.model_validate(dict(config))
    except ValidationError as exc:
        logger.error("invalid configuration: %s", exc)
        return exit_code_for(exc)

    result = execute(cfg, handlers)
    if cfg.out_json:
        report_service.write_json(result, cfg.out_json)
    if result.error is None:
        if cfg.out_csv:
            report_service.write_csv(result, cfg.out_csv)
        report_service.print_result(result, console)
    return result.exit_code
