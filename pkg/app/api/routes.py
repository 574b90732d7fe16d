"""
API Routes - 스펙트럼/검증/파이프라인 엔드포인트
"""

from typing import Any, Dict, List, Optional

from fastapi import APIRouter, HTTPException, Response
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, Field, ValidationError

from app.core.config import get_settings
from app.core.errors import DomainError, NumericalFailure
from app.models.schemas import Command, RunConfig, RunResult
from app.services import run_service
from app.services.moebius_service import DiscreteMeasure, solve_balance

router = APIRouter()

STATUS_FOR_EXIT = {
    DomainError.exit_code: 422,
    NumericalFailure.exit_code: 503,
    1: 409,
}


class BalanceRequest(BaseModel):
    points: List[List[float]] = Field(..., min_length=1)
    weights: List[float] = Field(..., min_length=1)
    tol: Optional[float] = Field(None, gt=0)


def _config(command: Command, body: Dict[str, Any]) -> RunConfig:
    try:
        return run_service.build_config(body, command=command.value)
    except (ValidationError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))


def _respond(result: RunResult) -> Response:
    # not applicable rows carry rhs = inf, serialized as the Infinity constant
    return Response(content=result.model_dump_json(), media_type="application/json")


async def _execute(command: Command, body: Dict[str, Any]) -> Response:
    cfg = _config(command, body)
    result = await run_in_threadpool(run_service.execute, cfg)
    if result.error is not None:
        raise HTTPException(status_code=STATUS_FOR_EXIT.get(result.exit_code, 500), detail=result.error)
    return _respond(result)


@router.post("/spectrum", response_model=RunResult)
async def spectrum(body: Dict[str, Any]):
    """
    모델 기하의 스펙트럼

    body 는 CLI 플래그와 같은 키를 쓰는 RunConfig JSON
    """
    return await _execute(Command.SPECTRUM, body)


@router.post("/verify", response_model=RunResult)
async def verify(body: Dict[str, Any]):
    """정리/부등식 하나를 평가 (위반이 있으면 exit_code = 1)"""
    return await _execute(Command.VERIFY, body)


@router.post("/pipeline", response_model=RunResult)
async def pipeline(body: Dict[str, Any]):
    """Trial function 구성 후 gap certificate"""
    return await _execute(Command.PIPELINE, body)


@router.post("/sweep", response_model=RunResult)
async def sweep(body: Dict[str, Any]):
    """
    파라미터 sweep (최대 api_max_batch 개 점)
    """
    cfg = _config(Command.SWEEP, body)
    limit = get_settings().api_max_batch
    if len(cfg.sweep_values or []) > limit:
        raise HTTPException(status_code=400, detail=f"최대 {limit}개 sweep 점까지 허용됩니다.")
    result = await run_in_threadpool(run_service.execute, cfg)
    if result.error is not None:
        raise HTTPException(status_code=STATUS_FOR_EXIT.get(result.exit_code, 500), detail=result.error)
    return _respond(result)


@router.post("/balance")
async def balance(request: BalanceRequest):
    """측도를 직접 받아 balancing point 계산"""
    try:
        mu = DiscreteMeasure(request.points, request.weights)
        result = await run_in_threadpool(solve_balance, mu, request.tol)
    except DomainError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalFailure as e:
        raise HTTPException(status_code=503, detail=str(e))
    return {
        "xi": result.point.coords.tolist(),
        "residual": result.residual_norm,
        "iterations": result.iterations,
    }
