"""
PPW Spectral Toolkit - FastAPI Backend
구면/Euclidean 영역의 스펙트럼 계산과 고유값 gap 부등식 검증
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api import routes
from app.core.config import get_settings
from app.core.logging import configure_logging

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """앱 시작/종료 시 실행되는 로직"""
    settings = get_settings()
    configure_logging(settings.log_level)
    logger.info("service initialized (threads=%d, mesh=%d)", settings.threads, settings.mesh_size)
    yield
    logger.info("shutting down")


app = FastAPI(
    title="PPW Spectral Toolkit",
    description="""
    ## Eigenvalue gap inequalities, machine-checked

    ### Endpoints
    - **spectrum**: round / radial-conformal sphere, rectangle and ball spectra
    - **verify**: gap theorems, EHI, Dirichlet universal inequalities with signed margins
    - **pipeline**: trial-function construction and the gap certificate
    - **sweep**: one-parameter sweeps of a verify run
    - **balance**: Moebius centre of mass of a discrete measure

    *Stateless 서비스*
    """,
    version="1.0.0",
    lifespan=lifespan,
)

# CORS 설정
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 라우터 등록
app.include_router(routes.router, prefix="/api/v1", tags=["Spectral Geometry"])


@app.get("/", tags=["Health"])
async def root():
    return {
        "message": "PPW Spectral Toolkit API",
        "docs": "/docs",
        "health": "ok",
    }


@app.get("/health", tags=["Health"])
async def health_check():
    return {"status": "healthy"}
