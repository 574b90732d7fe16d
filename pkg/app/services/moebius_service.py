"""
Moebius Service
S^m의 conformal automorphism phi_xi, discrete measure, center-of-mass balancing, pushforward
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.config import get_settings
from app.core.errors import BalancingInfeasible, DomainError, NonConvergence
from app.core.numerics import vector_root_solve

logger = logging.getLogger(__name__)

BALL_EDGE = 1.0 - 1e-12
SEARCH_RADIUS = 1.0 - 1e-6
UNIT_TOL = 1e-12


# ========== Types ==========

@dataclass(frozen=True)
class BallPoint:
    """열린 단위 공 B^{m+1} 의 점 xi"""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1)
        if not np.all(np.isfinite(coords)):
            raise DomainError("ball point has non-finite coordinates")
        if np.linalg.norm(coords) >= BALL_EDGE:
            raise DomainError(f"|xi| = {np.linalg.norm(coords):.15f} is not inside the open unit ball")
        object.__setattr__(self, "coords", coords)

    @classmethod
    def origin(cls, dim: int) -> "BallPoint":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


@dataclass(frozen=True)
class DiscreteMeasure:
    """단위 벡터 점들과 음이 아닌 weight"""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if points.shape[0] != weights.shape[0]:
            raise DomainError("points and weights differ in length")
        drift = np.abs(np.linalg.norm(points, axis=1) - 1.0)
        if drift.size and drift.max() > UNIT_TOL:
            raise DomainError(f"measure point off the unit sphere by {drift.max():.3e}")
        if np.any(weights < 0):
            raise DomainError("measure weights must be non-negative")
        if weights.sum() <= 0:
            raise DomainError("measure has zero total mass")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def largest_atom(self) -> float:
        """같은 점(12자리 반올림)에 모인 질량의 최대값"""
        keys = np.round(self.points, 12)
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        return float(np.bincount(inverse.reshape(-1), weights=self.weights).max())

    # ---------- CSV ----------

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.points, columns=[f"x{i}" for i in range(self.ambient_dim)])
        frame["weight"] = self.weights
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "DiscreteMeasure":
        coords = sorted(
            (c for c in frame.columns if c.startswith("x") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
        if not coords or "weight" not in frame.columns:
            raise DomainError("measure CSV needs columns x0..xm and weight")
        return cls(frame[coords].to_numpy(dtype=float), frame["weight"].to_numpy(dtype=float))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DiscreteMeasure":
        return cls.from_frame(pd.read_csv(path))


@dataclass(frozen=True)
class BalanceResult:
    point: BallPoint
    residual_norm: float
    iterations: int


# ========== Maps ==========

def _coords(xi: Union[BallPoint, np.ndarray, Sequence[float]]) -> np.ndarray:
    return xi.coords if isinstance(xi, BallPoint) else np.asarray(xi, dtype=float)


def moebius_map(xi: Union[BallPoint, np.ndarray], x: np.ndarray) -> np.ndarray:
    """
    phi_xi(x) = xi + (1 - |xi|^2)/|x + xi|^2 (x + xi)

    Args:
        xi: ball point
        x: 단위 벡터 하나 (d,) 또는 여러 개 (N, d)
    """
    xi = _coords(xi)
    x = np.asarray(x, dtype=float)
    if not np.any(xi):
        return x.copy()
    w = x + xi
    c = (1.0 - xi @ xi) / np.sum(w * w, axis=-1)
    y = xi + c[..., None] * w if w.ndim > 1 else xi + c * w
    norms = np.linalg.norm(y, axis=-1)
    drift = np.abs(norms - 1.0) > 1e-14
    if np.any(drift):
        if y.ndim > 1:
            y[drift] /= norms[drift][:, None]
        else:
            y = y / norms
    return y


def moebius_factor(xi: Union[BallPoint, np.ndarray], x: np.ndarray):
    """conformal factor c = (1-|xi|^2)/|x+xi|^2 와 w = x + xi"""
    xi = _coords(xi)
    w = np.asarray(x, dtype=float) + xi
    return (1.0 - xi @ xi) / np.sum(w * w, axis=-1), w


def coordinate_gradients(
    xi: Union[BallPoint, np.ndarray],
    x: np.ndarray,
    directions: Optional[np.ndarray] = None,
    embedding: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Round S^n 위에서 X_e o phi_xi (o Q) 의 gradient

    Dphi = c (I - 2 w w^T/|w|^2) 를 닫힌 형태로 사용

    Args:
        xi: ball point in R^{m+1}
        x: S^n 위 점들 (N, n+1)
        directions: 열벡터 e_a 들 (m+1, A), 기본 항등행렬
        embedding: Q, (m+1, n+1), 정규직교 열

    Returns:
        (N, A, n+1) ambient 좌표의 접벡터
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = x if embedding is None else x @ embedding.T
    c, w = moebius_factor(xi, y)
    E = np.eye(y.shape[1]) if directions is None else np.asarray(directions, dtype=float)
    w_hat = w / np.linalg.norm(w, axis=1)[:, None]
    # c * H_w e_a, H_w = I - 2 w_hat w_hat^T
    proj = w_hat @ E
    vecs = c[:, None, None] * (E.T[None, :, :] - 2.0 * proj[:, :, None] * w_hat[:, None, :])
    if embedding is not None:
        vecs = vecs @ embedding
    radial = np.einsum("nad,nd->na", vecs, x)
    return vecs - radial[:, :, None] * x[:, None, :]


# ========== Balancing ==========

def center_of_mass_residual(xi: Union[BallPoint, np.ndarray], mu: DiscreteMeasure) -> np.ndarray:
    """(sum w_i phi_xi(x_i)) / (sum w_i)"""
    images = moebius_map(xi, mu.points)
    return mu.weights @ images / mu.total_mass


def _check_atoms(mu: DiscreteMeasure) -> None:
    atom = mu.largest_atom()
    if atom > 0.5 * mu.total_mass:
        raise BalancingInfeasible(
            f"largest atom carries {atom / mu.total_mass:.3f} of the mass",
            residual_norm=float("nan"),
        )


def solve_balance(
    mu: DiscreteMeasure,
    tol: Optional[float] = None,
    start: Optional[np.ndarray] = None,
) -> BalanceResult:
    """
    int phi_xi dmu = 0 을 만족하는 xi 탐색 (damped Newton)

    Raises:
        BalancingInfeasible: atom 조건 위반 또는 허용오차 내 수렴 실패
    """
    tol = get_settings().balance_tol if tol is None else tol
    _check_atoms(mu)
    dim = mu.ambient_dim
    x0 = np.zeros(dim) if start is None else np.asarray(start, dtype=float)

    try:
        sol = vector_root_solve(
            lambda xi: center_of_mass_residual(xi, mu),
            x0,
            tol,
            admissible=lambda xi: float(np.linalg.norm(xi)) <= SEARCH_RADIUS,
        )
    except NonConvergence as exc:
        raise BalancingInfeasible(
            f"balancing infeasible at tolerance {tol:g}: {exc}",
            residual_norm=exc.residual_norm,
            best=exc.best,
            iterations=exc.iterations,
        ) from exc

    logger.debug("balanced in %d iterations, |xi|=%.6f, residual=%.3e", sol.iterations, np.linalg.norm(sol.point), sol.residual_norm)
    return BalanceResult(BallPoint(sol.point), sol.residual_norm, sol.iterations)


def balance(mu: DiscreteMeasure, tol: Optional[float] = None) -> BallPoint:
    return solve_balance(mu, tol).point


# ========== Pushforward ==========

def pushforward(mu: DiscreteMeasure, images: np.ndarray) -> DiscreteMeasure:
    """같은 weight, 점을 images로 교체"""
    images = np.atleast_2d(np.asarray(images, dtype=float))
    if images.shape[0] != mu.points.shape[0]:
        raise DomainError("images must match the measure's point count")
    return DiscreteMeasure(images, mu.weights.copy())
