"""
Dirichlet Service
직육면체/공의 closed-form Dirichlet 스펙트럼, disjoint union, degeneration 실험
"""

import itertools
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DomainError
from app.core.numerics import MAX_BESSEL_INDEX, MAX_BESSEL_ORDER, bessel_zeros
from app.models.schemas import BallSpec, BoxSpec, Convention, InequalityReport, Spectrum
from app.services.sphere_service import ball_volume, harmonic_multiplicity

logger = logging.getLogger(__name__)

WEYL_OVERSHOOT = 1.5
MERGE_RTOL = 1e-12
MAX_BALL_DIM = 8
MAX_DOUBLINGS = 40


# ========== Weyl law ==========

def weyl_count(box: BoxSpec, level: float) -> float:
    """N(level) ~ vol * |B^n| * level^{n/2} / (2 pi)^n"""
    n = box.dimension
    volume = float(np.prod(box.sides))
    return volume * ball_volume(n) * max(level, 0.0) ** (n / 2.0) / (2.0 * math.pi) ** n


def _weyl_level(volume: float, n: int, count: int) -> float:
    return (count * (2.0 * math.pi) ** n / (volume * ball_volume(n))) ** (2.0 / n)


# ========== Rectangles ==========

def _lattice_values(sides: np.ndarray, level: float) -> np.ndarray:
    """pi^2 sum (p_i/a_i)^2 <= level 인 모든 p >= 1"""
    limits = [int(math.floor(a * math.sqrt(level) / math.pi)) for a in sides]
    if min(limits) < 1:
        return np.zeros(0)
    axes = [(np.arange(1, m + 1) / a) ** 2 for m, a in zip(limits, sides)]
    total = axes[0]
    for axis in axes[1:]:
        total = np.add.outer(total, axis).reshape(-1)
        total = total[math.pi**2 * total <= level]
    values = math.pi**2 * total
    return np.sort(values[values <= level])


def rectangle_spectrum(box: BoxSpec, count: int) -> Spectrum:
    """
    Box 의 처음 count개 (중복도 포함) Dirichlet 고유값

    Weyl 추정치의 1.5배에서 시작, 부족하면 level 을 두 배로 늘려 재탐색
    """
    if count < 1:
        raise DomainError("count must be positive")
    sides = np.asarray(box.sides, dtype=float)
    n = box.dimension
    level = WEYL_OVERSHOOT * _weyl_level(float(np.prod(sides)), n, count)
    for _ in range(MAX_DOUBLINGS):
        values = _lattice_values(sides, level)
        if len(values) >= count:
            spectrum = Spectrum.from_values(values, Convention.DIRICHLET, n, rtol=MERGE_RTOL)
            logger.debug("box %s: %d lattice values below %.4g", box.sides, len(values), level)
            return spectrum.truncate(count)
        level *= 2.0
    raise DomainError(f"lattice enumeration did not reach {count} eigenvalues")


# ========== Balls ==========

def _ball_values(n: int, level: float) -> Tuple[List[float], List[int]]:
    """반지름 1 공에서 j_{nu,k}^2 <= level 인 모든 (l, k)"""
    cutoff = math.sqrt(level)
    values: List[float] = []
    mults: List[int] = []
    for ell in itertools.count():
        nu = ell + n / 2.0 - 1.0
        if nu > MAX_BESSEL_ORDER:
            raise DomainError(f"ball spectrum needs Bessel order {nu} > {MAX_BESSEL_ORDER}")
        want = min(MAX_BESSEL_INDEX, int(cutoff / math.pi) + 2)
        zeros = bessel_zeros(nu, want)
        if zeros[0] > cutoff:
            break
        if zeros[-1] <= cutoff:
            raise DomainError(f"ball spectrum needs more than {MAX_BESSEL_INDEX} zeros of J_{nu}")
        mult = harmonic_multiplicity(ell, n)
        for z in zeros:
            if z > cutoff:
                break
            values.append(z * z)
            mults.append(mult)
    return values, mults


def ball_spectrum(ball: BallSpec, count: int) -> Spectrum:
    """
    (j_{l+n/2-1,k}/r)^2, 중복도 m(l, S^{n-1})

    Args:
        ball: 차원 n <= 8, 반지름 r
        count: 중복도 포함 고유값 개수
    """
    n = ball.dimension
    if n > MAX_BALL_DIM:
        raise DomainError(f"ball spectra supported for n <= {MAX_BALL_DIM}, got {n}")
    if count < 1:
        raise DomainError("count must be positive")
    level = WEYL_OVERSHOOT * _weyl_level(ball_volume(n), n, count)
    for _ in range(MAX_DOUBLINGS):
        values, mults = _ball_values(n, level)
        if sum(mults) >= count:
            scale = 1.0 / ball.radius**2
            spectrum = Spectrum.from_values(
                np.asarray(values) * scale,
                Convention.DIRICHLET,
                n,
                rtol=MERGE_RTOL,
                multiplicities=mults,
            )
            return spectrum.truncate(count)
        level *= 2.0
    raise DomainError(f"ball enumeration did not reach {count} eigenvalues")


# ========== Unions ==========

def disjoint_union_spectrum(parts: Sequence[Spectrum]) -> Spectrum:
    """스펙트럼 multiset 합집합"""
    if not parts:
        raise DomainError("disjoint union of no domains")
    n = parts[0].dimension
    for part in parts:
        if part.convention != Convention.DIRICHLET:
            raise DomainError("disjoint unions combine Dirichlet spectra only")
        if part.dimension != n:
            raise DomainError("all parts must share the dimension")
    values = [e.value for part in parts for e in part.entries]
    mults = [e.multiplicity for part in parts for e in part.entries]
    return Spectrum.from_values(values, Convention.DIRICHLET, n, rtol=MERGE_RTOL, multiplicities=mults)


def ball_ratio(n: int) -> float:
    """lambda_2(B^n) / lambda_1(B^n)"""
    flat = ball_spectrum(BallSpec(dimension=n), n + 1).flatten()
    return float(flat[1] / flat[0])


def degeneration_experiment(k: int, n: int, count: Optional[int] = None) -> Tuple[InequalityReport, InequalityReport]:
    """
    같은 부피의 공 k개 합집합에서 lambda_{k+1}/lambda_k

    Returns:
        (sharp 상수 lambda_2(B)/lambda_1(B) 대비, Thompson 1 + 4/n 대비)
    """
    if k < 2:
        raise DomainError("degeneration needs k >= 2 balls")
    count = max(count or 0, n + 1)
    ball = ball_spectrum(BallSpec(dimension=n), count)
    union = disjoint_union_spectrum([ball] * k)
    ratio = union.eigenvalue(k + 1) / union.eigenvalue(k)
    sharp = ball.eigenvalue(2) / ball.eigenvalue(1)
    inputs = {"n": n, "balls": k}
    logger.info("degeneration k=%d n=%d: ratio %.12f", k, n, ratio)
    return (
        InequalityReport.build("degeneration_sharp", k, ratio, sharp, inputs=inputs),
        InequalityReport.build("degeneration_thompson", k, ratio, 1.0 + 4.0 / n, inputs=inputs),
    )
