"""
Verify Service
정리/고전 부등식을 스펙트럼과 metric 위에서 평가해 InequalityReport 로 반환
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from app.core.errors import DomainError, InequalityViolation
from app.models.schemas import BallSpec, Convention, EhiMode, InequalityReport, SobolevFlavor, Spectrum
from app.services.basis_service import GridFunction, ProductGrid
from app.services.dirichlet_service import MAX_BALL_DIM, ball_spectrum
from app.services.sphere_service import ConformalMetric, critical_norm, geometric_constants

logger = logging.getLogger(__name__)


# ========== Helpers ==========

def _flat(spec: Spectrum, convention: Convention, highest: int) -> np.ndarray:
    """highest 인덱스까지 필요한 flatten 배열 (인덱스 규약 그대로 사용)"""
    if spec.convention != convention:
        raise DomainError(f"expected a {convention.value} spectrum, got {spec.convention.value}")
    if spec.max_index() < highest:
        raise DomainError(
            f"spectrum reaches lambda_{spec.max_index()}, lambda_{highest} is required"
        )
    flat = spec.flatten()
    if convention == Convention.DIRICHLET:
        flat = np.concatenate([[np.nan], flat])
    return flat


def _positive(name: str, value: Optional[float]) -> float:
    if value is None:
        raise DomainError(f"parameter {name} is required")
    if not value > 0:
        raise DomainError(f"parameter {name} must be positive, got {value}")
    return float(value)


def _check_closed_dim(spec: Spectrum) -> int:
    n = spec.dimension
    if n < 3:
        raise DomainError(f"theorem requires n >= 3, got {n}")
    return n


def _gap_reports(
    name: str,
    lam: np.ndarray,
    kmax: int,
    coefficient: float,
    rhs: float,
    inputs: Dict[str, float],
) -> List[InequalityReport]:
    return [
        InequalityReport.build(name, k, lam[2 * k + 1] - coefficient * lam[2 * k], rhs, inputs=inputs)
        for k in range(1, kmax + 1)
    ]


# ========== Theorems on closed manifolds ==========

def check_thm1(spec: Spectrum, maxS: float, kmax: int) -> List[InequalityReport]:
    """lambda_{2k+1} - (1 + 4/(n-2)) lambda_{2k} <= maxS/(n-1)"""
    n = _check_closed_dim(spec)
    lam = _flat(spec, Convention.CLOSED, 2 * kmax + 1)
    return _gap_reports(
        "thm1", lam, kmax, 1.0 + 4.0 / (n - 2), maxS / (n - 1), {"n": n, "maxS": maxS}
    )


def check_thm1bis(spec: Spectrum, Y: float, Vc: float, supS: float, kmax: int) -> List[InequalityReport]:
    """Yamabe 상수와 conformal volume 으로 표현한 gap 부등식"""
    n = _check_closed_dim(spec)
    Y = _positive("Y", Y)
    Vc = _positive("Vc", Vc)
    lam = _flat(spec, Convention.CLOSED, 2 * kmax + 1)
    v2n = Vc ** (2.0 / n)
    coefficient = 1.0 + 4.0 * n * (n - 1) * v2n / ((n - 2) * Y)
    return _gap_reports(
        "thm1bis", lam, kmax, coefficient, n * v2n * supS / Y, {"n": n, "Y": Y, "Vc": Vc, "supS": supS}
    )


def check_thm2(spec: Spectrum, a: float, vol: float, Vc: float, kmax: int) -> List[InequalityReport]:
    """
    Ric >= (n-1) a^2 일 때 정규화 고유값 lambda_bar = lambda vol^{2/n} 의 gap 부등식
    """
    n = _check_closed_dim(spec)
    a = _positive("a", a)
    vol = _positive("vol", vol)
    Vc = _positive("Vc", Vc)
    lam = _flat(spec, Convention.CLOSED, 2 * kmax + 1) * vol ** (2.0 / n)
    v2n = Vc ** (2.0 / n)
    coefficient = 1.0 + 4.0 * v2n / ((n - 2) * a * a * vol ** (2.0 / n))
    return _gap_reports("thm2", lam, kmax, coefficient, n * v2n, {"n": n, "a": a, "vol": vol, "Vc": Vc})


def check_thm3(spec: Spectrum, C_iso: float, Vc: float, vol: float, kmax: int) -> List[InequalityReport]:
    """등주 상수 C_iso 만 가정한 gap 부등식"""
    n = _check_closed_dim(spec)
    C_iso = _positive("C_iso", C_iso)
    Vc = _positive("Vc", Vc)
    vol = _positive("vol", vol)
    consts = geometric_constants(n)
    lam = _flat(spec, Convention.CLOSED, 2 * kmax + 1) * vol ** (2.0 / n)
    v2n = Vc ** (2.0 / n)
    coefficient = 1.0 + 8.0 * consts.Cstar**2 * v2n / ((n - 2) * C_iso**2 * consts.w_n ** (2.0 / n))
    return _gap_reports(
        "thm3", lam, kmax, coefficient, 4.0 * n * v2n, {"n": n, "C_iso": C_iso, "Vc": Vc, "vol": vol}
    )


def check_ehi(spec: Spectrum, supH2: float, kmax: int, mode: EhiMode = EhiMode.GAP) -> List[InequalityReport]:
    """
    Euclidean/sphere immersion 의 mean curvature 로 쓴 부등식

    gap: lambda_{k+1} - (1 + 4/n) lambda_k <= supH2/n, k = 0..kmax
    quadratic: sum_{i<=k} (lambda_{k+1} - lambda_i)^2 <= (4/n) sum (lambda_{k+1} - lambda_i)(lambda_i + supH2/4)
    """
    mode = EhiMode(mode)
    n = spec.dimension
    lam = _flat(spec, Convention.CLOSED, kmax + 1)
    inputs = {"n": n, "supH2": supH2}
    reports = []
    for k in range(kmax + 1):
        if mode == EhiMode.GAP:
            reports.append(
                InequalityReport.build("ehi_gap", k, lam[k + 1] - (1.0 + 4.0 / n) * lam[k], supH2 / n, inputs=inputs)
            )
        else:
            d = lam[k + 1] - lam[: k + 1]
            lhs = float(np.sum(d * d))
            rhs = 4.0 / n * float(np.sum(d * (lam[: k + 1] + supH2 / 4.0)))
            reports.append(InequalityReport.build("ehi_quadratic", k, lhs, rhs, inputs=inputs))
    return reports


# ========== Dirichlet universal inequalities ==========

def _hile_protter(lam: np.ndarray, k: int, n: int) -> InequalityReport:
    gaps = lam[k + 1] - lam[1 : k + 1]
    lhs = k * n / 4.0
    if np.any(gaps <= 0):
        return InequalityReport.build("hile_protter", k, lhs, math.inf, inputs={"n": n}, applicable=False)
    return InequalityReport.build("hile_protter", k, lhs, float(np.sum(lam[1 : k + 1] / gaps)), inputs={"n": n})


def _yang(lam: np.ndarray, k: int, n: int) -> InequalityReport:
    d = lam[k + 1] - lam[1 : k + 1]
    lhs = float(np.sum(d * d))
    rhs = 4.0 / n * float(np.sum(d * lam[1 : k + 1]))
    return InequalityReport.build("yang", k, lhs, rhs, inputs={"n": n})


def _conjecture_rows(lam: np.ndarray, n: int, kmax: int) -> List[InequalityReport]:
    """미해결 추측들, 실패로 집계하지 않음"""
    if n > MAX_BALL_DIM:
        return []
    ball = ball_spectrum(BallSpec(dimension=n), n + 2).flatten()
    ball_ratio = ball[1] / ball[0]
    top = len(lam) - 1
    rows = []
    for k in range(1, kmax + 1):
        if k + 1 <= top:
            rows.append(
                InequalityReport.build(
                    "ppw_conjecture", k, lam[k + 1] / lam[k], ball_ratio, inputs={"n": n}, informational=True
                )
            )
        if 2 * k <= top:
            rows.append(
                InequalityReport.build(
                    "ratio_2k_k", k, lam[2 * k] / lam[k], ball_ratio, inputs={"n": n}, informational=True
                )
            )
    if n + 2 <= top:
        rows.append(
            InequalityReport.build(
                "ratio_n2_1", n + 2, lam[n + 2] / lam[1], ball[n + 1] / ball[0], inputs={"n": n}, informational=True
            )
        )
    if n + 1 <= top:
        rows.append(
            InequalityReport.build(
                "sum_ratio", n + 1, float(np.sum(lam[2 : n + 2])) / lam[1], n * ball_ratio,
                inputs={"n": n}, informational=True,
            )
        )
    return rows


@dataclass(frozen=True)
class ChainLink:
    k: int
    yang: bool
    hile_protter: bool
    thompson: bool

    @property
    def consistent(self) -> bool:
        if self.yang and not self.hile_protter:
            return False
        return not (self.hile_protter and not self.thompson)


def implication_chain(reports: Sequence[InequalityReport]) -> List[ChainLink]:
    """Yang => Hile-Protter => Thompson 을 k 별로 평가"""
    by_name: Dict[str, Dict[int, InequalityReport]] = {}
    for r in reports:
        by_name.setdefault(r.name, {})[r.k] = r
    links = []
    for k in sorted(by_name.get("yang", {})):
        hp = by_name.get("hile_protter", {}).get(k)
        th = by_name.get("thompson", {}).get(k)
        if hp is None or th is None:
            continue
        links.append(ChainLink(k, by_name["yang"][k].satisfied, hp.satisfied, th.satisfied))
    return links


def check_dirichlet_universal(spec: Spectrum, kmax: int, chain: bool = False) -> List[InequalityReport]:
    """
    PPW, Thompson, Hile-Protter, Yang 과 Ashbaugh-Benguria 비율, 그리고 informational 추측 행

    Args:
        chain: True 이면 Yang => Hile-Protter => Thompson 함의를 k 별로 확인
    """
    n = spec.dimension
    lam = _flat(spec, Convention.DIRICHLET, kmax + 1)
    inputs = {"n": n}
    thompson_bound = 1.0 + 4.0 / n

    reports = [InequalityReport.build("ppw", 1, lam[2] / lam[1], thompson_bound, inputs=inputs)]
    for k in range(1, kmax + 1):
        reports.append(InequalityReport.build("thompson", k, lam[k + 1] / lam[k], thompson_bound, inputs=inputs))
        reports.append(_hile_protter(lam, k, n))
        reports.append(_yang(lam, k, n))
    if n <= MAX_BALL_DIM:
        ball = ball_spectrum(BallSpec(dimension=n), n + 1).flatten()
        reports.append(InequalityReport.build("ashbaugh_benguria", 1, lam[2] / lam[1], ball[1] / ball[0], inputs=inputs))
    reports.extend(_conjecture_rows(lam, n, kmax))

    if chain:
        for link in implication_chain(reports):
            if not link.consistent:
                raise InequalityViolation(f"implication chain broken at k={link.k}: {link}")
    return reports


# ========== Sobolev inequalities ==========

@dataclass(frozen=True)
class SobolevSample:
    """
    격자 위 시험함수: 값, |grad_g f|_g^2, dv_g weights, S_g
    """

    values: np.ndarray
    grad_sq: np.ndarray
    weights: np.ndarray
    scalar: np.ndarray

    @classmethod
    def from_grid_function(cls, fn: GridFunction, grid: ProductGrid) -> "SobolevSample":
        return cls(fn.values, fn.grad_sq(grid), grid.volume_weights, grid.scalar)

    @classmethod
    def constant(cls, grid: ProductGrid, value: float = 1.0) -> "SobolevSample":
        ones = np.ones(grid.size)
        return cls(value * ones, np.zeros(grid.size), grid.volume_weights, grid.scalar)

    def l2(self) -> float:
        return float(np.dot(self.weights, self.values**2))

    def dirichlet_energy(self) -> float:
        return float(np.dot(self.weights, self.grad_sq))

    def scalar_energy(self) -> float:
        return float(np.dot(self.weights, self.scalar * self.values**2))


def _param(params: Mapping[str, float], key: str, default: Optional[float] = None) -> float:
    value = params.get(key, default)
    if value is None:
        raise DomainError(f"sobolev check needs parameter '{key}'")
    return float(value)


def check_sobolev(
    flavor: SobolevFlavor,
    metric: ConformalMetric,
    tests: Sequence[SobolevSample],
    params: Optional[Mapping[str, float]] = None,
) -> List[InequalityReport]:
    """
    ||f||^2_{2*} <= A ||grad f||^2 + B ||f||^2 형태의 Sobolev 부등식

    Args:
        flavor: aubin | hebey | ilias_ric (a) | ilias_gen (C_iso) | yamabe (Y, 기본 Y(S^n))
        params: maxS, vol, a, C_iso, Y
    """
    flavor = SobolevFlavor(flavor)
    params = dict(params or {})
    n = metric.dimension
    consts = geometric_constants(n)
    K2 = consts.K2
    vol = _param(params, "vol", metric.volume)

    if flavor == SobolevFlavor.AUBIN:
        grad_c, l2_c, used = K2, consts.w_n ** (-2.0 / n), {}
    elif flavor == SobolevFlavor.HEBEY:
        maxS = _param(params, "maxS", metric.maxS)
        grad_c, l2_c, used = K2, (n - 2) / (4.0 * (n - 1)) * K2 * maxS, {"maxS": maxS}
    elif flavor == SobolevFlavor.ILIAS_RIC:
        a = _positive("a", _param(params, "a"))
        grad_c = 4.0 / (n * (n - 2) * a * a * vol ** (2.0 / n))
        l2_c, used = vol ** (-2.0 / n), {"a": a, "vol": vol}
    elif flavor == SobolevFlavor.ILIAS_GEN:
        C_iso = _positive("C_iso", _param(params, "C_iso"))
        grad_c = 2.0 * K2 * consts.Cstar**2 / C_iso**2
        l2_c, used = 4.0 * vol ** (-2.0 / n), {"C_iso": C_iso, "vol": vol}
    else:
        Y = _positive("Y", _param(params, "Y", consts.Y_sphere))
        grad_c, l2_c, used = 4.0 * (n - 1) / ((n - 2) * Y), None, {"Y": Y}

    reports = []
    for i, test in enumerate(tests):
        lhs = critical_norm(test.values, metric, weights=test.weights)
        if l2_c is None:
            rhs = grad_c * test.dirichlet_energy() + test.scalar_energy() / used["Y"]
        else:
            rhs = grad_c * test.dirichlet_energy() + l2_c * test.l2()
        reports.append(InequalityReport.build(f"sobolev_{flavor.value}", i, lhs, rhs, inputs={"n": n, **used}))
    logger.debug("sobolev %s: %d test functions", flavor.value, len(reports))
    return reports


# ========== Gauss / Schwarz ==========

def gauss_schwarz_check(kappas: Sequence[float]) -> InequalityReport:
    """
    초곡면의 주곡률 kappa 로부터 S/(n-1) <= H^2/n (등호는 umbilic)
    """
    kappa = np.asarray(kappas, dtype=float)
    n = len(kappa)
    if n < 3:
        raise DomainError("need at least 3 principal curvatures")
    trace = float(kappa.sum())
    S = trace**2 - float(np.sum(kappa**2))
    H2 = trace**2
    return InequalityReport.build("gauss_schwarz", 0, S / (n - 1), H2 / n, inputs={"n": n, "S": S, "H2": H2})
