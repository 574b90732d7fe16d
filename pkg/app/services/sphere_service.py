"""
Sphere Service
S^n 위의 상수, round/radial-conformal 스펙트럼, 스칼라 곡률, critical Sobolev norm, Yamabe quotient

Laplacian 부호 규약: Delta_g = -div_g grad_g (양의 스펙트럼)
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from app.core.config import get_settings
from app.core.errors import DomainError, ProfileError
from app.core.numerics import (
    PoleCondition,
    SturmLiouvilleProblem,
    composite_gauss_rule,
    sturm_liouville_eigs,
)
from app.models.schemas import Convention, GeometricConstants, ProfileFamily, Spectrum

logger = logging.getLogger(__name__)

MIN_CONST_DIM = 3
MAX_CONST_DIM = 8


# ========== Closed forms ==========

def sphere_volume(n: int) -> float:
    """w_n = vol(S^n)"""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


def ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def harmonic_multiplicity(ell: int, n: int) -> int:
    """
    m(l, S^{n-1}): S^{n-1} 위 차수 l 구면조화함수 공간의 차원

    (2l+n-2)(l+n-3)! / (l!(n-2)!), l = 0 이면 1
    """
    if ell < 0 or n < 2:
        raise DomainError(f"invalid harmonic degree/dimension ({ell}, {n})")
    if ell == 0:
        return 1
    top = math.comb(ell + n - 1, n - 1)
    low = math.comb(ell + n - 3, n - 1) if ell >= 2 else 0
    return top - low


def geometric_constants(n: int) -> GeometricConstants:
    """K(n,2)^2, C*, Y(S^n) 등 n에 대한 closed-form 상수"""
    if not (MIN_CONST_DIM <= n <= MAX_CONST_DIM):
        raise DomainError(f"dimension {n} outside supported range [{MIN_CONST_DIM}, {MAX_CONST_DIM}]")
    w_n = sphere_volume(n)
    w_n1 = sphere_volume(n - 1)
    return GeometricConstants(
        n=n,
        w_n=w_n,
        K2=4.0 / (n * (n - 2) * w_n ** (2.0 / n)),
        Cstar=w_n1 / ball_volume(n) ** ((n - 1.0) / n),
        Y_sphere=n * (n - 1) * w_n ** (2.0 / n),
        Vc_default=w_n,
        C_iso_round=w_n1 / (w_n / 2.0) ** ((n - 1.0) / n),
    )


def round_spectrum(n: int, count: int) -> Spectrum:
    """
    Round S^n 스펙트럼의 처음 count개 entry

    k(k+n-1), 중복도 C(n+k, k) - C(n+k-2, k-2)
    """
    if n < 2:
        raise DomainError(f"dimension must be >= 2, got {n}")
    if count < 1:
        raise DomainError("count must be positive")
    values = [float(k * (k + n - 1)) for k in range(count)]
    mults = [harmonic_multiplicity(k, n + 1) for k in range(count)]
    return Spectrum.from_values(values, Convention.CLOSED, n, rtol=0.0, multiplicities=mults)


# ========== Radial profiles ==========

@dataclass(frozen=True)
class RadialProfile:
    """
    g = e^{2f(theta)} g_0 의 conformal exponent

    Use the factory classmethods; evaluate() returns (f, f', f'').
    """

    family: ProfileFamily
    dimension: int
    params: Dict[str, float] = field(default_factory=dict)
    spline: Optional[CubicSpline] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dimension < 3:
            raise ProfileError(f"conformal profiles need n >= 3, got {self.dimension}")

    # ---------- factories ----------

    @classmethod
    def constant(cls, c: float, n: int) -> "RadialProfile":
        return cls(ProfileFamily.CONSTANT, n, {"c": float(c)})

    @classmethod
    def cosine(cls, eps: float, n: int) -> "RadialProfile":
        return cls(ProfileFamily.COSINE, n, {"eps": float(eps)})

    @classmethod
    def bump(cls, center: float, width: float, height: float, n: int) -> "RadialProfile":
        if width <= 0:
            raise ProfileError("bump width must be positive")
        at_pole = center in (0.0, math.pi)
        if at_pole:
            if width >= math.pi:
                raise ProfileError("polar bump must not reach the opposite pole")
        elif center - width < 0.0 or center + width > math.pi:
            raise ProfileError(
                "bump support must lie inside [0, pi] or be centred at a pole (f'(pole) = 0)"
            )
        return cls(ProfileFamily.BUMP, n, {"center": float(center), "width": float(width), "height": float(height)})

    @classmethod
    def tabulated(
        cls,
        theta: np.ndarray,
        f: np.ndarray,
        n: int,
        slope_tol: float = 1e-4,
        curvature_limit: float = 1e4,
    ) -> "RadialProfile":
        theta = np.asarray(theta, dtype=float)
        f = np.asarray(f, dtype=float)
        if theta.ndim != 1 or theta.shape != f.shape or len(theta) < 4:
            raise ProfileError("tabulated profile needs >= 4 matching theta/f samples")
        if np.any(np.diff(theta) <= 0):
            raise ProfileError("theta samples must be strictly increasing")
        if abs(theta[0]) > 1e-12 or abs(theta[-1] - math.pi) > 1e-12:
            raise ProfileError("theta samples must cover [0, pi]")
        theta = theta.copy()
        theta[0], theta[-1] = 0.0, math.pi

        h = np.diff(theta)
        second = np.diff(np.diff(f) / h) / (0.5 * (h[1:] + h[:-1]))
        if not np.all(np.isfinite(second)) or np.max(np.abs(second)) > curvature_limit:
            raise ProfileError("tabulated profile is not C^2 (second difference unbounded)")

        spline = CubicSpline(theta, f, bc_type="not-a-knot")
        scale = 1.0 + float(np.max(np.abs(f)))
        slopes = spline([0.0, math.pi], 1)
        if np.max(np.abs(slopes)) > slope_tol * scale:
            raise ProfileError(
                f"pole smoothness violated: f'(0) = {slopes[0]:.3e}, f'(pi) = {slopes[1]:.3e}"
            )
        return cls(ProfileFamily.TABULATED, n, {"samples": float(len(theta))}, spline)

    @classmethod
    def from_csv(cls, path: Union[str, Path], n: int) -> "RadialProfile":
        """theta,f 두 컬럼 CSV"""
        frame = pd.read_csv(path)
        missing = {"theta", "f"} - set(frame.columns)
        if missing:
            raise ProfileError(f"profile CSV missing columns: {sorted(missing)}")
        return cls.tabulated(frame["theta"].to_numpy(), frame["f"].to_numpy(), n)

    # ---------- evaluation ----------

    def evaluate(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        zeros = np.zeros_like(theta)
        fam = self.family
        if fam == ProfileFamily.CONSTANT:
            return zeros + self.params["c"], zeros, zeros
        if fam == ProfileFamily.COSINE:
            eps = self.params["eps"]
            return eps * np.cos(theta), -eps * np.sin(theta), -eps * np.cos(theta)
        if fam == ProfileFamily.BUMP:
            return self._bump(theta)
        return self.spline(theta), self.spline(theta, 1), self.spline(theta, 2)

    def _bump(self, theta: np.ndarray):
        center, width, height = self.params["center"], self.params["width"], self.params["height"]
        r = (theta - center) / width
        s = 1.0 - r * r
        f = np.zeros_like(theta)
        f1 = np.zeros_like(theta)
        f2 = np.zeros_like(theta)
        # exp(1 - 1/s) is below 1e-43 once s < 1e-2
        inside = s > 1e-2
        ri, si = r[inside], s[inside]
        e = height * np.exp(1.0 - 1.0 / si)
        g1 = -2.0 * ri / si**2
        g2 = -2.0 / si**2 - 8.0 * ri**2 / si**3
        f[inside] = e
        f1[inside] = e * g1 / width
        f2[inside] = e * (g1**2 + g2) / width**2
        return f, f1, f2

    def describe(self) -> Dict[str, float]:
        out = {"n": float(self.dimension)}
        out.update(self.params)
        return out


def _cot_times_slope(theta: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """cot(theta) f'(theta), 극점에서는 극한값 f''(pole)"""
    s = np.sin(theta)
    near_pole = np.abs(s) < 1e-6
    out = np.empty_like(theta)
    out[~near_pole] = np.cos(theta[~near_pole]) / s[~near_pole] * f1[~near_pole]
    out[near_pole] = f2[near_pole]
    return out


def scalar_curvature(profile: RadialProfile, theta: np.ndarray) -> np.ndarray:
    """S_g = e^{-2f} (n(n-1) + 2(n-1) Delta_0 f - (n-1)(n-2) f'^2)"""
    n = profile.dimension
    theta = np.asarray(theta, dtype=float)
    f, f1, f2 = profile.evaluate(theta)
    lap0 = -f2 - (n - 1) * _cot_times_slope(theta, f1, f2)
    return np.exp(-2.0 * f) * (n * (n - 1) + 2.0 * (n - 1) * lap0 - (n - 1) * (n - 2) * f1**2)


def ricci_eigenvalues(profile: RadialProfile, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """g 기준으로 정규화한 (radial, tangential) Ricci 고유값"""
    n = profile.dimension
    theta = np.asarray(theta, dtype=float)
    f, f1, f2 = profile.evaluate(theta)
    cf = _cot_times_slope(theta, f1, f2)
    scale = np.exp(-2.0 * f)
    radial = (n - 1) * (1.0 - f2 - cf) * scale
    tangential = ((n - 1) - f2 - (2 * n - 3) * cf - (n - 2) * f1**2) * scale
    return radial, tangential


# ========== Conformal metric ==========

@dataclass(frozen=True)
class ConformalMetric:
    profile: RadialProfile
    dimension: int
    mesh: np.ndarray
    exp2f: np.ndarray
    density: np.ndarray
    scalar: np.ndarray
    volume: float
    maxS: float
    minS: float

    @property
    def is_round(self) -> bool:
        return self.profile.family == ProfileFamily.CONSTANT and self.profile.params["c"] == 0.0

    def conformal_factor(self, theta: np.ndarray) -> np.ndarray:
        return self.profile.evaluate(theta)[0]


def _polish_extremum(fn: Callable[[float], float], theta0: float, h: float, sign: float) -> Tuple[float, float]:
    lo, hi = max(0.0, theta0 - h), min(math.pi, theta0 + h)
    res = minimize_scalar(
        lambda t: -sign * fn(t),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x), float(-sign * res.fun)


def radial_metric_assemble(profile: RadialProfile, mesh_size: Optional[int] = None) -> ConformalMetric:
    """
    Profile로부터 ConformalMetric 샘플/부피/곡률 극값 계산

    Args:
        profile: radial conformal exponent
        mesh_size: working mesh 노드 수 (기본 settings.mesh_size)
    """
    settings = get_settings()
    n = profile.dimension
    size = mesh_size or settings.mesh_size
    mesh = np.linspace(0.0, math.pi, size)
    mesh[-1] = math.pi

    f, _, _ = profile.evaluate(mesh)
    scalar = scalar_curvature(profile, mesh)
    if not np.all(np.isfinite(scalar)):
        raise ProfileError("scalar curvature is not finite on the mesh")

    rule = composite_gauss_rule(settings.quad_order, 0.0, math.pi, settings.quad_panels)
    fq = profile.evaluate(rule.nodes)[0]
    volume = rule.integrate(np.exp(n * fq) * np.sin(rule.nodes) ** (n - 1)) * sphere_volume(n - 1)

    h = mesh[1] - mesh[0]
    s_at = lambda t: float(scalar_curvature(profile, np.array([t]))[0])
    i_max, i_min = int(np.argmax(scalar)), int(np.argmin(scalar))
    max_s = max(float(scalar[i_max]), _polish_extremum(s_at, mesh[i_max], h, +1.0)[1])
    min_s = min(float(scalar[i_min]), _polish_extremum(s_at, mesh[i_min], h, -1.0)[1])

    logger.debug("metric %s: vol=%.10g maxS=%.10g minS=%.10g", profile.family.value, volume, max_s, min_s)
    return ConformalMetric(
        profile=profile,
        dimension=n,
        mesh=mesh,
        exp2f=np.exp(2.0 * f),
        density=np.exp(n * f) * np.sin(mesh) ** (n - 1),
        scalar=scalar,
        volume=volume,
        maxS=max_s,
        minS=min_s,
    )


def round_metric(n: int, mesh_size: Optional[int] = None) -> ConformalMetric:
    return radial_metric_assemble(RadialProfile.constant(0.0, n), mesh_size)


def ricci_lower_bound(metric: ConformalMetric) -> float:
    """min over theta of the Ricci eigenvalues (relative to g)"""
    radial, tangential = ricci_eigenvalues(metric.profile, metric.mesh)
    return float(min(radial.min(), tangential.min()))


def ricci_parameter(metric: ConformalMetric) -> float:
    """Ric >= (n-1) a^2 를 만족하는 a"""
    low = ricci_lower_bound(metric)
    if low <= 0:
        raise DomainError(f"Ricci curvature is not positively bounded below (min {low:.4g})")
    return math.sqrt(low / (metric.dimension - 1))


# ========== Separated Laplacian branches ==========

@dataclass(frozen=True)
class BranchModes:
    """각 angular mode l 에 대한 radial 고유쌍"""

    ell: int
    multiplicity: int
    values: np.ndarray


def branch_problem(metric: ConformalMetric, ell: int, nodes: int) -> SturmLiouvilleProblem:
    n = metric.dimension
    profile = metric.profile
    lam_ang = ell * (ell + n - 2)

    def p(theta):
        return np.sin(theta) ** (n - 1) * np.exp((n - 2) * profile.evaluate(theta)[0])

    def q(theta):
        if lam_ang == 0:
            return np.zeros_like(theta)
        return lam_ang * np.exp((n - 2) * profile.evaluate(theta)[0]) * np.sin(theta) ** (n - 3)

    def rho(theta):
        return np.exp(n * profile.evaluate(theta)[0]) * np.sin(theta) ** (n - 1)

    pole = PoleCondition.NATURAL if ell == 0 else PoleCondition.VALUE_ZERO
    return SturmLiouvilleProblem.uniform(p, q, rho, nodes, (pole, pole))


def radial_modes(
    metric: ConformalMetric,
    ell: int,
    modes: int,
    mesh_size: Optional[int] = None,
    extrapolate: Optional[bool] = None,
) -> BranchModes:
    """
    Branch l 의 가장 낮은 modes개 고유값

    extrapolate=True 이면 mesh N, N/2 결과를 Richardson 결합
    """
    settings = get_settings()
    size = mesh_size or len(metric.mesh)
    extrapolate = settings.extrapolate if extrapolate is None else extrapolate
    coarse_cells = max(2, (size - 1) // 2)
    fine_nodes = 2 * coarse_cells + 1 if extrapolate else size
    modes = min(modes, coarse_cells - 2 if extrapolate else size - 3)

    fine = sturm_liouville_eigs(branch_problem(metric, ell, fine_nodes), modes)
    values = np.array([v for v, _ in fine])

    if extrapolate:
        coarse = sturm_liouville_eigs(branch_problem(metric, ell, coarse_cells + 1), modes)
        coarse_vals = np.array([v for v, _ in coarse])
        values = (4.0 * values - coarse_vals) / 3.0

    if ell == 0:
        values[0] = 0.0

    return BranchModes(
        ell=ell,
        multiplicity=harmonic_multiplicity(ell, metric.dimension),
        values=values,
    )


def collect_branches(
    metric: ConformalMetric,
    count: int,
    mesh_size: Optional[int] = None,
    merge_rtol: Optional[float] = None,
    extrapolate: Optional[bool] = None,
) -> List[BranchModes]:
    """
    count 번째 고유값 이하를 빠짐없이 덮는 branch 목록

    branch 최저값은 l 에 대해 비감소이므로, 최저값이 현재 count번째 값을 넘으면 중단
    """
    settings = get_settings()
    rtol = settings.merge_rtol if merge_rtol is None else merge_rtol
    branches: List[BranchModes] = []
    ell = 0
    while True:
        mult = harmonic_multiplicity(ell, metric.dimension)
        modes = max(2, math.ceil(count / mult) + 1)
        branch = radial_modes(metric, ell, modes, mesh_size, extrapolate)
        if branches:
            flat = np.sort(np.concatenate([np.repeat(b.values, b.multiplicity) for b in branches]))
            if len(flat) >= count and branch.values[0] > flat[count - 1] * (1.0 + rtol):
                break
        branches.append(branch)
        logger.debug("branch l=%d: lowest %.10g (x%d)", ell, branch.values[0], mult)
        ell += 1
    return branches


def conformal_spectrum(
    metric: ConformalMetric,
    count: int,
    mesh_size: Optional[int] = None,
    merge_rtol: Optional[float] = None,
    extrapolate: Optional[bool] = None,
) -> Spectrum:
    """
    Radial conformal metric의 Laplace-Beltrami 스펙트럼

    count는 중복도 포함 고유값 개수, 마지막 클러스터는 온전히 유지
    """
    if count < 1:
        raise DomainError("count must be positive")
    settings = get_settings()
    rtol = settings.merge_rtol if merge_rtol is None else merge_rtol
    branches = collect_branches(metric, count, mesh_size, rtol, extrapolate)
    values = np.concatenate([b.values for b in branches])
    mults = np.concatenate([np.full(len(b.values), b.multiplicity) for b in branches])
    spectrum = Spectrum.from_values(values, Convention.CLOSED, metric.dimension, rtol=rtol, multiplicities=mults)
    return spectrum.truncate(count)


# ========== Sobolev / Yamabe ==========

def _critical_exponent(n: int) -> float:
    return 2.0 * n / (n - 2.0)


def _radial_integral(values: np.ndarray, metric: ConformalMetric) -> float:
    return float(simpson(values * metric.density, x=metric.mesh)) * sphere_volume(metric.dimension - 1)


def critical_norm(u: np.ndarray, metric: ConformalMetric, weights: Optional[np.ndarray] = None) -> float:
    """
    (int |u|^{2n/(n-2)} dv_g)^{(n-2)/n}

    Args:
        u: working mesh 위 radial 샘플, 또는 weights가 주어지면 product grid 샘플
        weights: product grid의 dv_g quadrature weights
    """
    n = metric.dimension
    power = np.abs(np.asarray(u, dtype=float)) ** _critical_exponent(n)
    total = float(np.dot(weights, power)) if weights is not None else _radial_integral(power, metric)
    return total ** ((n - 2.0) / n)


def yamabe_quotient(
    u: np.ndarray,
    metric: ConformalMetric,
    weights: Optional[np.ndarray] = None,
    grad_sq: Optional[np.ndarray] = None,
    scalar: Optional[np.ndarray] = None,
) -> float:
    """
    (int 4(n-1)/(n-2)|grad u|^2 + S_g u^2 dv_g) / critical_norm(u)

    Radial 샘플은 np.gradient로 미분; product grid 샘플은 grad_sq(|grad_g u|^2_g)와 scalar를 함께 전달
    """
    n = metric.dimension
    u = np.asarray(u, dtype=float)
    denom = critical_norm(u, metric, weights)
    if denom <= 0:
        raise DomainError("Yamabe quotient of the zero function is undefined")
    coef = 4.0 * (n - 1) / (n - 2)
    if weights is None:
        du = np.gradient(u, metric.mesh, edge_order=2)
        integrand = coef * du**2 / metric.exp2f + metric.scalar * u**2
        num = _radial_integral(integrand, metric)
    else:
        if grad_sq is None or scalar is None:
            raise DomainError("grid samples need grad_sq and scalar")
        num = float(np.dot(weights, coef * grad_sq + scalar * u**2))
    return num / denom
