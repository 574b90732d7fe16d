"""
Basis Service
S^n product grid (theta Gauss-Legendre x S^{n-1} product rule), 실수 구면조화함수, 고유함수 기저 EigenBasis
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import eigh
from scipy.special import eval_gegenbauer, roots_jacobi

from app.core.config import get_settings
from app.core.errors import DomainError
from app.core.numerics import gauss_legendre_rule, symmetric_eigendecomposition
from app.models.schemas import Convention, Spectrum
from app.services.sphere_service import (
    ConformalMetric,
    collect_branches,
    harmonic_multiplicity,
    scalar_curvature,
)

logger = logging.getLogger(__name__)


# ========== Sphere quadrature ==========

@lru_cache(maxsize=32)
def sphere_rule(d: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    S^d 위 product rule, 차수 degree 이하 다항식에 정확

    S^1 은 등간격, S^d 는 t 방향 Gauss-Jacobi(alpha = beta = (d-2)/2) x S^{d-1}

    Returns:
        (points (N, d+1), weights (N,)), weights 합 = vol(S^d)
    """
    if d < 1:
        raise DomainError(f"sphere dimension must be >= 1, got {d}")
    if d == 1:
        count = degree + 1
        angles = 2.0 * math.pi * np.arange(count) / count
        points = np.column_stack([np.cos(angles), np.sin(angles)])
        return points, np.full(count, 2.0 * math.pi / count)

    alpha = (d - 2) / 2.0
    t, wt = roots_jacobi(degree // 2 + 1, alpha, alpha)
    sub_points, sub_weights = sphere_rule(d - 1, degree)
    radius = np.sqrt(1.0 - t**2)
    points = np.concatenate(
        [np.column_stack([np.full(len(sub_points), ti), ri * sub_points]) for ti, ri in zip(t, radius)]
    )
    weights = np.concatenate([wi * sub_weights for wi in wt])
    return points, weights


# ========== Real spherical harmonics ==========

@dataclass(frozen=True)
class HarmonicSet:
    """S^d 위 차수 ell 조화함수의 정규직교 기저 (zonal 함수들의 선형결합)"""

    ell: int
    d: int
    centres: np.ndarray
    coefficients: np.ndarray

    def _alpha(self) -> float:
        return (self.d - 1) / 2.0

    def evaluate(self, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            values (N, m), tangential gradients (N, m, d+1)
        """
        sigma = np.atleast_2d(sigma)
        if self.ell == 0:
            level = self.coefficients[0, 0]
            return np.full((len(sigma), 1), level), np.zeros((len(sigma), 1, sigma.shape[1]))
        alpha = self._alpha()
        t = sigma @ self.centres.T
        zonal = eval_gegenbauer(self.ell, alpha, t)
        slope = 2.0 * alpha * eval_gegenbauer(self.ell - 1, alpha + 1.0, t)
        # grad of C(<sigma, c>) on the sphere: C'(t) (c - t sigma)
        tangent = self.centres[None, :, :] - t[:, :, None] * sigma[:, None, :]
        zonal_grad = slope[:, :, None] * tangent
        values = zonal @ self.coefficients
        grads = np.einsum("njd,jm->nmd", zonal_grad, self.coefficients)
        return values, grads


@lru_cache(maxsize=64)
def harmonic_set(ell: int, d: int, seed: int = 0) -> HarmonicSet:
    """
    2m 개의 결정적 random centre 에서 만든 zonal 함수를 Gram 고유분해로 정규직교화
    """
    if d < 2:
        raise DomainError("harmonic sets are built on S^d with d >= 2")
    if ell == 0:
        level = 1.0 / math.sqrt(float(sphere_rule(d, 0)[1].sum()))
        return HarmonicSet(0, d, np.zeros((1, d + 1)), np.array([[level]]))

    m = harmonic_multiplicity(ell, d + 1)
    rng = np.random.default_rng(seed * 1009 + ell)
    centres = rng.normal(size=(2 * m, d + 1))
    centres /= np.linalg.norm(centres, axis=1)[:, None]

    points, weights = sphere_rule(d, 2 * ell + 2)
    family = HarmonicSet(ell, d, centres, np.eye(2 * m))
    zonal, _ = family.evaluate(points)
    gram = zonal.T @ (weights[:, None] * zonal)
    vals, vecs = symmetric_eigendecomposition(gram)
    top = vecs[:, -m:] / np.sqrt(vals[-m:])[None, :]
    if vals[-m] <= 1e-10 * vals[-1]:
        raise DomainError(f"zonal family failed to span degree-{ell} harmonics")
    return HarmonicSet(ell, d, centres, top)


# ========== Product grid ==========

@dataclass(frozen=True)
class ProductGrid:
    """
    S^n 위 x = (cos theta, sin theta sigma) 격자와 metric 가중치

    volume_weights: dv_g, gradient_weights: |grad|^2 적분용 (round gradient 기준)
    """

    n: int
    theta: np.ndarray
    sigma: np.ndarray
    theta_index: np.ndarray
    sigma_index: np.ndarray
    points: np.ndarray
    e_theta: np.ndarray
    round_weights: np.ndarray
    volume_weights: np.ndarray
    gradient_weights: np.ndarray
    conformal: np.ndarray
    scalar: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.volume_weights, values))


def build_grid(
    n: int,
    metric: Optional[ConformalMetric] = None,
    theta_points: Optional[int] = None,
    fibre_degree: Optional[int] = None,
) -> ProductGrid:
    settings = get_settings()
    theta_points = theta_points or settings.grid_theta_points
    fibre_degree = fibre_degree or settings.grid_fibre_degree
    if n < 2:
        raise DomainError("product grids need n >= 2")
    if metric is not None and metric.dimension != n:
        raise DomainError("metric dimension does not match the grid")

    rule = gauss_legendre_rule(theta_points, 0.0, math.pi)
    sigma, w_sigma = sphere_rule(n - 1, fibre_degree)
    ti, si = np.meshgrid(np.arange(theta_points), np.arange(len(sigma)), indexing="ij")
    ti, si = ti.reshape(-1), si.reshape(-1)
    theta = rule.nodes[ti]
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    points = np.column_stack([cos_t, sin_t[:, None] * sigma[si]])
    e_theta = np.column_stack([-sin_t, cos_t[:, None] * sigma[si]])
    round_w = rule.weights[ti] * sin_t ** (n - 1) * w_sigma[si]

    if metric is None:
        f = np.zeros_like(theta)
        scalar = np.full_like(theta, float(n * (n - 1)))
    else:
        f = metric.conformal_factor(theta)
        scalar = scalar_curvature(metric.profile, theta)

    return ProductGrid(
        n=n,
        theta=rule.nodes,
        sigma=sigma,
        theta_index=ti,
        sigma_index=si,
        points=points,
        e_theta=e_theta,
        round_weights=round_w,
        volume_weights=round_w * np.exp(n * f),
        gradient_weights=round_w * np.exp((n - 2) * f),
        conformal=f,
        scalar=scalar,
    )


# ========== Grid functions ==========

@dataclass(frozen=True)
class GridFunction:
    """격자 위 함수값, round-metric gradient (ambient 좌표), Delta_g 값"""

    values: np.ndarray
    grads: np.ndarray
    laplacian: Optional[np.ndarray] = None

    def grad_sq(self, grid: ProductGrid) -> np.ndarray:
        """|grad_g f|_g^2 = e^{-2f} |grad_0 f|^2"""
        return np.exp(-2.0 * grid.conformal) * np.sum(self.grads**2, axis=-1)


# ========== Eigen basis ==========

@dataclass(frozen=True)
class ModeLabel:
    ell: int
    radial: int
    harmonic: int


@dataclass(frozen=True)
class EigenBasis:
    metric: ConformalMetric
    grid: ProductGrid
    eigenvalues: np.ndarray
    next_eigenvalue: float
    values: np.ndarray
    grads: np.ndarray
    laplacians: np.ndarray
    gram: np.ndarray
    labels: Tuple[ModeLabel, ...]
    laplacian_residual: float
    spectrum: Spectrum

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def combine(self, coeffs: np.ndarray) -> GridFunction:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.size,):
            raise DomainError(f"expected {self.size} coefficients, got {coeffs.shape}")
        return GridFunction(
            values=coeffs @ self.values,
            grads=np.einsum("i,ind->nd", coeffs, self.grads),
            laplacian=coeffs @ self.laplacians,
        )

    def pairings(self, h: np.ndarray) -> np.ndarray:
        """int h f_j dv_g, j = 0..size-1"""
        return self.values @ (self.grid.volume_weights * h)


def _mode_order(branches, rtol: float) -> List[Tuple[float, ModeLabel]]:
    raw = []
    for b in branches:
        for j, v in enumerate(b.values):
            for h in range(b.multiplicity):
                raw.append((float(v), ModeLabel(b.ell, j, h)))
    raw.sort(key=lambda item: (item[0], item[1].ell, item[1].radial, item[1].harmonic))
    # cluster ids make the order inside a degenerate eigenspace follow (ell, radial, harmonic)
    clusters = []
    cid, anchor = -1, None
    for v, _ in raw:
        if anchor is None or abs(v - anchor) > rtol * max(abs(v), abs(anchor), 1e-300):
            cid += 1
            anchor = v
        clusters.append(cid)
    order = sorted(range(len(raw)), key=lambda i: (clusters[i], raw[i][1].ell, raw[i][1].radial, raw[i][1].harmonic))
    return [raw[i] for i in order]


def radial_operator(n: int, ell: int, theta, f1, exp2f, T, T1, T2) -> np.ndarray:
    """
    Delta_g (T(theta) Y(sigma)) / Y
      = e^{-2f} [-T'' - ((n-1) cot + (n-2) f') T' + l(l+n-2) T / sin^2]
    """
    s = np.sin(theta)
    cot = np.cos(theta) / s
    return (-T2 - ((n - 1) * cot + (n - 2) * f1) * T1 + ell * (ell + n - 2) * T / s**2) / exp2f


# ========== Galerkin radial factors ==========

@dataclass(frozen=True)
class RadialFactors:
    """
    Branch l 의 radial 고유함수 T_j(theta) = sin^l theta * sum_i c_ij C_i^{(alpha)}(cos theta)

    alpha = l + (n-1)/2, round sphere 에서는 C_j 자체가 고유함수
    """

    ell: int
    alpha: float
    ritz_values: np.ndarray
    coefficients: np.ndarray

    def _polys(self, x: np.ndarray, order: int) -> np.ndarray:
        degree = self.coefficients.shape[0]
        out = np.zeros((len(x), degree))
        # d^r/dx^r C_j^a = 2^r (a)_r C_{j-r}^{a+r}
        scale = 2.0**order * math.prod(self.alpha + i for i in range(order))
        for j in range(order, degree):
            out[:, j] = scale * eval_gegenbauer(j - order, self.alpha + order, x)
        return out

    def evaluate(self, theta: np.ndarray, mode: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """T, T', T'' (theta 미분)"""
        c = self.coefficients[:, mode]
        s, x = np.sin(theta), np.cos(theta)
        P, P1, P2 = (self._polys(x, r) @ c for r in range(3))
        ell = self.ell
        sl = s**ell
        T = sl * P
        T1 = -s ** (ell + 1) * P1
        T2 = -ell * sl * P - (2 * ell + 1) * sl * x * P1 + s ** (ell + 2) * P2
        if ell >= 1:
            T1 = T1 + ell * s ** (ell - 1) * x * P
        if ell >= 2:
            T2 = T2 + ell * (ell - 1) * s ** (ell - 2) * x**2 * P
        return T, T1, T2


def radial_galerkin(metric: ConformalMetric, ell: int, modes: int, degree: Optional[int] = None) -> RadialFactors:
    """
    Branch l 의 Rayleigh-Ritz 고유쌍 (Gegenbauer 다항식 공간)

    stiffness  int (T'S' + l(l+n-2) T S / sin^2) e^{(n-2)f} sin^{n-1} dtheta
    mass       int T S e^{nf} sin^{n-1} dtheta
    """
    degree = degree or get_settings().radial_degree
    if modes > degree:
        raise DomainError(f"radial degree {degree} cannot resolve {modes} modes")
    n = metric.dimension
    rule = gauss_legendre_rule(2 * degree + 64, 0.0, math.pi)
    theta = rule.nodes
    f = metric.conformal_factor(theta)
    s, x = np.sin(theta), np.cos(theta)

    family = RadialFactors(ell, ell + (n - 1) / 2.0, np.zeros(degree), np.eye(degree))
    P = family._polys(x, 0)
    P1 = family._polys(x, 1)
    T = s[:, None] ** ell * P
    T1 = -(s ** (ell + 1))[:, None] * P1
    if ell >= 1:
        T1 = T1 + (ell * s ** (ell - 1) * x)[:, None] * P

    base = rule.weights * s ** (n - 1)
    w_mass = base * np.exp(n * f)
    w_stiff = base * np.exp((n - 2) * f)
    stiffness = T1.T @ (w_stiff[:, None] * T1)
    if ell >= 1:
        ang = (s ** (ell - 1))[:, None] * P
        stiffness += ell * (ell + n - 2) * ang.T @ (w_stiff[:, None] * ang)
    mass = T.T @ (w_mass[:, None] * T)

    d = 1.0 / np.sqrt(np.diag(mass))
    vals, vecs = eigh(
        d[:, None] * stiffness * d[None, :],
        d[:, None] * mass * d[None, :],
        subset_by_index=[0, modes - 1],
    )
    vecs = d[:, None] * vecs
    for j in range(modes):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    return RadialFactors(ell, family.alpha, vals, vecs)


def build_eigen_basis(
    metric: ConformalMetric,
    size: int,
    grid: Optional[ProductGrid] = None,
    seed: int = 0,
) -> EigenBasis:
    """
    처음 size개의 L^2(dv_g) 정규직교 고유함수 f_0..f_{size-1} 를 격자 위에 샘플링

    radial factor 는 Galerkin 고유함수, laplacians 는 그 다항식에 separated operator 를 직접 적용한 값
    f_0 은 상수 vol^{-1/2}, Cholesky 정규직교화는 f_0 을 보존
    """
    if size < 1:
        raise DomainError("basis size must be positive")
    settings = get_settings()
    n = metric.dimension
    grid = grid or build_grid(n, metric)
    branches = {b.ell: b for b in collect_branches(metric, size + 1)}
    ordered = _mode_order(branches.values(), settings.merge_rtol)

    all_vals = np.concatenate([b.values for b in branches.values()])
    all_mult = np.concatenate([np.full(len(b.values), b.multiplicity) for b in branches.values()])
    spectrum = Spectrum.from_values(all_vals, Convention.CLOSED, n, rtol=settings.merge_rtol, multiplicities=all_mult)
    flat = spectrum.flatten()
    if len(flat) < size + 1:
        raise DomainError(f"spectrum provides {len(flat)} eigenvalues, need {size + 1}")

    theta = grid.theta[grid.theta_index]
    _, f1, _ = metric.profile.evaluate(theta)
    exp2f = np.exp(2.0 * grid.conformal)
    sigma = grid.sigma[grid.sigma_index]
    pad = np.zeros((grid.size, 1))

    harmonics, factors = {}, {}
    values, grads, laps, labels = [], [], [], []
    for _, label in ordered[:size]:
        if label.ell not in factors:
            factors[label.ell] = radial_galerkin(metric, label.ell, len(branches[label.ell].values))
        T, T1, T2 = (part[grid.theta_index] for part in factors[label.ell].evaluate(grid.theta, label.radial))
        if label.ell not in harmonics:
            harmonics[label.ell] = harmonic_set(label.ell, n - 1, seed).evaluate(grid.sigma)
        y_vals, y_grads = harmonics[label.ell]
        Y = y_vals[grid.sigma_index, label.harmonic]
        dY = y_grads[grid.sigma_index, label.harmonic, :]

        values.append(T * Y)
        tangential = np.hstack([pad, dY]) * (T / np.sin(theta))[:, None]
        grads.append((T1 * Y)[:, None] * grid.e_theta + tangential)
        laps.append(radial_operator(n, label.ell, theta, f1, exp2f, T, T1, T2) * Y)
        labels.append(label)

    F = np.array(values)
    G = np.array(grads)
    L = np.array(laps)
    gram = F @ (grid.volume_weights[:, None] * F.T)
    chol = np.linalg.cholesky(gram)
    mix = np.linalg.inv(chol)
    F = mix @ F
    G = np.einsum("ij,jnd->ind", mix, G)
    L = mix @ L
    gram = F @ (grid.volume_weights[:, None] * F.T)

    eigenvalues = flat[:size].copy()
    resid = 0.0
    for i in range(size):
        diff = L[i] - eigenvalues[i] * F[i]
        err = math.sqrt(float(np.dot(grid.volume_weights, diff**2)))
        resid = max(resid, err / max(1.0, eigenvalues[i]))

    logger.info("eigen basis: %d functions, laplacian residual %.2e", size, resid)
    return EigenBasis(
        metric=metric,
        grid=grid,
        eigenvalues=eigenvalues,
        next_eigenvalue=float(flat[size]),
        values=F,
        grads=G,
        laplacians=L,
        gram=gram,
        labels=tuple(labels),
        laplacian_residual=resid,
        spectrum=spectrum,
    )
