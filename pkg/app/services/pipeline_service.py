"""
Pipeline Service
Trial-function 구성 전체: density measure -> balancing -> field F 의 zero -> G_q 대각화 -> gap certificate
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import least_squares

from app.core.config import Settings, get_settings
from app.core.errors import (
    BalancingInfeasible,
    DomainError,
    InequalityViolation,
    NonConvergence,
    NumericalFailure,
)
from app.core.numerics import symmetric_eigendecomposition
from app.models.schemas import InequalityReport, TrialReport
from app.services.basis_service import (
    EigenBasis,
    GridFunction,
    ProductGrid,
    build_eigen_basis,
    build_grid,
)
from app.services.moebius_service import (
    BallPoint,
    DiscreteMeasure,
    coordinate_gradients,
    moebius_map,
    solve_balance,
)
from app.services.sphere_service import (
    ConformalMetric,
    critical_norm,
    geometric_constants,
    sphere_volume,
)

logger = logging.getLogger(__name__)

MAX_K = 5
ENERGY_RADIUS = 0.9
LINK_SLACK = 1e-6
FRAME_CLUSTER_RTOL = 1e-6
ADMISSIBILITY_TOL = 1e-7


# ========== Embeddings ==========

def check_embedding(embedding: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    """Q: (m+1, n+1), 정규직교 열 (선형 등거리 S^n -> S^m)"""
    if embedding is None:
        return None
    Q = np.asarray(embedding, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != n + 1 or Q.shape[0] < n + 1:
        raise DomainError(f"embedding must have shape (m+1, {n + 1}) with m >= {n}, got {Q.shape}")
    if np.max(np.abs(Q.T @ Q - np.eye(n + 1))) > 1e-12:
        raise DomainError("embedding columns are not orthonormal")
    return Q


def _images(grid: ProductGrid, embedding: Optional[np.ndarray]) -> np.ndarray:
    return grid.points if embedding is None else grid.points @ embedding.T


# ========== Density measure / field F ==========

def _unit(p: np.ndarray, size: int) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != (size,):
        raise DomainError(f"point on S^{size - 1} needs {size} coordinates, got {p.shape}")
    if abs(float(p @ p) - 1.0) > 1e-8:
        raise DomainError("point must lie on the unit sphere")
    return p


def density_measure(p: np.ndarray, basis: EigenBasis, embedding: Optional[np.ndarray] = None) -> DiscreteMeasure:
    """
    dmu_p = (sum p_i f_i)^2 dv_g 를 격자 quadrature 로 표현

    embedding 이 주어지면 점은 Q x 로 push
    """
    p = _unit(p, basis.size)
    u = p @ basis.values
    return DiscreteMeasure(_images(basis.grid, embedding), basis.grid.volume_weights * u * u)


@dataclass(frozen=True)
class FieldEvaluation:
    value: np.ndarray
    xi: BallPoint
    balance_residual: float
    direction: np.ndarray


def field_evaluation(
    p: np.ndarray,
    basis: EigenBasis,
    embedding: Optional[np.ndarray] = None,
    start: Optional[np.ndarray] = None,
    tol: Optional[float] = None,
) -> FieldEvaluation:
    """
    h(p, x) = X_w(phi_xi(x)) u(x), w = G_p 대각화 frame 의 열 합 (trial_frame)

    G_p 가 스칼라이면 w = (1, ..., 1)
    """
    tol = get_settings().pipeline_balance_tol if tol is None else tol
    p = _unit(p, basis.size)
    mu = density_measure(p, basis, embedding)
    balanced = solve_balance(mu, tol, start)
    images = moebius_map(balanced.point, mu.points)
    u = basis.combine(p)
    G = _form_matrix(u, balanced.point.coords, images, basis, embedding)
    _, frame = trial_frame(G)
    w = frame.sum(axis=1)
    h = (images @ w) * u.values
    return FieldEvaluation(basis.pairings(h), balanced.point, balanced.residual_norm, w)


def evaluate_field_F(p: np.ndarray, basis: EigenBasis, embedding: Optional[np.ndarray] = None) -> np.ndarray:
    """F(p)_j = int h(p, x) f_j dv_g"""
    return field_evaluation(p, basis, embedding).value


def lipschitz_probe(
    basis: EigenBasis,
    pairs: int = 100,
    radius: float = 1e-3,
    seed: int = 0,
    embedding: Optional[np.ndarray] = None,
) -> float:
    """가까운 점 쌍에서 관측한 |F(p) - F(p')| / |p - p'| 의 최대값 (보고용)"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        p = rng.normal(size=basis.size)
        p /= np.linalg.norm(p)
        p2 = p + radius * rng.normal(size=basis.size)
        p2 /= np.linalg.norm(p2)
        a = field_evaluation(p, basis, embedding)
        b = field_evaluation(p2, basis, embedding, start=a.xi.coords)
        worst = max(worst, float(np.linalg.norm(a.value - b.value) / np.linalg.norm(p - p2)))
    return worst


# ========== Zero search ==========

@dataclass
class SeedOutcome:
    index: int
    q: np.ndarray
    evaluation: Optional[FieldEvaluation]
    norm: float


class _SeedRun:
    """단일 seed 의 projected descent + Levenberg-Marquardt polish (xi warm start)"""

    def __init__(self, basis: EigenBasis, embedding, tol: float):
        self.basis = basis
        self.embedding = embedding
        self.tol = tol
        self.xi: Optional[np.ndarray] = None

    def field(self, y: np.ndarray) -> FieldEvaluation:
        p = y / np.linalg.norm(y)
        ev = field_evaluation(p, self.basis, self.embedding, start=self.xi, tol=self.tol)
        self.xi = ev.xi.coords
        return ev

    def descend(self, p: np.ndarray, iterations: int = 30, target: float = 1e-4) -> np.ndarray:
        ev = self.field(p)
        value = float(ev.value @ ev.value)
        h = 1e-6
        for _ in range(iterations):
            if math.sqrt(value) <= target:
                break
            J = np.empty((len(p), len(p)))
            for i in range(len(p)):
                step = p.copy()
                step[i] += h
                J[:, i] = (self.field(step).value - ev.value) / h
            grad = 2.0 * J.T @ ev.value
            tangent = grad - (grad @ p) * p
            gnorm2 = float(tangent @ tangent)
            if gnorm2 == 0.0:
                break
            alpha = value / gnorm2
            accepted = False
            while alpha > 1e-12:
                trial = p - alpha * tangent
                trial /= np.linalg.norm(trial)
                ev_trial = self.field(trial)
                v_trial = float(ev_trial.value @ ev_trial.value)
                if v_trial <= value - 1e-4 * alpha * gnorm2:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            p, ev, value = trial, ev_trial, v_trial
        return p

    def polish(self, p: np.ndarray) -> np.ndarray:
        res = least_squares(
            lambda y: np.concatenate([self.field(y).value, [y @ y - 1.0]]),
            p,
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=100 * (len(p) + 1),
        )
        return res.x / np.linalg.norm(res.x)


def _run_seed(index: int, start: np.ndarray, basis: EigenBasis, embedding, settings: Settings) -> SeedOutcome:
    run = _SeedRun(basis, embedding, settings.pipeline_balance_tol)
    try:
        p = run.descend(start)
        q = run.polish(p)
        ev = run.field(q)
    except BalancingInfeasible as exc:
        logger.warning("seed %d: balancing failed (%s)", index, exc)
        return SeedOutcome(index, start, None, math.inf)
    norm = float(np.linalg.norm(ev.value))
    logger.debug("seed %d: |F(q)| = %.3e", index, norm)
    return SeedOutcome(index, q, ev, norm)


def search_zero(
    basis: EigenBasis,
    embedding: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> SeedOutcome:
    """
    Multi-seed zero search, batch 단위 병렬 실행

    성공 batch 가 나오면 중단; 결과는 (residual, seed index) 순으로 결정적 선택
    """
    settings = settings or get_settings()
    seed = settings.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    starts = rng.normal(size=(settings.zero_seeds, basis.size))
    starts /= np.linalg.norm(starts, axis=1)[:, None]

    best: Optional[SeedOutcome] = None
    batch = settings.seed_batch
    workers = max(1, min(settings.threads, batch))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for lo in range(0, len(starts), batch):
            idx = range(lo, min(lo + batch, len(starts)))
            outcomes = list(pool.map(lambda i: _run_seed(i, starts[i], basis, embedding, settings), idx))
            for out in outcomes:
                if best is None or (out.norm, out.index) < (best.norm, best.index):
                    best = out
            if best is not None and best.norm <= settings.zero_tol:
                return best

    raise NonConvergence(
        f"all {len(starts)} seeds stalled above {settings.zero_tol:g}",
        residual_norm=best.norm if best else math.inf,
        best=None if best is None else best.q,
        iterations=len(starts),
    )


# ========== Bilinear form ==========

@dataclass(frozen=True)
class BilinearForm:
    matrix: np.ndarray
    asymmetry: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    offdiag_max: float

    def rotated(self) -> np.ndarray:
        return self.eigenvectors.T @ self.matrix @ self.eigenvectors


def _form_matrix(
    u: GridFunction,
    xi: np.ndarray,
    images: np.ndarray,
    basis: EigenBasis,
    embedding: Optional[np.ndarray],
) -> np.ndarray:
    grid = basis.grid
    dv = coordinate_gradients(xi, grid.points, embedding=embedding)
    mass = basis.next_eigenvalue * (images.T @ ((grid.volume_weights * u.values**2)[:, None] * images))
    prod = u.values[:, None, None] * dv + images[:, :, None] * u.grads[:, None, :]
    energy = np.einsum("n,nad,nbd->ab", grid.gradient_weights, prod, prod)
    return mass - energy


def trial_frame(G: np.ndarray, rtol: float = FRAME_CLUSTER_RTOL) -> Tuple[np.ndarray, np.ndarray]:
    """
    G 를 대각화하는 정규직교 frame (열 e_i), 열 합이 (1, ..., 1) 에 가장 가깝도록 선택

    단순 고유값은 <e_i, 1> >= 0 인 부호, 상대차 rtol 이하로 묶인 클러스터 안에서는
    열 합이 1 의 클러스터 사영 방향 (길이 sqrt(dim)) 이 되도록 Householder 회전

    Returns:
        (오름차순 고유값, frame)
    """
    vals, vecs = symmetric_eigendecomposition(G)
    size = len(vals)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    ones = np.ones(size)
    frame = np.empty_like(vecs)
    lo = 0
    while lo < size:
        hi = lo + 1
        while hi < size and vals[hi] - vals[hi - 1] <= rtol * scale:
            hi += 1
        block = vecs[:, lo:hi]
        dim = hi - lo
        proj = block.T @ ones
        norm = float(np.linalg.norm(proj))
        target = proj / norm if norm > 1e-12 else np.eye(dim)[0]
        h = np.full(dim, 1.0 / math.sqrt(dim)) - target
        hh = float(h @ h)
        # maps 1/sqrt(dim) onto target
        reflect = np.eye(dim) if hh < 1e-30 else np.eye(dim) - 2.0 * np.outer(h, h) / hh
        frame[:, lo:hi] = block @ reflect
        lo = hi
    return vals, frame


def assemble_bilinear_form(
    q: np.ndarray,
    xi: Union[BallPoint, np.ndarray],
    basis: EigenBasis,
    embedding: Optional[np.ndarray] = None,
    u: Optional[GridFunction] = None,
) -> BilinearForm:
    """
    G_q(v, w) = lambda_{2k+1} int X_v X_w dmu_q - int <grad(X_v u), grad(X_w u)> dv_g

    Returns:
        대칭화 전 비대칭 크기와 trial_frame 대각화 기저 (열벡터 e_i)
    """
    q = _unit(q, basis.size)
    Y = _images(basis.grid, embedding)
    xi_arr = xi.coords if isinstance(xi, BallPoint) else np.asarray(xi, dtype=float)
    if xi_arr.shape != (Y.shape[1],):
        raise DomainError(f"xi lives in R^{Y.shape[1]}, got shape {xi_arr.shape}")

    u = u or basis.combine(q)
    G = _form_matrix(u, xi_arr, moebius_map(xi_arr, Y), basis, embedding)

    scale = max(float(np.max(np.abs(G))), 1e-300)
    asym = float(np.max(np.abs(G - G.T)))
    S = 0.5 * (G + G.T)
    vals, frame = trial_frame(S)
    # diagonalization residual; rotations inside a cluster only mix eigenvalues within rtol
    _, vecs = symmetric_eigendecomposition(S)
    R = vecs.T @ S @ vecs
    off = R - np.diag(np.diag(R))
    return BilinearForm(
        matrix=S,
        asymmetry=asym,
        eigenvalues=vals,
        eigenvectors=frame,
        offdiag_max=float(np.max(np.abs(off))) / scale,
    )


def admissibility_defect(
    form: BilinearForm,
    xi: np.ndarray,
    basis: EigenBasis,
    u: GridFunction,
    embedding: Optional[np.ndarray] = None,
) -> float:
    """
    회전된 함수 (sum_i X_{e_i} o phi) u 의 f_0..f_2k pairing 최대값

    frame 은 field 와 같은 trial_frame 이므로 vanishing point 에서 |F(q)| 이하
    """
    v = moebius_map(xi, _images(basis.grid, embedding)) @ form.eigenvectors
    pair = basis.pairings(v.sum(axis=1) * u.values)
    return float(np.max(np.abs(pair)))


# ========== Identities ==========

def product_rule_residual(u: GridFunction, v: GridFunction, grid: ProductGrid) -> float:
    """
    |int |grad(vu)|^2 - int v^2 u Delta_g u - int u^2 |grad v|^2| / int |grad(vu)|^2

    u.laplacian 은 u 의 실제 Delta_g 샘플이어야 함 (EigenBasis.combine)
    """
    if u.laplacian is None:
        raise DomainError("u needs Laplacian samples")
    # all terms against dv_g, |grad_g w|_g^2 = e^{-2f} |grad_0 w|^2
    dv = grid.volume_weights
    prod = GridFunction(u.values * v.values, v.values[:, None] * u.grads + u.values[:, None] * v.grads)
    lhs = float(np.dot(dv, prod.grad_sq(grid)))
    first = float(np.dot(dv, v.values**2 * u.values * u.laplacian))
    second = float(np.dot(dv, u.values**2 * v.grad_sq(grid)))
    diff = abs(lhs - first - second)
    if lhs == 0.0:
        return diff
    return diff / lhs


@lru_cache(maxsize=8)
def _energy_grid(n: int, theta_points: int, fibre_degree: int) -> ProductGrid:
    return build_grid(n, None, theta_points, fibre_degree)


def conformal_energy(
    xi: Union[BallPoint, np.ndarray],
    n: int,
    theta_points: Optional[int] = None,
    fibre_degree: Optional[int] = None,
) -> float:
    """
    (int (sum_i |grad (X_{e_i} o phi_xi)|^2)^{n/2} dv)^{2/n} on round S^n, 기대값 n w_n^{2/n}
    """
    settings = get_settings()
    xi_arr = xi.coords if isinstance(xi, BallPoint) else np.asarray(xi, dtype=float)
    if xi_arr.shape != (n + 1,):
        raise DomainError(f"xi must lie in R^{n + 1}")
    if np.linalg.norm(xi_arr) > ENERGY_RADIUS:
        raise DomainError(f"|xi| must be <= {ENERGY_RADIUS} for the energy quadrature")
    grid = _energy_grid(
        n,
        theta_points or settings.energy_theta_points,
        fibre_degree or settings.energy_fibre_degree,
    )
    grads = coordinate_gradients(xi_arr, grid.points)
    density = np.sum(grads**2, axis=(1, 2))
    return float(np.dot(grid.round_weights, density ** (n / 2.0))) ** (2.0 / n)


# ========== Trial data ==========

@dataclass
class TrialData:
    n: int
    k: int
    q: np.ndarray
    xi: BallPoint
    eigvecs: np.ndarray
    g_eigenvalues: np.ndarray
    u: GridFunction
    gap_lhs: float
    certificate: float
    hebey_bound: Optional[float]
    energy_sum: float
    holder_bound: float
    tangency: float
    field_norm: float
    balance_residual: float
    offdiag_max: float
    asymmetry: float
    admissibility_defect: float
    seed: int
    reports: List[InequalityReport] = field(default_factory=list)
    stages: Dict[str, float] = field(default_factory=dict)

    @property
    def links(self) -> Dict[str, float]:
        return {r.name: r.margin for r in self.reports}

    def to_report(self) -> TrialReport:
        return TrialReport(
            n=self.n,
            k=self.k,
            q=self.q.tolist(),
            xi=self.xi.coords.tolist(),
            g_eigenvalues=self.g_eigenvalues.tolist(),
            gap_lhs=self.gap_lhs,
            certificate=self.certificate,
            hebey_bound=self.hebey_bound,
            energy_bound=self.holder_bound,
            links=self.links,
            tangency=self.tangency,
            field_norm=self.field_norm,
            balance_residual=self.balance_residual,
            offdiag_max=self.offdiag_max,
            asymmetry=self.asymmetry,
            admissibility_defect=self.admissibility_defect,
            seed=self.seed,
            reports=self.reports,
        )


def _link(name: str, k: int, lhs: float, rhs: float, informational: bool = False) -> InequalityReport:
    return InequalityReport.build(
        name, k, lhs, rhs, tol=LINK_SLACK * (1.0 + abs(rhs)), informational=informational
    )


class PipelineService:
    """Gap certificate 파이프라인 (stage 별 소요시간 기록)"""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    def complete_trial(
        self,
        basis: EigenBasis,
        zero: SeedOutcome,
        Vc: Optional[float] = None,
        embedding: Optional[np.ndarray] = None,
        seed: Optional[int] = None,
    ) -> TrialData:
        n = basis.metric.dimension
        k = (basis.size - 1) // 2
        grid = basis.grid
        q, ev = zero.q, zero.evaluation
        u = basis.combine(q)
        form = assemble_bilinear_form(q, ev.xi, basis, embedding, u)

        crit = critical_norm(u.values, basis.metric, weights=grid.volume_weights)
        vc = sphere_volume(n) if Vc is None else float(Vc)
        certificate = n * vc ** (2.0 / n) * crit

        dv = coordinate_gradients(ev.xi, grid.points, embedding=embedding)
        density = np.sum(dv**2, axis=(1, 2))
        energy_sum = float(np.dot(grid.gradient_weights, u.values**2 * density))
        conf = float(np.dot(grid.round_weights, density ** (n / 2.0))) ** (2.0 / n)
        holder = conf * crit

        gap = basis.next_eigenvalue - basis.eigenvalues[-1]
        hebey = None
        if Vc is None and embedding is None:
            consts = geometric_constants(n)
            w2n = consts.w_n ** (2.0 / n)
            hebey = n * w2n * (consts.K2 * basis.eigenvalues[-1] + basis.metric.maxS / (n * (n - 1) * w2n))

        reports = [
            _link("gap<=certificate", k, gap, certificate),
            _link("energy<=holder", k, energy_sum, holder),
            _link("gap<=energy", k, gap, energy_sum, informational=True),
            _link("holder<=certificate", k, holder, certificate, informational=True),
        ]
        if hebey is not None:
            reports.append(_link("certificate<=hebey", k, certificate, hebey))

        value = ev.value
        return TrialData(
            n=n,
            k=k,
            q=q,
            xi=ev.xi,
            eigvecs=form.eigenvectors,
            g_eigenvalues=form.eigenvalues,
            u=u,
            gap_lhs=float(gap),
            certificate=certificate,
            hebey_bound=hebey,
            energy_sum=energy_sum,
            holder_bound=holder,
            tangency=abs(float(value @ q)),
            field_norm=float(np.linalg.norm(value)),
            balance_residual=ev.balance_residual,
            offdiag_max=form.offdiag_max,
            asymmetry=form.asymmetry,
            admissibility_defect=admissibility_defect(form, ev.xi.coords, basis, u, embedding),
            seed=self.settings.seed if seed is None else seed,
            reports=reports,
        )

    def find_vanishing_point(
        self,
        basis: EigenBasis,
        Vc: Optional[float] = None,
        embedding: Optional[np.ndarray] = None,
        seed: Optional[int] = None,
    ) -> TrialData:
        if basis.size % 2 == 0 or basis.size > 2 * MAX_K + 1:
            raise DomainError(f"basis size must be 2k+1 with k <= {MAX_K}, got {basis.size}")
        embedding = check_embedding(embedding, basis.metric.dimension)
        zero = search_zero(basis, embedding, seed, self.settings)
        return self.complete_trial(basis, zero, Vc, embedding, seed)

    def certify(
        self,
        k: int,
        metric: ConformalMetric,
        Vc: Optional[float] = None,
        embedding: Optional[np.ndarray] = None,
        seed: Optional[int] = None,
    ) -> TrialData:
        """
        gap_lhs <= certificate 를 검증한 TrialData 반환

        Raises:
            NumericalFailure: 회전된 trial function 의 pairing 이 1e-7 초과
            InequalityViolation: gap_lhs > certificate + 1e-6 (1 + |certificate|)
        """
        if not (1 <= k <= MAX_K):
            raise DomainError(f"k must lie in [1, {MAX_K}], got {k}")
        if Vc is not None and Vc <= 0:
            raise DomainError("conformal volume must be positive")
        stages: Dict[str, float] = {}

        # ========== Stage 1: eigen basis ==========
        t0 = time.time()
        basis = build_eigen_basis(metric, 2 * k + 1)
        stages["eigen_basis"] = (time.time() - t0) * 1000

        # ========== Stage 2: vanishing point ==========
        t0 = time.time()
        embedding = check_embedding(embedding, metric.dimension)
        zero = search_zero(basis, embedding, seed, self.settings)
        stages["zero_search"] = (time.time() - t0) * 1000
        logger.info("vanishing point: |F(q)| = %.2e", zero.norm)

        # ========== Stage 3: bilinear form + certificate ==========
        t0 = time.time()
        trial = self.complete_trial(basis, zero, Vc, embedding, seed)
        stages["certificate"] = (time.time() - t0) * 1000
        trial.stages = stages
        if trial.admissibility_defect > ADMISSIBILITY_TOL:
            raise NumericalFailure(
                f"rotated trial function is not admissible: pairing {trial.admissibility_defect:.3e}",
                residual_norm=trial.admissibility_defect,
            )

        logger.info(
            "k=%d gap=%.6g certificate=%.6g (%.0f ms total)",
            k, trial.gap_lhs, trial.certificate, sum(stages.values()),
        )
        if trial.gap_lhs > trial.certificate + LINK_SLACK * (1.0 + abs(trial.certificate)):
            raise InequalityViolation(
                f"gap {trial.gap_lhs:.6g} exceeds certificate {trial.certificate:.6g}",
                margin=trial.certificate - trial.gap_lhs,
            )
        return trial


def find_vanishing_point(
    basis: EigenBasis,
    Vc: Optional[float] = None,
    embedding: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
) -> TrialData:
    return PipelineService().find_vanishing_point(basis, Vc, embedding, seed)


def gap_certificate(
    k: int,
    metric: ConformalMetric,
    Vc: Optional[float] = None,
    embedding: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
) -> TrialData:
    return PipelineService().certify(k, metric, Vc, embedding, seed)
