"""
Numerical kernels
Quadrature, Sturm-Liouville eigensolver, 대칭 고유분해, Bessel zero, damped Newton 솔버
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.special import jv

from app.core.errors import DomainError, NonConvergence, NumericalFailure

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

# 3-point Gauss rule on the reference cell [0, 1]
_CELL_NODES = 0.5 + 0.5 * np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_CELL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

# below this many free dofs the pencil is solved densely
_DENSE_LIMIT = 400


# ========== Quadrature ==========

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights on [a, b]"""

    nodes: np.ndarray
    weights: np.ndarray
    a: float
    b: float

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def __len__(self) -> int:
        return len(self.nodes)


def gauss_legendre_rule(m: int, a: float, b: float) -> QuadratureRule:
    """
    m-point Gauss-Legendre rule, degree 2m-1 까지 정확

    Args:
        m: 노드 개수 (>= 1)
        a, b: 구간 끝점 (a < b)
    """
    if m < 1:
        raise DomainError(f"quadrature order must be >= 1, got {m}")
    if not a < b:
        raise DomainError(f"empty interval [{a}, {b}]")
    x, w = np.polynomial.legendre.leggauss(m)
    half = 0.5 * (b - a)
    return QuadratureRule(
        nodes=half * x + 0.5 * (a + b),
        weights=half * w,
        a=float(a),
        b=float(b),
    )


def composite_gauss_rule(m: int, a: float, b: float, panels: int) -> QuadratureRule:
    """panels 개의 균등 구간에 m-point Gauss rule을 이어 붙인 composite rule"""
    if panels < 1:
        raise DomainError(f"panel count must be >= 1, got {panels}")
    edges = np.linspace(a, b, panels + 1)
    parts = [gauss_legendre_rule(m, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    return QuadratureRule(
        nodes=np.concatenate([r.nodes for r in parts]),
        weights=np.concatenate([r.weights for r in parts]),
        a=float(a),
        b=float(b),
    )


# ========== Sturm-Liouville ==========

class PoleCondition(str, Enum):
    NATURAL = "regular-decay"
    VALUE_ZERO = "value-zero"


@dataclass(frozen=True)
class SturmLiouvilleProblem:
    """
    -(p T')' + q T = lambda rho T on [0, pi]

    pole_condition은 (theta=0, theta=pi) 순서
    """

    p: ArrayFn
    q: ArrayFn
    rho: ArrayFn
    mesh: np.ndarray
    pole_condition: Tuple[PoleCondition, PoleCondition] = (
        PoleCondition.NATURAL,
        PoleCondition.NATURAL,
    )

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        if mesh.ndim != 1 or len(mesh) < 3:
            raise DomainError("mesh needs at least 3 nodes")
        if mesh[0] != 0.0 or mesh[-1] != np.pi:
            raise DomainError("mesh must start at 0 and end at pi exactly")
        if np.any(np.diff(mesh) <= 0):
            raise DomainError("mesh must be strictly increasing")
        object.__setattr__(self, "mesh", mesh)

    @classmethod
    def uniform(cls, p, q, rho, nodes: int, pole_condition=None) -> "SturmLiouvilleProblem":
        mesh = np.linspace(0.0, np.pi, nodes)
        mesh[-1] = np.pi
        kwargs = {} if pole_condition is None else {"pole_condition": tuple(pole_condition)}
        return cls(p=p, q=q, rho=rho, mesh=mesh, **kwargs)

    def free_dofs(self) -> np.ndarray:
        idx = np.arange(len(self.mesh))
        keep = np.ones(len(self.mesh), dtype=bool)
        if self.pole_condition[0] == PoleCondition.VALUE_ZERO:
            keep[0] = False
        if self.pole_condition[1] == PoleCondition.VALUE_ZERO:
            keep[-1] = False
        return idx[keep]


def _assemble_pencil(prob: SturmLiouvilleProblem) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """P1 stiffness / mass 행렬 (tridiagonal)"""
    mesh = prob.mesh
    h = np.diff(mesh)
    x = mesh[:-1, None] + h[:, None] * _CELL_NODES[None, :]
    wq = h[:, None] * _CELL_WEIGHTS[None, :]

    p = np.asarray(prob.p(x), dtype=float)
    q = np.broadcast_to(np.asarray(prob.q(x), dtype=float), x.shape)
    rho = np.asarray(prob.rho(x), dtype=float)
    if np.any(p <= 0) or np.any(rho <= 0):
        raise DomainError("p and rho must be strictly positive on interior nodes")
    if np.any(q < 0):
        raise DomainError("q must be non-negative")

    phi0 = 1.0 - _CELL_NODES
    phi1 = _CELL_NODES
    # stiffness: gradients are -1/h, +1/h on each cell
    kp = np.sum(wq * p, axis=1) / h**2
    k00 = kp + np.sum(wq * q * phi0 * phi0, axis=1)
    k11 = kp + np.sum(wq * q * phi1 * phi1, axis=1)
    k01 = -kp + np.sum(wq * q * phi0 * phi1, axis=1)
    m00 = np.sum(wq * rho * phi0 * phi0, axis=1)
    m11 = np.sum(wq * rho * phi1 * phi1, axis=1)
    m01 = np.sum(wq * rho * phi0 * phi1, axis=1)

    n = len(mesh)
    kd = np.zeros(n)
    md = np.zeros(n)
    kd[:-1] += k00
    kd[1:] += k11
    md[:-1] += m00
    md[1:] += m11
    K = sp.diags([k01, kd, k01], [-1, 0, 1], format="csr")
    M = sp.diags([m01, md, m01], [-1, 0, 1], format="csr")
    return K, M


def _fix_sign(v: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(v))
    if scale == 0:
        return v
    first = np.flatnonzero(np.abs(v) > 1e-8 * scale)[0]
    return v if v[first] > 0 else -v


def sturm_liouville_eigs(prob: SturmLiouvilleProblem, count: int) -> List[Tuple[float, np.ndarray]]:
    """
    가장 작은 count개의 고유쌍 계산

    Args:
        prob: Sturm-Liouville 문제
        count: 고유값 개수 (<= mesh size - 2)

    Returns:
        (eigenvalue, mesh 위 eigenfunction samples) 리스트, 오름차순, rho-orthonormal
    """
    if count < 1 or count > len(prob.mesh) - 2:
        raise DomainError(f"count must lie in [1, {len(prob.mesh) - 2}], got {count}")

    K, M = _assemble_pencil(prob)
    dofs = prob.free_dofs()
    Kf = K[dofs][:, dofs]
    Mf = M[dofs][:, dofs]

    if len(dofs) <= _DENSE_LIMIT:
        vals, vecs = scipy.linalg.eigh(
            Kf.toarray(), Mf.toarray(), subset_by_index=[0, count - 1]
        )
    else:
        try:
            vals, vecs = eigsh(Kf.tocsc(), k=count, M=Mf.tocsc(), sigma=-1.0, which="LM")
        except ArpackNoConvergence as exc:
            resid = np.inf
            if len(exc.eigenvalues):
                r = Kf @ exc.eigenvectors - (Mf @ exc.eigenvectors) * exc.eigenvalues
                resid = float(np.max(np.linalg.norm(r, axis=0)))
            raise NumericalFailure(
                f"shift-invert iteration did not converge for {count} modes",
                residual_norm=resid,
            ) from exc

    order = np.argsort(vals)
    out: List[Tuple[float, np.ndarray]] = []
    for j in order:
        v = vecs[:, j]
        v = v / math.sqrt(float(v @ (Mf @ v)))
        full = np.zeros(len(prob.mesh))
        full[dofs] = _fix_sign(v)
        out.append((max(float(vals[j]), 0.0), full))
    logger.debug("SL solve: %d dofs, lowest %.6g", len(dofs), out[0][0])
    return out


# ========== Dense symmetric ==========

def symmetric_eigendecomposition(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """대칭화 후 scipy eigh. 고유벡터 부호는 최대 성분이 양수가 되도록 고정"""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    S = 0.5 * (A + A.T)
    vals, vecs = scipy.linalg.eigh(S)
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            vecs[:, j] = -col
    return vals, vecs


# ========== Bessel zeros ==========

MAX_BESSEL_ORDER = 50.0
MAX_BESSEL_INDEX = 100


def _bracketed_root(fn, lo: float, hi: float) -> float:
    return brentq(fn, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)


@lru_cache(maxsize=64)
def _base_zeros(nu0: float, count: int) -> Tuple[float, ...]:
    """J_nu0 (0 <= nu0 < 1)의 첫 count개 양의 zero, 부호 변화 스캔 + brentq"""
    fn = lambda x: jv(nu0, x)
    zeros: List[float] = []
    step = 0.1
    x = 1.0
    fx = fn(x)
    while len(zeros) < count:
        grid = x + step * np.arange(1, 401)
        vals = fn(grid)
        prev_x, prev_f = x, fx
        for gx, gf in zip(grid, vals):
            if prev_f == 0.0:
                zeros.append(prev_x)
            elif prev_f * gf < 0:
                zeros.append(_bracketed_root(fn, prev_x, gx))
            if len(zeros) == count:
                break
            prev_x, prev_f = gx, gf
        x, fx = grid[-1], vals[-1]
    return tuple(zeros[:count])


@lru_cache(maxsize=512)
def _zero_table(nu: float, count: int) -> Tuple[float, ...]:
    steps = int(math.floor(nu))
    nu0 = round(nu - steps, 15)
    zeros = list(_base_zeros(nu0, count + steps))
    # interlacing: j_{v,k} < j_{v+1,k} < j_{v,k+1}
    for i in range(1, steps + 1):
        order = nu0 + i
        fn = lambda x, order=order: jv(order, x)
        zeros = [_bracketed_root(fn, a, b) for a, b in zip(zeros[:-1], zeros[1:])]
    return tuple(zeros[:count])


def bessel_zero(nu: float, k: int) -> float:
    """
    J_nu의 k번째 양의 zero j_{nu,k}

    Args:
        nu: 차수 (0 <= nu <= 50)
        k: 인덱스 (1 <= k <= 100)
    """
    if not (0.0 <= nu <= MAX_BESSEL_ORDER):
        raise DomainError(f"Bessel order {nu} outside [0, {MAX_BESSEL_ORDER}]")
    if int(k) != k or not (1 <= k <= MAX_BESSEL_INDEX):
        raise DomainError(f"zero index {k} outside [1, {MAX_BESSEL_INDEX}]")
    return _zero_table(float(nu), int(k))[int(k) - 1]


def bessel_zeros(nu: float, count: int) -> List[float]:
    """첫 count개의 zero"""
    bessel_zero(nu, count)
    return list(_zero_table(float(nu), int(count)))


# ========== Damped Newton ==========

@dataclass(frozen=True)
class RootSolution:
    point: np.ndarray
    residual_norm: float
    iterations: int
    history: Tuple[float, ...] = field(default_factory=tuple)


def _fd_jacobian(residual, x: np.ndarray, r0: np.ndarray, admissible) -> np.ndarray:
    d = len(x)
    J = np.empty((len(r0), d))
    for i in range(d):
        h = max(1e-7, 1e-7 * abs(x[i]))
        xp = x.copy()
        xp[i] += h
        if admissible is not None and not admissible(xp):
            xp[i] -= 2 * h
            h = -h
        J[:, i] = (np.asarray(residual(xp), dtype=float) - r0) / h
    return J


def vector_root_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    start: Sequence[float],
    tol: float = 1e-8,
    *,
    admissible: Optional[Callable[[np.ndarray], bool]] = None,
    max_iter: int = 200,
) -> RootSolution:
    """
    Damped Newton (forward-difference Jacobian)

    Args:
        residual: R^d -> R^d
        start: 초기점
        tol: 잔차 노름 허용오차
        admissible: iterate가 머물러야 하는 영역의 membership 함수

    Raises:
        NonConvergence: 반복 상한 초과 또는 line search 정체
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    x = np.array(start, dtype=float)
    if admissible is not None and not admissible(x):
        raise DomainError("start point outside the admissible region")
    r = np.asarray(residual(x), dtype=float)
    norm = float(np.linalg.norm(r))
    history = [norm]
    best_x, best_norm = x.copy(), norm

    for it in range(max_iter):
        if norm <= tol:
            return RootSolution(x, norm, it, tuple(history))
        J = _fd_jacobian(residual, x, r, admissible)
        try:
            step = np.linalg.solve(J, -r)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError("non-finite step")
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]

        alpha = 1.0
        accepted = False
        while alpha >= 1e-10:
            trial = x + alpha * step
            if admissible is None or admissible(trial):
                r_trial = np.asarray(residual(trial), dtype=float)
                n_trial = float(np.linalg.norm(r_trial))
                if n_trial < (1.0 - 1e-4 * alpha) * norm:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise NonConvergence(
                f"line search stalled at iteration {it}",
                residual_norm=best_norm,
                best=best_x,
                iterations=it,
            )
        x, r, norm = trial, r_trial, n_trial
        history.append(norm)
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm

    if norm <= tol:
        return RootSolution(x, norm, max_iter, tuple(history))
    raise NonConvergence(
        f"no root within {max_iter} iterations",
        residual_norm=best_norm,
        best=best_x,
        iterations=max_iter,
    )
