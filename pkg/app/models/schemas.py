"""
Pydantic Schemas
스펙트럼, 부등식 리포트, 실행 설정 등 직렬화 가능한 데이터 모델
"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Convention(str, Enum):
    """고유값 인덱싱 규약"""

    CLOSED = "closed"        # lambda_0 = 0 부터
    DIRICHLET = "dirichlet"  # lambda_1 부터


class ProfileFamily(str, Enum):
    CONSTANT = "constant"
    COSINE = "cos"
    BUMP = "bump"
    TABULATED = "tabulated"


class EhiMode(str, Enum):
    GAP = "gap"
    QUADRATIC = "quadratic"


class SobolevFlavor(str, Enum):
    AUBIN = "aubin"
    HEBEY = "hebey"
    ILIAS_RIC = "ilias_ric"
    ILIAS_GEN = "ilias_gen"
    YAMABE = "yamabe"


# ========== Spectrum ==========

class SpectrumEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(..., ge=0.0)
    multiplicity: int = Field(..., ge=1)


class Spectrum(BaseModel):
    """중복도를 포함한 정렬된 고유값 목록"""

    model_config = ConfigDict(frozen=True)

    entries: List[SpectrumEntry]
    convention: Convention
    dimension: int = Field(..., ge=2)

    @model_validator(mode="after")
    def _check_order(self) -> "Spectrum":
        values = [e.value for e in self.entries]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("eigenvalues must be strictly increasing across entries")
        if self.convention == Convention.CLOSED and self.entries:
            first = self.entries[0]
            if first.value != 0.0 or first.multiplicity != 1:
                raise ValueError("closed spectra start with the simple eigenvalue 0")
        if self.convention == Convention.DIRICHLET and self.entries and self.entries[0].value <= 0.0:
            raise ValueError("Dirichlet eigenvalues are positive")
        return self

    @classmethod
    def from_values(
        cls,
        values: Sequence[float],
        convention: Convention,
        dimension: int,
        rtol: float = 1e-6,
        multiplicities: Optional[Sequence[int]] = None,
    ) -> "Spectrum":
        """
        값 목록을 정렬하고 상대오차 rtol 안의 값들을 하나의 entry로 병합

        병합된 entry의 값은 클러스터의 (중복도 가중) 평균
        """
        vals = np.asarray(values, dtype=float)
        mult = np.ones(len(vals), dtype=int) if multiplicities is None else np.asarray(multiplicities, dtype=int)
        order = np.argsort(vals, kind="stable")
        vals, mult = vals[order], mult[order]

        entries: List[SpectrumEntry] = []
        cluster_v: List[float] = []
        cluster_m: List[int] = []

        def flush():
            if not cluster_v:
                return
            m = int(sum(cluster_m))
            v = float(np.dot(cluster_v, cluster_m) / m)
            entries.append(SpectrumEntry(value=max(v, 0.0), multiplicity=m))

        for v, m in zip(vals, mult):
            if cluster_v and abs(v - cluster_v[0]) <= rtol * max(abs(v), abs(cluster_v[0]), 1e-300):
                cluster_v.append(float(v))
                cluster_m.append(int(m))
            else:
                flush()
                cluster_v, cluster_m = [float(v)], [int(m)]
        flush()
        return cls(entries=entries, convention=convention, dimension=dimension)

    # ---------- indexing ----------

    @property
    def total_multiplicity(self) -> int:
        return sum(e.multiplicity for e in self.entries)

    @property
    def first_index(self) -> int:
        return 0 if self.convention == Convention.CLOSED else 1

    def flatten(self) -> np.ndarray:
        """중복도만큼 반복한 인덱스 순서의 배열 (배열 위치 0 = 첫 인덱스)"""
        if not self.entries:
            return np.zeros(0)
        return np.repeat(
            [e.value for e in self.entries], [e.multiplicity for e in self.entries]
        ).astype(float)

    def eigenvalue(self, index: int) -> float:
        """규약에 따른 lambda_index"""
        flat = self.flatten()
        pos = index - self.first_index
        if pos < 0 or pos >= len(flat):
            raise IndexError(
                f"lambda_{index} not available ({self.convention.value} spectrum with {len(flat)} values)"
            )
        return float(flat[pos])

    def max_index(self) -> int:
        return self.first_index + self.total_multiplicity - 1

    def truncate(self, count: int) -> "Spectrum":
        """중복도 포함 count개 이상이 될 때까지 entry를 유지 (마지막 클러스터는 온전히)"""
        kept: List[SpectrumEntry] = []
        total = 0
        for e in self.entries:
            if total >= count:
                break
            kept.append(e)
            total += e.multiplicity
        return Spectrum(entries=kept, convention=self.convention, dimension=self.dimension)

    def head(self, entries: int) -> "Spectrum":
        return Spectrum(entries=self.entries[:entries], convention=self.convention, dimension=self.dimension)

    def scaled(self, factor: float) -> "Spectrum":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return Spectrum(
            entries=[SpectrumEntry(value=e.value * factor, multiplicity=e.multiplicity) for e in self.entries],
            convention=self.convention,
            dimension=self.dimension,
        )

    def counting_function(self, level: float) -> int:
        """N(level) = #{lambda_i <= level} (중복도 포함)"""
        return sum(e.multiplicity for e in self.entries if e.value <= level)


# ========== Inequality reports ==========

def default_tol(lhs: float, rhs: float) -> float:
    scale = 1.0
    for v in (lhs, rhs):
        if math.isfinite(v):
            scale += abs(v)
    return 1e-9 * scale


class InequalityReport(BaseModel):
    """lhs <= rhs 형태의 단일 검증 결과"""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    name: str
    k: int
    lhs: float
    rhs: float
    margin: float
    satisfied: bool
    tol: float
    inputs: Dict[str, float] = Field(default_factory=dict)
    applicable: bool = True
    informational: bool = False
    near_equality: bool = False

    @model_validator(mode="after")
    def _check_flag(self) -> "InequalityReport":
        if self.applicable and self.satisfied != (self.margin >= -self.tol):
            raise ValueError("satisfied must agree with margin >= -tol")
        return self

    @classmethod
    def build(
        cls,
        name: str,
        k: int,
        lhs: float,
        rhs: float,
        tol: Optional[float] = None,
        inputs: Optional[Dict[str, float]] = None,
        informational: bool = False,
        applicable: bool = True,
    ) -> "InequalityReport":
        lhs, rhs = float(lhs), float(rhs)
        tol = default_tol(lhs, rhs) if tol is None else float(tol)
        margin = rhs - lhs
        return cls(
            name=name,
            k=int(k),
            lhs=lhs,
            rhs=rhs,
            margin=margin,
            satisfied=True if not applicable else bool(margin >= -tol),
            tol=tol,
            inputs={key: float(v) for key, v in (inputs or {}).items()},
            applicable=applicable,
            informational=informational,
            near_equality=bool(applicable and abs(margin) < tol),
        )

    @property
    def violated(self) -> bool:
        """실행 실패로 이어지는 위반 (informational 행 제외)"""
        return self.applicable and not self.informational and not self.satisfied


# ========== Geometry ==========

class GeometricConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    w_n: float
    K2: float
    Cstar: float
    Y_sphere: float
    Vc_default: float
    C_iso_round: float


class BoxSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sides: List[float] = Field(..., min_length=2)

    @field_validator("sides")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(a <= 0 for a in v):
            raise ValueError("side lengths must be positive")
        return v

    @property
    def dimension(self) -> int:
        return len(self.sides)


class BallSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimension: int = Field(..., ge=2)
    radius: float = Field(1.0, gt=0)


# ========== Pipeline artifact ==========

class TrialReport(BaseModel):
    """TrialData의 JSON 표현"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    n: int
    k: int
    q: List[float]
    xi: List[float]
    g_eigenvalues: List[float]
    gap_lhs: float
    certificate: float
    hebey_bound: Optional[float] = None
    energy_bound: float
    links: Dict[str, float]
    tangency: float
    field_norm: float
    balance_residual: float
    offdiag_max: float
    asymmetry: float
    admissibility_defect: float
    seed: int
    reports: List[InequalityReport] = Field(default_factory=list)


# ========== Run configuration ==========

class Command(str, Enum):
    SPECTRUM = "spectrum"
    VERIFY = "verify"
    SWEEP = "sweep"
    BALANCE = "balance"
    SOBOLEV = "sobolev"
    PIPELINE = "pipeline"
    DEGENERATE = "degenerate"


class Model(str, Enum):
    ROUND_SPHERE = "round-sphere"
    CONFORMAL = "conformal"
    RECTANGLE = "rectangle"
    BALL = "ball"


class Theorem(str, Enum):
    THM1 = "thm1"
    THM1BIS = "thm1bis"
    THM2 = "thm2"
    THM3 = "thm3"
    EHI = "ehi"
    EHI_QUADRATIC = "ehi_quadratic"
    DIRICHLET = "dirichlet"
    GAUSS_SCHWARZ = "gauss_schwarz"


CLOSED_MODELS = (Model.ROUND_SPHERE, Model.CONFORMAL)
SWEEPABLE = ("c", "eps", "center", "width", "height", "dim", "mesh", "kmax", "vc", "y", "a", "c_iso", "sup_h2", "radius")


class RunConfig(BaseModel):
    """
    CLI/API 공통 실행 설정

    기본값: n = 3, mesh 4000, kmax 5, Vc = w_n
    """

    model_config = ConfigDict(extra="forbid")

    command: Command
    # ---------- model ----------
    dim: int = Field(3, ge=2)
    model: Model = Model.CONFORMAL
    family: ProfileFamily = ProfileFamily.CONSTANT
    c: float = 0.0
    eps: float = 0.0
    center: float = 0.0
    width: float = 1.0
    height: float = 0.1
    profile: Optional[str] = None
    mesh: int = Field(4000, ge=16)
    count: int = Field(30, ge=1)
    sides: Optional[List[float]] = None
    radius: float = Field(1.0, gt=0)
    # ---------- checks ----------
    theorem: Theorem = Theorem.THM1
    kmax: int = Field(5, ge=1)
    vc: Optional[float] = Field(None, gt=0)
    y: Optional[float] = Field(None, gt=0)
    a: Optional[float] = Field(None, gt=0)
    c_iso: Optional[float] = Field(None, gt=0)
    sup_h2: Optional[float] = Field(None, ge=0)
    flavor: SobolevFlavor = SobolevFlavor.AUBIN
    tests: int = Field(20, ge=1)
    kappas: Optional[List[float]] = None
    k: Optional[int] = Field(None, ge=1)
    measure: Optional[str] = None
    tol: Optional[float] = Field(None, gt=0)
    # ---------- sweep ----------
    sweep_param: Optional[str] = None
    sweep_values: Optional[List[float]] = None
    # ---------- output ----------
    out_csv: Optional[str] = None
    out_json: Optional[str] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _check_combination(self) -> "RunConfig":
        if self.k is None:
            self.k = 2 if self.command == Command.DEGENERATE else 1
        closed_cmd = self.command in (Command.SOBOLEV, Command.PIPELINE)
        if closed_cmd and self.model != Model.CONFORMAL and self.model != Model.ROUND_SPHERE:
            raise ValueError(f"{self.command.value} runs on sphere models only")
        if self.command in (Command.VERIFY, Command.SWEEP):
            dirichlet = self.theorem == Theorem.DIRICHLET
            if dirichlet and self.model in CLOSED_MODELS:
                raise ValueError("dirichlet checks need --model rectangle or ball")
            if self.theorem not in (Theorem.DIRICHLET, Theorem.GAUSS_SCHWARZ) and self.model not in CLOSED_MODELS:
                raise ValueError(f"{self.theorem.value} needs a sphere model")
            if self.theorem == Theorem.GAUSS_SCHWARZ and not self.kappas:
                raise ValueError("gauss_schwarz needs --kappas")
        if self.model == Model.RECTANGLE and self.command in (Command.SPECTRUM, Command.VERIFY, Command.SWEEP):
            if not self.sides or len(self.sides) < 2 or any(s <= 0 for s in self.sides):
                raise ValueError("rectangle needs at least two positive --sides")
        if self.model == Model.CONFORMAL and self.family == ProfileFamily.TABULATED and not self.profile:
            raise ValueError("tabulated family needs --profile")
        if self.command == Command.SWEEP:
            if not self.sweep_param or not self.sweep_values:
                raise ValueError("sweep needs a parameter grid such as --eps 0:0.5:0.1")
            if self.sweep_param not in SWEEPABLE:
                raise ValueError(f"parameter '{self.sweep_param}' cannot be swept")
        if self.command == Command.BALANCE and not self.measure:
            raise ValueError("balance needs --measure")
        if self.command == Command.PIPELINE and not (self.dim >= 3 and self.k <= 5):
            raise ValueError("pipeline needs dim >= 3 and 1 <= k <= 5")
        if self.command == Command.DEGENERATE and self.k < 2:
            raise ValueError("degeneration needs k >= 2")
        return self


class RunResult(BaseModel):
    """한 번의 실행 결과 (JSON 아티팩트)"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    command: Command
    exit_code: int = 0
    reports: List[InequalityReport] = Field(default_factory=list)
    spectrum: Optional[Spectrum] = None
    trial: Optional[TrialReport] = None
    balance: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None

    @property
    def violations(self) -> List[InequalityReport]:
        return [r for r in self.reports if r.violated]
