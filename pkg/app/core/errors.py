"""
Error hierarchy
모든 서비스가 공유하는 예외 계층과 CLI 종료 코드 매핑
"""

from typing import Any, Optional


class SpectralError(Exception):
    """툴킷 전체 예외의 루트"""

    exit_code = 1


class DomainError(SpectralError, ValueError):
    """입력값이 지원 범위를 벗어나거나 정리의 가정이 깨진 경우"""

    exit_code = 3


class ProfileError(DomainError):
    """Radial profile 검증 실패 (극점 매끄러움, C² 경계)"""


class NumericalFailure(SpectralError, RuntimeError):
    """
    수치 솔버 실패

    Args:
        message: 진단 메시지
        residual_norm: 실패 시점의 잔차 노름
    """

    exit_code = 2

    def __init__(self, message: str, residual_norm: float = float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


class NonConvergence(NumericalFailure):
    """반복 횟수 상한 초과. 가장 좋은 iterate를 함께 보관"""

    def __init__(
        self,
        message: str,
        residual_norm: float = float("nan"),
        best: Optional[Any] = None,
        iterations: int = 0,
    ):
        super().__init__(message, residual_norm)
        self.best = best
        self.iterations = iterations


class BalancingInfeasible(NonConvergence):
    """Center-of-mass balancing이 허용오차 내에서 불가능한 측도"""


class InequalityViolation(SpectralError):
    """검증 체인에서 부등식이 깨진 경우 (solver 버그를 의미)"""

    exit_code = 1

    def __init__(self, message: str, margin: float = float("nan")):
        super().__init__(message)
        self.margin = margin


def exit_code_for(exc: BaseException) -> int:
    """예외를 CLI 종료 코드로 변환"""
    if isinstance(exc, SpectralError):
        return exc.exit_code
    # pydantic ValidationError 등 설정 오류
    if isinstance(exc, ValueError):
        return DomainError.exit_code
    return NumericalFailure.exit_code
