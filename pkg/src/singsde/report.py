"""Outcome records shared by every check in the package."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    HOLDS = "HOLDS"
    FAILS = "FAILS"
    INCONCLUSIVE = "INCONCLUSIVE"

    @property
    def ok(self) -> bool:
        return self in (Verdict.PASS, Verdict.HOLDS)

    @property
    def failed(self) -> bool:
        return self in (Verdict.FAIL, Verdict.FAILS)


class SingSDEError(Exception):
    """Base error; ``code`` is module-qualified, e.g. ``model.degenerate``."""

    code = "singsde.error"

    def __init__(self, msg: str, code: str | None = None):
        super().__init__(msg)
        if code is not None:
            self.code = code


class DegenerateDiffusionError(SingSDEError):
    code = "model.degenerate"


class EvaluationError(SingSDEError):
    code = "model.evaluation"


class DomainError(SingSDEError):
    code = "domain"


class HorizonExceededError(SingSDEError):
    code = "gaussian_reference.horizon"


class ConditionFailedError(SingSDEError):
    code = "integrability.condition_failed"


class PrecisionError(SingSDEError):
    code = "gaussian_reference.precision"


class PreconditionError(SingSDEError):
    code = "precondition"


@dataclass
class CertificateReport:
    """Both sides of a checked inequality (or the moment behind a condition),
    the margin ``rhs - lhs``, a Monte Carlo error bar and the verdict."""

    name: str
    lhs: float
    rhs: float
    verdict: Verdict
    se: float = 0.0
    details: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def margin(self) -> float:
        if math.isinf(self.lhs) or math.isinf(self.rhs):
            return -math.inf if self.lhs > self.rhs else math.inf
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.verdict.ok

    def row(self) -> dict[str, Any]:
        return {"bound_id": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "margin": self.margin, "verdict": self.verdict.value,
                "se": self.se}


def verdict_le(lhs: float, rhs: float, slack: float) -> Verdict:
    """PASS iff ``lhs - slack <= rhs``."""
    return Verdict.PASS if lhs - slack <= rhs else Verdict.FAIL
