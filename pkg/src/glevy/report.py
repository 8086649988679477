"""Validation reports and error types shared across modules."""

from dataclasses import dataclass, field


class StructureError(ValueError):
    """Inputs are malformed (dimension mismatch and the like), as opposed to failing a check."""


class BlowUpError(FloatingPointError):
    """A simulated state became non-finite."""

    def __init__(self, message, time=None, seed_triple=None):
        super().__init__(message)
        self.time = time
        self.seed_triple = seed_triple


@dataclass
class Condition:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class ValidationReport:
    conditions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {
            "passed": self.passed,
            "conditions": [
                {"name": c.name, "passed": c.passed, "value": float(c.value), "detail": c.detail}
                for c in self.conditions
            ],
        }

    def summary(self):
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<24} {c.value:.6g}  {c.detail}"
                 for c in self.conditions]
        return "\n".join(lines)
