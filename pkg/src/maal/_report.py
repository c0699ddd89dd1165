from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class DiagnosticReport:
    """Outcome of a sampled or grid-based check.

    ``max_violation`` is the largest amount by which the checked inequality
    failed (nonpositive when every case passed).
    """

    name: str
    passed: bool
    checked: int = 0
    violations: int = 0
    max_violation: float = float("-inf")
    details: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: {self.violations}/{self.checked} violations, "
                f"max violation {self.max_violation:.3e}")

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "checked": self.checked,
            "violations": self.violations,
            "max_violation": self.max_violation,
            "details": self.details,
            "messages": list(self.messages),
        }
