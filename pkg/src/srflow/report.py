"""Structured pass/fail records shared by the validators and verifiers.

A report carries a criterion identifier, a verdict, the worst signed slack
seen (``margin``, criterion-specific units), a witness for violations
(times, measures, potentials), solver diagnostics and the tolerance that
was applied.  Aggregate reports hold sub-reports per check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PASS = "pass"
VIOLATION = "violation"
INCONCLUSIVE = "inconclusive"


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()] if value.ndim else value.item()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and (value != value):
        return "nan"
    return value


@dataclass
class VerificationReport:
    criterion: str
    verdict: str
    margin: float | None = None
    witness: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    tolerance: float | None = None
    checks: tuple = ()

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        out = {
            "criterion": self.criterion,
            "verdict": self.verdict,
            "margin": _jsonable(self.margin),
            "tolerance": _jsonable(self.tolerance),
            "witness": _jsonable(self.witness),
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.checks:
            out["checks"] = [c.to_dict() for c in self.checks]
        return out

    def failures(self):
        """Flat list of non-passing leaf reports."""
        if self.checks:
            out = []
            for c in self.checks:
                out.extend(c.failures())
            return out
        return [] if self.passed else [self]

    def summary_lines(self, indent: int = 0):
        pad = "  " * indent
        margin = "" if self.margin is None else f"  margin={self.margin:.3e}"
        tol = "" if self.tolerance is None else f"  tol={self.tolerance:.1e}"
        lines = [f"{pad}[{self.verdict.upper():12s}] {self.criterion}{margin}{tol}"]
        for c in self.checks:
            lines.extend(c.summary_lines(indent + 1))
        return lines


def aggregate(criterion: str, reports, diagnostics=None) -> VerificationReport:
    """Combine sub-reports; the aggregate passes iff every leaf passes."""
    reports = tuple(reports)
    if any(r.verdict == VIOLATION for r in reports):
        verdict = VIOLATION
    elif any(r.verdict == INCONCLUSIVE for r in reports):
        verdict = INCONCLUSIVE
    else:
        verdict = PASS
    margins = [r.margin for r in reports if r.margin is not None]
    return VerificationReport(
        criterion=criterion,
        verdict=verdict,
        margin=min(margins) if margins else None,
        diagnostics=diagnostics or {},
        checks=reports,
    )
