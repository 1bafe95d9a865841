"""Check reports shared by every verification routine."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Iterable

INEQ_RTOL = 1e-10


@dataclass
class CheckReport:
    """Outcome of one numerical check.

    ``lhs`` is compared against ``bound1`` (and ``bound2`` when present).
    ``status`` is "pass", "fail" or "skipped"; skipped checks carry the
    reason in ``extra["reason"]``.
    """

    name: str
    tag: str
    lhs: float
    bound1: float
    bound2: float | None = None
    tol: float = 0.0
    status: str = "pass"
    params: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @classmethod
    def skipped(cls, name: str, tag: str, reason: str, **params) -> "CheckReport":
        return cls(name=name, tag=tag, lhs=float("nan"), bound1=float("nan"),
                   status="skipped", params=params, extra={"reason": reason})

    CSV_FIELDS = ("name", "tag", "status", "lhs", "bound1", "bound2", "tol", "params", "extra")

    def row(self) -> dict[str, str]:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return {
            "name": self.name,
            "tag": self.tag,
            "status": self.status,
            "lhs": fmt(self.lhs),
            "bound1": fmt(self.bound1),
            "bound2": fmt(self.bound2),
            "tol": fmt(self.tol),
            "params": ";".join(f"{k}={v}" for k, v in sorted(self.params.items())),
            "extra": ";".join(f"{k}={v}" for k, v in sorted(self.extra.items())),
        }

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n").writerow(self.row())
        return buf.getvalue()


def ge_check(name: str, tag: str, lhs: float, bounds: Iterable[float], rtol: float = INEQ_RTOL,
             **params) -> CheckReport:
    """Report for ``lhs >= bound`` for every bound, with relative slack."""
    bounds = [float(b) for b in bounds]
    scale = abs(lhs) + sum(abs(b) for b in bounds)
    tol = rtol * scale
    ok = all(lhs >= b - tol for b in bounds)
    return CheckReport(name=name, tag=tag, lhs=float(lhs), bound1=bounds[0],
                       bound2=bounds[1] if len(bounds) > 1 else None, tol=tol,
                       status="pass" if ok else "fail", params=params)


def le_check(name: str, tag: str, lhs: float, bound: float, rtol: float = INEQ_RTOL,
             **params) -> CheckReport:
    """Report for ``lhs <= bound`` with relative slack."""
    tol = rtol * (abs(lhs) + abs(bound))
    ok = lhs <= bound + tol
    return CheckReport(name=name, tag=tag, lhs=float(lhs), bound1=float(bound), tol=tol,
                       status="pass" if ok else "fail", params=params)
