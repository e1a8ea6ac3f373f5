"""Finite-difference verification of analytic gradients.

Central differences at eps=1e-3 in float64. The callable under test must be
deterministic (dropout off, batch-norm fed a fixed batch). Per parameter the
report carries the maximum relative error over the probed entries; large
parameters are probed on a seeded subset so full-model checks stay fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .module import Parameter


@dataclass
class GradReport:
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)
    non_finite: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return not self.failed and not self.non_finite

    def summary(self) -> str:
        lines = []
        for name, err in self.per_param.items():
            mark = "ok" if err < self.tol and name not in self.non_finite else "FAIL"
            lines.append(f"  {name}: max rel err {err:.3e} [{mark}]")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"gradient check {verdict} (tol {self.tol:.0e}, "
                     f"max {self.max_error:.3e})")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    denom = max(abs(a) + abs(n), 1e-8)
    return abs(a - n) / denom


def grad_check(fn: Callable[[], "Tensor"], params: dict[str, Parameter],
               tol: float = 1e-4, eps: float = 1e-3,
               samples_per_param: int | None = None, seed: int = 0,
               grad_scale: dict[str, float] | None = None) -> GradReport:
    """Compare fn's analytic gradients against central differences.

    ``grad_scale`` deliberately corrupts named analytic gradients before the
    comparison; it exists for negative-control runs that must fail.
    """
    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol)

    out = fn()
    if not np.all(np.isfinite(out.data)):
        report.non_finite.append("<output>")
        return report
    out.backward()
    analytic = {}
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if grad_scale and name in grad_scale:
            g = g * grad_scale[name]
        analytic[name] = g
        p.grad = None

    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_entries = flat.size
        if samples_per_param is not None and n_entries > samples_per_param:
            idx = rng.choice(n_entries, size=samples_per_param, replace=False)
        else:
            idx = np.arange(n_entries)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn().data)
            flat[i] = orig - eps
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if not np.isfinite(numeric) or not np.isfinite(a_flat[i]):
                report.non_finite.append(name)
                worst = np.inf
                break
            worst = max(worst, _rel_err(float(a_flat[i]), numeric))
        report.per_param[name] = worst
        if not worst < tol:
            report.failed.append(name)
    return report
