"""Central finite-difference check of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import EvaluationError


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def worst(self):
        return max(self.per_param.items(), key=lambda kv: kv[1]) if self.per_param else None


def _loss(f, params):
    value = float(f(params))
    if not np.isfinite(value):
        raise EvaluationError(f"loss evaluated to {value}")
    return value


def grad_check(f, params, eps=1e-6, tol=1e-4, names=None, floor=1e-8):
    """Compare ``params.grads`` filled by ``f`` with central differences.

    ``f(params)`` must return the scalar loss and accumulate its analytic
    gradient into ``params.grads`` (the checker zeroes them first). The error
    per entry is ``|a - n| / max(|a| + |n|, floor)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-3]")
    params.zero_grad()
    _loss(f, params)
    analytic = {k: g.copy() for k, g in params.grads.items()}
    report = GradCheckReport(0.0, tol)
    for name in names if names is not None else params.names():
        p = params[name]
        flat = p.reshape(-1)
        numeric = np.empty(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = _loss(f, params)
            flat[j] = orig - eps
            down = _loss(f, params)
            flat[j] = orig
            numeric[j] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)
        err = np.abs(a - numeric) / np.maximum(np.abs(a) + np.abs(numeric), floor)
        report.per_param[name] = float(err.max()) if err.size else 0.0
    params.zero_grad()
    report.max_rel_error = max(report.per_param.values(), default=0.0)
    return report
