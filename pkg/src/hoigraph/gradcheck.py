"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import ParamStore
from .tensor import Tensor, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    results: list[ParamCheck]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if r.passed else 'FAIL'} {r.name} max_rel_err={r.max_rel_error:.3e} "
               f"n={r.checked}" for r in self.results]
        out.append(f"{'PASS' if self.passed else 'FAIL'} overall max_rel_err={self.max_error:.3e} "
                   f"tol={self.tolerance:g}")
        return out


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    # floor keeps vanishing gradients from inflating the ratio
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(build_fn: Callable[[], Tensor], params: ParamStore, tolerance: float = 1e-4,
               h: float = 1e-5, max_elements: int | None = 24,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backward() against central differences of ``build_fn``.

    ``build_fn`` must rebuild the loss from the current parameter values. With
    ``max_elements`` set, that many entries per parameter are sampled.
    """
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    backward(build_fn())
    analytic = {name: p.grad.copy() for name, p in params.items()}
    results = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = build_fn().item()
            flat[i] = orig - h
            down = build_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric))
        results.append(ParamCheck(name, worst, len(idx), worst < tolerance))
    params.zero_grad()
    return GradCheckReport(tolerance, results)
