"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float
    failures: list[tuple[str, tuple, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int = 40,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must be deterministic and rebuild the graph on every call.
    At most ``max_entries`` coordinates per parameter are probed, picked at
    random with ``seed``. Relative error uses ``max(|a|, |n|, 1e-7)`` as the
    denominator.
    """
    rng = np.random.default_rng(seed)
    names = list(names) if names is not None else [getattr(p, "name", f"p{i}") or f"p{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    checked = 0
    failures = []
    for p, g, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        k = min(max_entries, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + h
                up = loss_fn().item()
                flat[idx] = orig - h
                down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            a = g.reshape(-1)[idx]
            err = relative_error(a, numeric)
            checked += 1
            worst = max(worst, err)
            if err > tolerance:
                failures.append((name, np.unravel_index(idx, p.shape), float(a), float(numeric)))
    return GradCheckReport(worst, checked, tolerance, failures)
