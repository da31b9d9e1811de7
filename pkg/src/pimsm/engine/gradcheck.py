"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_checked: int
    tol: float
    worst: tuple[str, tuple, float, float] | None  # name, index, analytic, numeric

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               tol: float = 1e-4, n_samples: int | None = 50, seed: int = 0,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` is re-evaluated with each probed coordinate shifted by ``±h``;
    ``n_samples`` coordinates are drawn uniformly over all parameter entries
    (``None`` checks every entry).
    """
    params = list(params)
    analytic = grad(f(), params)
    coords = [(i, idx) for i, p in enumerate(params) for idx in np.ndindex(p.shape)]
    if n_samples is not None and n_samples < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    errs = []
    worst = None
    for i, idx in coords:
        p = params[i]
        orig = p.data[idx]
        p.data[idx] = orig + h
        fp = f().item()
        p.data[idx] = orig - h
        fm = f().item()
        p.data[idx] = orig
        num = (fp - fm) / (2.0 * h)
        ana = float(analytic[i][idx])
        e = rel_error(ana, num, floor)
        errs.append(e)
        if worst is None or e > worst[4]:
            worst = (p.name or f"param{i}", idx, ana, num, e)
    errs_arr = np.asarray(errs) if errs else np.zeros(1)
    return GradCheckReport(
        max_rel_error=float(errs_arr.max()),
        mean_rel_error=float(errs_arr.mean()),
        n_checked=len(errs),
        tol=tol,
        worst=None if worst is None else worst[:4],
    )
