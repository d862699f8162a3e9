"""Reverse-mode gradients checked against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from ..params import ParamLayout
from ..radiance import record_kinks

REL_FLOOR = 1e-6  # gradients below this are compared in absolute terms
KINK_MARGIN = 1e-7  # RePU inputs this close to zero always skip the coordinate
KINK_REACH = 0.01  # skip when the stencil moves an active RePU input by this fraction of its distance to zero


def near_kink(xp: torch.Tensor, xm: torch.Tensor) -> bool:
    """Whether a finite-difference stencil is too close to a RePU kink to trust.

    ``xp`` / ``xm`` are the RePU inputs seen at ``+h`` / ``-h``. Crossing zero
    is the obvious failure; short of that, ``x^p`` with ``p`` near 1 has
    higher derivatives growing like ``x^(p-3)``, so the central difference is
    only accurate while the stencil moves each active input by a small
    fraction of its distance from the kink.
    """
    if xp.shape != xm.shape:
        return True
    if torch.any((xp > 0) != (xm > 0)):
        return True
    active = xp > 0
    dist = torch.minimum(xp.abs(), xm.abs())[active]
    if torch.any(dist < KINK_MARGIN):
        return True
    return bool(torch.any((xp - xm).abs()[active] > KINK_REACH * dist))


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    skipped: int
    segment_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def failing_segments(self) -> list[str]:
        return [k for k, v in self.segment_errors.items() if v >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e} checked={self.checked} skipped={self.skipped}"]
        for name, err in self.segment_errors.items():
            lines.append(f"  {name:<32s} {err:.3e}{'  <-- FAIL' if err >= self.tolerance else ''}")
        return "\n".join(lines)


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def grad_check_fn(
    loss_fn: Callable[[dict], torch.Tensor],
    layout: ParamLayout,
    vector: np.ndarray,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    grad_hook: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Check ``d loss_fn(views) / d vector`` coordinate by coordinate.

    Coordinates whose stencil straddles or nearly reaches a RePU kink are
    skipped (see ``near_kink``). ``grad_hook`` lets tests corrupt
    the analytic gradient to confirm that faults are reported.
    """
    theta = torch.tensor(vector, dtype=torch.float64, requires_grad=True)
    loss = loss_fn(layout.views(theta))
    (grad,) = torch.autograd.grad(loss, theta)
    grad = grad.numpy().copy()
    if grad_hook is not None:
        grad = grad_hook(grad)

    def value(v):
        with torch.no_grad(), record_kinks() as kinks:
            out = float(loss_fn(layout.views(torch.as_tensor(v))))
        return out, torch.cat(kinks) if kinks else torch.zeros(0, dtype=torch.float64)

    seg_err = {s.name: 0.0 for s in layout}
    skipped = 0
    base = np.asarray(vector, dtype=np.float64)
    for seg in layout:
        for i in range(seg.offset, seg.offset + seg.size):
            v = base.copy()
            v[i] += h
            fp, kp = value(v)
            v[i] -= 2 * h
            fm, km = value(v)
            if near_kink(kp, km):
                skipped += 1
                continue
            fd = (fp - fm) / (2 * h)
            seg_err[seg.name] = max(seg_err[seg.name], float(relative_error(grad[i], fd)))
    checked = layout.size - skipped
    return GradCheckReport(max(seg_err.values(), default=0.0), tolerance, checked, skipped, seg_err)


def grad_check(model, params, batch, target, tolerance: float = 1e-4, h: float = 1e-5, grad_hook=None) -> GradCheckReport:
    """Gradient check of the MSE training loss of ``model`` on one batch."""
    target = torch.as_tensor(target, dtype=torch.float64)

    def loss_fn(views):
        return torch.mean((model.forward(views, batch) - target) ** 2)

    return grad_check_fn(loss_fn, model.layout, params.vector, tolerance, h, grad_hook)
