"""Finite-difference verification of reverse-mode gradients.

The checker perturbs every element of every input, evaluates the central
difference (f(x+h) - f(x-h)) / 2h, and compares against the gradient the
backward pass produced. It is the independent oracle for the whole numeric
stack, so it only ever touches raw data, never the autodiff internals.
Use 64-bit inputs; float32 round-off swamps the tolerances.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad

REL_ERR_FLOOR = 1e-6  # denominators below this are treated as this


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    h: float
    entries: list = field(default_factory=list)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err <= self.tol

    def __str__(self):
        lines = [f"grad check (h={self.h:g}, tol={self.tol:g}): "
                 f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e}"]
        for e in self.entries:
            lines.append(f"  {e.name}: max_rel_err={e.max_rel_err:.3e} at {e.worst_index} "
                         f"(analytic={e.analytic:.6e}, numeric={e.numeric:.6e})")
        return "\n".join(lines)


def grad_check(f, inputs, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of the scalar f(*inputs) to central differences.

    inputs are Tensors with requires_grad=True; their .data is perturbed in
    place and restored. Returns a GradCheckReport; failures are carried in
    the report, not raised.
    """
    for t in inputs:
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ValueError("grad_check inputs must be Tensors with requires_grad=True")
        t.zero_grad()

    out = f(*inputs)
    out.backward()
    analytic = [np.array(t.grad, copy=True) for t in inputs]

    report = GradCheckReport(tol=tol, h=h)
    for t, ag in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ng = np.zeros_like(flat)
        with no_grad():
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = float(f(*inputs).data)
                flat[j] = orig - h
                f_minus = float(f(*inputs).data)
                flat[j] = orig
                ng[j] = (f_plus - f_minus) / (2.0 * h)
        ng = ng.reshape(t.shape)
        denom = np.maximum(np.maximum(np.abs(ag), np.abs(ng)), REL_ERR_FLOOR)
        rel = np.abs(ag - ng) / denom
        worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
        report.entries.append(GradCheckEntry(
            name=t.name or f"input{len(report.entries)}",
            max_rel_err=float(rel.max()) if rel.size else 0.0,
            worst_index=worst,
            analytic=float(ag[worst]) if rel.size else 0.0,
            numeric=float(ng[worst]) if rel.size else 0.0,
        ))
    return report
