"""
Central-difference verification of analytic gradients.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


@dataclasses.dataclass
class GradientCheckReport:
    max_error: float
    tolerance: float
    passed: bool
    location: tuple = None
    """
    (parameter position, parameter name, flat index) of the worst entry, or of
    the first non-finite evaluation
    """
    message: str = ""
    evaluations: int = 0

    def __str__(self):
        verdict = "passed" if self.passed else "FAILED"

        return f"gradient check {verdict}: max_error={self.max_error:.3e} tol={self.tolerance:.1e} at={self.location} {self.message}".strip()


def gradient_check(f, params, h=1e-5, tol=1e-4) -> GradientCheckReport:
    """
    `f` builds a scalar `Tensor` from the grad-enabled tensors `params`, which
    it reads through closure. Reports
    max |analytic - (f(p+h) - f(p-h)) / 2h| / max(1, |analytic|)
    over every entry of every parameter.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"Step `h`={h} is outside [1e-6, 1e-3]")

    params = list(params)

    for p in params:
        if p.data.dtype != np.float64:
            log.warning(gradient_check, "parameter", p.name, "is not double precision, expect spurious failures")

        p.grad = None

    tensor.reset_graph()
    loss = f()

    if not np.all(np.isfinite(loss.data)):
        return GradientCheckReport(float("inf"), tol, False, None, "non-finite loss at the unperturbed point")

    tensor.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    tensor.reset_graph()
    report = GradientCheckReport(0.0, tol, True)

    with tensor.no_grad():
        for position, (p, grad) in enumerate(zip(params, analytic)):
            for k in range(p.data.size):
                origin = p.data.flat[k]
                p.data.flat[k] = origin + h
                forward = float(f().data)
                p.data.flat[k] = origin - h
                backward = float(f().data)
                p.data.flat[k] = origin
                report.evaluations += 2
                location = (position, p.name, k)

                if not (np.isfinite(forward) and np.isfinite(backward) and np.isfinite(grad.flat[k])):
                    report.passed = False
                    report.max_error = float("inf")
                    report.location = location
                    report.message = "non-finite value encountered"

                    return report

                numeric = (forward - backward) / (2.0 * h)
                error = abs(grad.flat[k] - numeric) / max(1.0, abs(grad.flat[k]))

                if error > report.max_error:
                    report.max_error = float(error)
                    report.location = location

    report.passed = report.max_error <= tol
    log.debug(gradient_check, report)

    return report
