"""Smooth unconstrained minimization and gradient verification utilities.

A thin contract around scipy's limited-memory BFGS: callables return
``(value, gradient)``, results report the final gradient norm and a
converged flag that is only set when the norm meets the tolerance.
Accepted iterates are non-increasing in value (sufficient-decrease line
search).  ``inf`` objective values act as rejection barriers during the
line search; ``nan`` anywhere raises :class:`NumericalError` with the
offending point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import NumericalError


@dataclass(frozen=True)
class OptimOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    value_tol: float = 1e-12
    max_line_search: int = 40
    trace: bool = False

    def __post_init__(self):
        if self.grad_tol <= 0 or self.value_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    message: str = ""


def minimize(objective, x0, options: OptimOptions | None = None) -> OptimResult:
    """Minimize a smooth function given a ``(value, grad)`` callable.

    Parameters
    ----------
    objective : callable
        Maps a 1-d parameter vector to ``(value, gradient)``.
    x0 : array_like
        Starting point; the objective must be finite there.
    options : OptimOptions
    """
    opts = options or OptimOptions()
    x0 = np.asarray(x0, dtype=float).ravel()

    def wrapped(x):
        value, grad = objective(x)
        grad = np.asarray(grad, dtype=float)
        if np.isnan(value) or np.any(np.isnan(grad)):
            raise NumericalError(f"objective returned nan at x={x!r}")
        return float(value), grad

    v0, g0 = wrapped(x0)
    if not np.isfinite(v0):
        raise NumericalError(f"objective not finite at the starting point x={x0!r}")

    trace = []
    if opts.trace:
        trace.append(v0)

        def callback(xk):
            trace.append(wrapped(xk)[0])

    else:
        callback = None

    res = scipy.optimize.minimize(
        wrapped,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={
            "maxiter": opts.max_iter,
            "gtol": opts.grad_tol,
            "ftol": opts.value_tol,
            "maxls": opts.max_line_search,
        },
    )
    value, grad = wrapped(res.x)
    if not np.isfinite(value):
        raise NumericalError(f"optimizer returned a non-finite value at x={res.x!r}")
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    return OptimResult(
        x=np.asarray(res.x, dtype=float),
        value=value,
        grad_norm=grad_norm,
        iterations=int(res.nit),
        converged=grad_norm <= opts.grad_tol,
        trace=trace,
        message=str(res.message),
    )


def finite_diff_check(objective, x, step: float = 1e-6) -> float:
    """Worst-coordinate relative error of the analytic gradient.

    Central differences of the value component of ``objective`` are
    compared against its gradient component.  Coordinates where both the
    numeric and analytic entries are below an absolute floor (1e-8 times
    the gradient scale) are skipped, since their relative error is noise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float).ravel()
    _, grad = objective(x)
    grad = np.asarray(grad, dtype=float).ravel()
    fd = np.empty_like(grad)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        fd[i] = (objective(xp)[0] - objective(xm)[0]) / (2.0 * step)
    scale = max(1.0, float(np.max(np.abs(grad))) if grad.size else 0.0)
    floor = 1e-8 * scale
    denom = np.maximum(np.abs(fd), np.abs(grad))
    err = np.abs(fd - grad) / np.maximum(denom, floor)
    err[denom < floor] = 0.0
    return float(err.max()) if err.size else 0.0
