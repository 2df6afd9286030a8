"""Weibull proportional-hazards likelihood over latent covariates.

Hazard for individual i is ``lambda0(t) * exp(b . x_i)`` with Weibull base
hazard ``lambda0(t) = (nu/rho) (t/rho)^(nu-1)`` and cumulative base hazard
``Lambda0(t) = (t/rho)^nu``.  The negative log likelihood is normalized by
1/N and carries Gamma priors on (nu, rho) and a Gaussian prior on b.

Scale and shape are optimized unconstrained through
``rho = 1 + rho_lb + softplus(rho_tilde)`` (same for nu), whose chain
factors are ``d rho / d rho_tilde = e^t / (1 + e^t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from ._util import LOG_2PI, sigmoid, softplus, softplus_inv
from .errors import InputError


@dataclass(frozen=True)
class SurvivalRecord:
    """An observed time and event indicator (1 = event, 0 = right-censored)."""

    time: float
    event: int

    def __post_init__(self):
        if not (np.isfinite(self.time) and self.time > 0):
            raise InputError("survival time must be finite and positive")
        if self.event not in (0, 1):
            raise InputError("event indicator must be 0 or 1")


def records_to_arrays(records: Sequence[SurvivalRecord]):
    t = np.array([r.time for r in records], dtype=float)
    delta = np.array([r.event for r in records], dtype=int)
    return t, delta


def arrays_to_records(times, events) -> list[SurvivalRecord]:
    return [SurvivalRecord(float(t), int(e)) for t, e in zip(times, events)]


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters: Gamma(kappa, alpha) on shape/scale, Gaussian b and X.

    ``sigma0`` is the prior standard deviation of each regression
    coefficient; ``sigma1`` plays the same role for the latent coordinates
    when every source uses the squared exponential kernel.  ``enabled=False``
    turns all prior terms off (unit tests only; fitting always uses priors).
    """

    kappa0: float = 3.0
    alpha0: float = 1.0
    kappa1: float = 3.0
    alpha1: float = 6.0
    sigma0: float = 2.0
    sigma1: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("kappa0", "alpha0", "kappa1", "alpha1", "sigma0", "sigma1"):
            if not getattr(self, name) > 0:
                raise InputError(f"prior parameter {name} must be positive")

    @classmethod
    def disabled(cls) -> "PriorConfig":
        return cls(enabled=False)


@dataclass
class WphmParams:
    """Regression coefficients plus unconstrained scale/shape.

    ``rho = 1 + rho_lb + softplus(rho_tilde)`` so that ``rho > 1 + rho_lb``
    by construction (same for nu).  Lower bounds may be set in [-1, inf)
    to move the open interval; the default 0 keeps rho, nu > 1.
    """

    b: np.ndarray
    rho_tilde: float
    nu_tilde: float
    rho_lb: float = 0.0
    nu_lb: float = 0.0

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).ravel()
        for name in ("rho_lb", "nu_lb"):
            if getattr(self, name) < -1.0:
                raise InputError(f"{name} must be >= -1 so the parameter stays positive")

    @classmethod
    def from_natural(cls, b, rho, nu, rho_lb=0.0, nu_lb=0.0) -> "WphmParams":
        if not rho > 1.0 + rho_lb:
            raise InputError(f"rho must exceed 1 + rho_lb = {1.0 + rho_lb}")
        if not nu > 1.0 + nu_lb:
            raise InputError(f"nu must exceed 1 + nu_lb = {1.0 + nu_lb}")
        return cls(
            b=np.asarray(b, dtype=float),
            rho_tilde=softplus_inv(rho - 1.0 - rho_lb),
            nu_tilde=softplus_inv(nu - 1.0 - nu_lb),
            rho_lb=rho_lb,
            nu_lb=nu_lb,
        )

    @property
    def rho(self) -> float:
        return 1.0 + self.rho_lb + softplus(self.rho_tilde)

    @property
    def nu(self) -> float:
        return 1.0 + self.nu_lb + softplus(self.nu_tilde)

    @property
    def q(self) -> int:
        return self.b.size

    def with_theta(self, theta: np.ndarray) -> "WphmParams":
        """New params from a packed vector [b..., rho_tilde, nu_tilde]."""
        return replace(
            self,
            b=np.array(theta[:-2], dtype=float),
            rho_tilde=float(theta[-2]),
            nu_tilde=float(theta[-1]),
        )

    def theta(self) -> np.ndarray:
        return np.concatenate([self.b, [self.rho_tilde, self.nu_tilde]])


def base_hazard(t, rho, nu):
    """Weibull base hazard (nu/rho)(t/rho)^(nu-1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InputError("time must be nonnegative")
    if not (rho > 0 and nu > 0):
        raise InputError("rho and nu must be positive")
    out = (nu / rho) * (t / rho) ** (nu - 1.0)
    return float(out) if out.ndim == 0 else out


def cum_hazard(t, rho, nu):
    """Cumulative base hazard (t/rho)^nu."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InputError("time must be nonnegative")
    if not (rho > 0 and nu > 0):
        raise InputError("rho and nu must be positive")
    out = (t / rho) ** nu
    return float(out) if out.ndim == 0 else out


def _check_shapes(t, X, params):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != t.size:
        raise InputError("latent row count does not match number of records")
    if X.shape[1] != params.q:
        raise InputError("latent dimension does not match len(b)")
    return X


def _prior_value(params: WphmParams, priors: PriorConfig, n: int) -> float:
    if not priors.enabled:
        return 0.0
    b = params.b
    rho, nu = params.rho, params.nu
    q = b.size
    vb = (0.5 * float(b @ b) / priors.sigma0**2 + 0.5 * q * np.log(2 * np.pi * priors.sigma0**2)) / n
    vnu = (
        -(priors.kappa0 - 1.0) * np.log(nu)
        + nu / priors.alpha0
        + priors.kappa0 * np.log(priors.alpha0)
        + gammaln(priors.kappa0)
    ) / n
    vrho = (
        -(priors.kappa1 - 1.0) * np.log(rho)
        + rho / priors.alpha1
        + priors.kappa1 * np.log(priors.alpha1)
        + gammaln(priors.kappa1)
    ) / n
    return float(vb + vnu + vrho)


def nll_arrays(t, delta, X, params: WphmParams, priors: PriorConfig) -> float:
    """1/N-normalized negative log likelihood plus prior terms (array core)."""
    X = _check_shapes(t, X, params)
    n = t.size
    rho, nu = params.rho, params.nu
    eta = X @ params.b
    logz = np.log(t / rho)
    with np.errstate(over="ignore"):
        w = np.exp(nu * logz + eta)  # Lambda0(t) e^eta
    ev = delta == 1
    loglam = np.log(nu / rho) + (nu - 1.0) * logz[ev]
    value = (-float(np.sum(loglam + eta[ev])) + float(np.sum(w))) / n
    return value + _prior_value(params, priors, n)


def grad_arrays(t, delta, X, params: WphmParams, priors: PriorConfig) -> np.ndarray:
    """Gradient of :func:`nll_arrays` over (b, rho_tilde, nu_tilde)."""
    X = _check_shapes(t, X, params)
    n = t.size
    rho, nu = params.rho, params.nu
    eta = X @ params.b
    logz = np.log(t / rho)
    with np.errstate(over="ignore"):
        w = np.exp(nu * logz + eta)
    ev = delta == 1
    n1 = int(np.count_nonzero(ev))

    db = (-X[ev].sum(axis=0) + w @ X) / n
    drho = (n1 * nu / rho - (nu / rho) * float(np.sum(w))) / n
    dnu = (-n1 / nu - float(np.sum(logz[ev])) + float(np.sum(logz * w))) / n
    if priors.enabled:
        db = db + params.b / (n * priors.sigma0**2)
        drho += (-(priors.kappa1 - 1.0) / rho + 1.0 / priors.alpha1) / n
        dnu += (-(priors.kappa0 - 1.0) / nu + 1.0 / priors.alpha0) / n
    drho_t = drho * sigmoid(params.rho_tilde)
    dnu_t = dnu * sigmoid(params.nu_tilde)
    return np.concatenate([db, [drho_t, dnu_t]])


def hessian_arrays(
    t, delta, X, params: WphmParams, priors: PriorConfig, reparameterized: bool = True
) -> np.ndarray:
    """(q+2, q+2) second derivatives over (b, rho, nu).

    With ``reparameterized=True`` (default) the scale/shape coordinates are
    the unconstrained (rho_tilde, nu_tilde); otherwise the natural (rho, nu).
    """
    X = _check_shapes(t, X, params)
    n = t.size
    q = params.q
    rho, nu = params.rho, params.nu
    eta = X @ params.b
    logz = np.log(t / rho)
    with np.errstate(over="ignore"):
        w = np.exp(nu * logz + eta)
    ev = delta == 1
    n1 = int(np.count_nonzero(ev))

    H = np.zeros((q + 2, q + 2))
    H[:q, :q] = (X.T * w) @ X / n
    hrr = (-n1 * nu / rho**2 + (nu * (nu + 1.0) / rho**2) * float(np.sum(w))) / n
    hnn = (n1 / nu**2 + float(np.sum(logz**2 * w))) / n
    hrn = (n1 / rho - float(np.sum(((nu / rho) * logz + 1.0 / rho) * w))) / n
    hrb = -(nu / rho) * (w @ X) / n
    hnb = ((logz * w) @ X) / n
    if priors.enabled:
        H[:q, :q] += np.eye(q) / (n * priors.sigma0**2)
        hrr += (priors.kappa1 - 1.0) / (n * rho**2)
        hnn += (priors.kappa0 - 1.0) / (n * nu**2)

    if reparameterized:
        g = grad_natural_scale_shape(t, delta, X, params, priors)
        sr, sn = sigmoid(params.rho_tilde), sigmoid(params.nu_tilde)
        hrr = hrr * sr**2 + g[0] * sr * (1.0 - sr)
        hnn = hnn * sn**2 + g[1] * sn * (1.0 - sn)
        hrn = hrn * sr * sn
        hrb = hrb * sr
        hnb = hnb * sn

    H[q, q] = hrr
    H[q + 1, q + 1] = hnn
    H[q, q + 1] = H[q + 1, q] = hrn
    H[:q, q] = H[q, :q] = hrb
    H[:q, q + 1] = H[q + 1, :q] = hnb
    return H


def grad_natural_scale_shape(t, delta, X, params, priors) -> np.ndarray:
    """(dL/drho, dL/dnu) in the natural parameterization."""
    n = t.size
    rho, nu = params.rho, params.nu
    eta = np.asarray(X, dtype=float).reshape(n, -1) @ params.b
    logz = np.log(t / rho)
    with np.errstate(over="ignore"):
        w = np.exp(nu * logz + eta)
    ev = delta == 1
    n1 = int(np.count_nonzero(ev))
    drho = (n1 * nu / rho - (nu / rho) * float(np.sum(w))) / n
    dnu = (-n1 / nu - float(np.sum(logz[ev])) + float(np.sum(logz * w))) / n
    if priors.enabled:
        drho += (-(priors.kappa1 - 1.0) / rho + 1.0 / priors.alpha1) / n
        dnu += (-(priors.kappa0 - 1.0) / nu + 1.0 / priors.alpha0) / n
    return np.array([drho, dnu])


def wphm_nll(records, X, params: WphmParams, priors: PriorConfig) -> float:
    """Negative log likelihood of the hazard model on latent covariates."""
    t, delta = records_to_arrays(records)
    return nll_arrays(t, delta, X, params, priors)


def wphm_grad(records, X, params: WphmParams, priors: PriorConfig) -> np.ndarray:
    """Gradient over (b, rho_tilde, nu_tilde)."""
    t, delta = records_to_arrays(records)
    return grad_arrays(t, delta, X, params, priors)


def wphm_hessian(
    records, X, params: WphmParams, priors: PriorConfig, reparameterized: bool = True
) -> np.ndarray:
    """Symmetric (q+2, q+2) Hessian; see :func:`hessian_arrays`."""
    t, delta = records_to_arrays(records)
    return hessian_arrays(t, delta, X, params, priors, reparameterized=reparameterized)


def fit_weibull_ph(
    covariates,
    records,
    priors: PriorConfig | None = None,
    rho0: float = 3.0,
    nu0: float = 10.0,
    rho_lb: float = 0.0,
    nu_lb: float = 0.0,
    max_iter: int = 500,
    grad_tol: float = 1e-8,
):
    """Fit the hazard model on fixed covariates (no latent inference).

    Used as the observed-space baseline: covariates may be raw data of any
    dimension.  Returns (params, nll, OptimResult).
    """
    from .optim import OptimOptions, minimize

    cov = np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    t, delta = records_to_arrays(records)
    if priors is None:
        priors = PriorConfig()
    start = WphmParams.from_natural(
        np.zeros(cov.shape[1]), rho0, nu0, rho_lb=rho_lb, nu_lb=nu_lb
    )

    def objective(theta):
        p = start.with_theta(theta)
        return (
            nll_arrays(t, delta, cov, p, priors),
            grad_arrays(t, delta, cov, p, priors),
        )

    res = minimize(objective, start.theta(), OptimOptions(max_iter=max_iter, grad_tol=grad_tol))
    params = start.with_theta(res.x)
    return params, res.value, res
