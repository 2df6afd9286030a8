"""Out-of-sample projection into the latent space and survival prediction.

A new individual's observed covariates are mapped to a latent point by
maximizing the product of per-source GP predictive densities (sources
without observations are simply omitted) times the latent prior.  Survival
quantities then follow from the hazard part of the fitted model: the risk
score is ``b . x*`` and the event-time mean/variance are moments of the
density ``lambda0(s) e^g exp(-Lambda0(s) e^g)``, computed by adaptive
quadrature on a truncated domain whose omitted survival mass is below
1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import kernels
from ._util import LOG_2PI, as_rng
from .errors import InputError, NumericalError
from .kernels import SE
from .model import ModelFit, _gaussian_x_prior
from .optim import OptimOptions, minimize

_TAIL_MASS = 1e-12


@dataclass
class LatentProjection:
    """MAP latent location of a new individual."""

    x_star: np.ndarray
    objective: float
    kappa_sq: list  # per observed source; None where the source was missing
    converged: bool


@dataclass
class EventTimePrediction:
    mean: float
    variance: float
    risk_score: float

    @property
    def std(self) -> float:
        return float(np.sqrt(max(self.variance, 0.0)))


class _SourceContext:
    """Cached per-source quantities for repeated projection objectives."""

    def __init__(self, X, Y, spec):
        self.spec = spec
        self.X = X
        self.km = kernels.kernel_matrix(X, spec)
        self.alpha = self.km.solve(Y)  # K^-1 Y, (N, d)
        self.d = Y.shape[1]

    def moments(self, x):
        k = kernels.kernel_cross(self.X, x[None, :], self.spec)[:, 0]
        kik = self.km.solve(k)
        m = self.alpha.T @ k
        kss = kernels.kernel_point(x, self.spec)
        kappa_sq = kss - float(k @ kik) + self.spec.noise_var
        return k, kik, m, kappa_sq

    def dk_dx(self, x, k):
        """(N, q) array of dk_i/dx_mu."""
        spec = self.spec
        if spec.family == kernels.LINEAR:
            return spec.sigma * self.X
        if spec.family == kernels.POLY2:
            return 2.0 * spec.sigma * (1.0 + self.X @ x)[:, None] * self.X
        return -spec.lengthscale * (x[None, :] - self.X) * k[:, None]

    def dkss_dx(self, x):
        spec = self.spec
        if spec.family == kernels.LINEAR:
            return 2.0 * spec.sigma * x
        if spec.family == kernels.POLY2:
            return 4.0 * spec.sigma * (1.0 + float(x @ x)) * x
        return np.zeros_like(x)


def _projection_objective(contexts, y_star_set, n, q, prior_scale):
    """Returns a (value, grad) callable over x* for the observed sources."""

    def objective(x):
        value = 0.0
        grad = np.zeros(q)
        for ctx, y in zip(contexts, y_star_set):
            if y is None:
                continue
            k, kik, m, kappa_sq = ctx.moments(x)
            if kappa_sq <= 0:
                kappa_sq = ctx.spec.noise_var * 1e-12
            r = y - m
            rr = float(r @ r)
            value += (0.5 * rr / kappa_sq + 0.5 * ctx.d * np.log(kappa_sq)
                      + 0.5 * ctx.d * LOG_2PI) / n
            dk = ctx.dk_dx(x, k)  # (N, q)
            dm = ctx.alpha.T @ dk  # (d, q)
            dkap = ctx.dkss_dx(x) - 2.0 * (kik @ dk)
            grad += (
                -(r @ dm) / kappa_sq
                - 0.5 * rr / kappa_sq**2 * dkap
                + 0.5 * ctx.d / kappa_sq * dkap
            ) / n
        if prior_scale is not None:
            value += 0.5 * float(x @ x) / prior_scale**2 / n
            value += 0.5 * q * np.log(2 * np.pi * prior_scale**2) / n
            grad += x / prior_scale**2 / n
        return value, grad

    return objective


def project_new(
    y_star_set,
    fit: ModelFit,
    n_starts: int = 10,
    rng=None,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
) -> LatentProjection:
    """MAP projection of a new individual's covariates into the latent space.

    ``y_star_set`` holds one vector per trained source, with ``None`` for
    sources that were not observed for this individual.  The search is
    multi-start: draws from the latent prior plus the best training latent
    as an informed start; ties in the objective are broken toward the
    smaller-norm solution.
    """
    rng = as_rng(rng)
    X = fit.latent.X
    n, q = X.shape
    if isinstance(y_star_set, np.ndarray) and y_star_set.ndim == 1:
        y_star_set = [y_star_set]
    y_star_set = [None if y is None else np.asarray(y, dtype=float).ravel() for y in y_star_set]
    if len(y_star_set) != len(fit.specs):
        raise InputError("one (possibly missing) observation vector per source required")
    if all(y is None for y in y_star_set):
        raise InputError("at least one source must be observed")
    for y, Y in zip(y_star_set, fit.Y_set):
        if y is not None and y.size != Y.shape[1]:
            raise InputError("observation vector length does not match trained source")

    contexts = [_SourceContext(X, Y, spec) for Y, spec in zip(fit.Y_set, fit.specs)]
    prior_scale = fit.priors.sigma1 if (_gaussian_x_prior(fit.specs) and fit.priors.enabled) else None
    objective = _projection_objective(contexts, y_star_set, n, q, prior_scale)

    if prior_scale is not None:
        draws = prior_scale * rng.standard_normal((n_starts, q))
    else:
        col_sd = np.maximum(np.std(X, axis=0), 1e-3)
        draws = rng.standard_normal((n_starts, q)) * col_sd[None, :]
    values_at_train = np.array([objective(x)[0] for x in X])
    starts = np.vstack([X[int(np.argmin(values_at_train))], draws])

    best = None
    opts = OptimOptions(max_iter=max_iter, grad_tol=grad_tol)
    for x0 in starts:
        res = minimize(objective, x0, opts)
        cand = (res.value, float(np.linalg.norm(res.x)), res)
        if best is None or cand[:2] < best[:2]:
            best = cand
    res = best[2]
    x_star = res.x
    kappa = []
    for ctx, y in zip(contexts, y_star_set):
        if y is None:
            kappa.append(None)
            continue
        ks = ctx.moments(x_star)[3]
        if ks < ctx.spec.noise_var - 1e-10 * max(1.0, ctx.spec.noise_var):
            raise NumericalError("predictive variance fell below the noise floor")
        kappa.append(max(ks, ctx.spec.noise_var))
    return LatentProjection(
        x_star=x_star, objective=res.value, kappa_sq=kappa, converged=res.converged
    )


def event_time_moments(g: float, rho: float, nu: float):
    """Mean and variance of the event-time density at risk score g.

    The density is Weibull with effective scale rho * exp(-g / nu);
    moments are computed by adaptive quadrature on [0, T] where the
    survival mass beyond T is below 1e-12.
    """
    scale = rho * np.exp(-g / nu)
    t_max = scale * (-np.log(_TAIL_MASS)) ** (1.0 / nu)

    def pdf(s):
        z = (s / scale) ** nu
        return (nu / scale) * (s / scale) ** (nu - 1.0) * np.exp(-z)

    mass, mass_err = quad(pdf, 0.0, t_max, limit=200)
    if not np.isfinite(mass) or abs(mass - (1.0 - _TAIL_MASS)) > 1e-8:
        raise NumericalError(
            f"event-time quadrature failed to normalize (mass={mass!r}, err={mass_err!r})"
        )
    m1, _ = quad(lambda s: s * pdf(s), 0.0, t_max, limit=200)
    m2, _ = quad(lambda s: s * s * pdf(s), 0.0, t_max, limit=200)
    mean = m1 / mass
    var = max(m2 / mass - mean**2, 0.0)
    return float(mean), float(var)


def predict_event_time(x_star, fit: ModelFit) -> EventTimePrediction:
    """Mean event time, its variance, and the risk score at a latent point."""
    if not fit.include_survival or fit.wphm is None:
        raise InputError("the fit has no hazard component")
    g = risk_score(x_star, fit)
    mean, var = event_time_moments(g, fit.wphm.rho, fit.wphm.nu)
    return EventTimePrediction(mean=mean, variance=var, risk_score=g)


def risk_score(x_star, fit: ModelFit) -> float:
    """b . x*; larger means higher hazard."""
    if not fit.include_survival or fit.wphm is None:
        raise InputError("the fit has no hazard component")
    x = np.asarray(x_star, dtype=float).ravel()
    return float(fit.wphm.b @ x)
