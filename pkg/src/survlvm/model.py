"""The combined latent-variable / hazard model.

Joint negative log posterior over (X, b, rho, nu), symmetry-pinned
alternating MAP optimization, full Hessian assembly over the free
parameters, the Laplace approximation of the hyperparameter likelihood,
and dimensionality scanning.

Symmetry handling: the observation term is invariant under orthogonal
transformations of the latent columns, so q(q-1)/2 upper-triangle entries
of X (rows i < q, columns j > i) are pinned to zero and the diagonal
entries x_kk are made nonnegative by post-hoc column sign flips (with the
matching flip of b so that b . x is preserved).

The Laplace value is

    L_hyp = L* - (P / 2N) log 2pi + (1 / 2N) log |N H|

with P the number of free parameters and H the Hessian of the
1/N-normalized objective at the optimum, taken in the natural (rho, nu)
coordinates so that the value approximates the marginal-likelihood
integral over the natural parameters.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor

from . import kernels, weibull
from ._util import LOG_2PI, as_rng, sigmoid
from .errors import InputError, NumericalError
from .kernels import SE, KernelSpec
from .optim import OptimOptions, OptimResult, minimize
from .weibull import PriorConfig, WphmParams

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# latent state and packing


def make_pin_mask(n: int, q: int) -> np.ndarray:
    """Boolean (n, q) mask, True where the entry is frozen at zero.

    Row i (0-based, i < q-1) has columns j > i pinned: q(q-1)/2 entries,
    which removes all rotations of the latent columns.
    """
    mask = np.zeros((n, q), dtype=bool)
    for i in range(min(q - 1, n)):
        mask[i, i + 1 :] = True
    return mask


@dataclass
class LatentState:
    """Latent coordinates with their pinning constraint mask."""

    X: np.ndarray
    pin_mask: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.pin_mask = np.asarray(self.pin_mask, dtype=bool)
        if self.X.shape != self.pin_mask.shape:
            raise InputError("latent matrix and pin mask shapes differ")

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(~self.pin_mask))

    def pack(self) -> np.ndarray:
        return self.X[~self.pin_mask]

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        X = np.zeros_like(self.X)
        X[~self.pin_mask] = vec
        return X


def _count_free_params(latent: LatentState, include_survival: bool) -> int:
    q = latent.X.shape[1]
    return latent.n_free + (q + 2 if include_survival else 0)


def _gaussian_x_prior(specs) -> bool:
    # The latent scale is anchored by any linear/polynomial source (sigma=1);
    # only an all-SE model needs the Gaussian latent prior.
    return all(s.family == SE for s in specs)


def _x_prior_value(X, n_free, priors: PriorConfig, active: bool) -> float:
    if not (active and priors.enabled):
        return 0.0
    n = X.shape[0]
    s2 = priors.sigma1**2
    return (0.5 * float(np.sum(X * X)) / s2 + 0.5 * n_free * np.log(2 * np.pi * s2)) / n


def _x_prior_grad(X, priors: PriorConfig, active: bool) -> np.ndarray:
    if not (active and priors.enabled):
        return np.zeros_like(X)
    return X / (X.shape[0] * priors.sigma1**2)


# ---------------------------------------------------------------------------
# joint objective


def joint_nll(
    Y_set,
    records,
    latent: LatentState,
    wphm: WphmParams | None,
    specs,
    priors: PriorConfig,
    include_survival: bool = True,
) -> float:
    """Joint negative log posterior: observation + hazard + prior terms."""
    Y_set, specs = kernels._as_sets(Y_set, specs)
    value = kernels.gplvm_nll(Y_set, latent.X, specs)
    value += _x_prior_value(latent.X, latent.n_free, priors, _gaussian_x_prior(specs))
    if include_survival:
        if wphm is None:
            raise InputError("hazard parameters required when survival is included")
        value += weibull.wphm_nll(records, latent.X, wphm, priors)
    return value


def joint_grad(
    Y_set,
    records,
    latent: LatentState,
    wphm: WphmParams | None,
    specs,
    priors: PriorConfig,
    include_survival: bool = True,
) -> np.ndarray:
    """Packed gradient over [free latent entries, b, rho_tilde, nu_tilde]."""
    gX, gtheta = joint_grad_parts(
        Y_set, records, latent, wphm, specs, priors, include_survival
    )
    if include_survival:
        return np.concatenate([gX[~latent.pin_mask], gtheta])
    return gX[~latent.pin_mask]


def joint_grad_parts(
    Y_set, records, latent, wphm, specs, priors, include_survival=True
):
    """Latent gradient as an (N, q) matrix (zeros at pinned entries) plus the
    (q+2,) hazard-parameter gradient."""
    Y_set, specs = kernels._as_sets(Y_set, specs)
    X = latent.X
    n = X.shape[0]
    gX = kernels.gplvm_grad_x(Y_set, X, specs)
    gX += _x_prior_grad(X, priors, _gaussian_x_prior(specs))
    gtheta = np.zeros(0)
    if include_survival:
        t, delta = weibull.records_to_arrays(records)
        if t.size != n:
            raise InputError("record count does not match latent rows")
        gX += _survival_grad_x(t, delta, X, wphm)
        gtheta = weibull.grad_arrays(t, delta, X, wphm, priors)
    gX = np.where(latent.pin_mask, 0.0, gX)
    return gX, gtheta


def _survival_weights(t, delta, X, wphm: WphmParams):
    """w_i = Lambda0(t_i) exp(b . x_i) and the event indicator."""
    eta = X @ wphm.b
    logz = np.log(t / wphm.rho)
    with np.errstate(over="ignore"):
        w = np.exp(wphm.nu * logz + eta)
    return w, (delta == 1).astype(float)


def _survival_grad_x(t, delta, X, wphm: WphmParams) -> np.ndarray:
    w, ev = _survival_weights(t, delta, X, wphm)
    n = t.size
    return np.outer(w - ev, wphm.b) / n


# ---------------------------------------------------------------------------
# Hessian over free parameters


def assemble_hessian(
    Y_set,
    records,
    latent: LatentState,
    wphm: WphmParams | None,
    specs,
    priors: PriorConfig,
    include_survival: bool = True,
    reparameterized: bool = True,
) -> np.ndarray:
    """Exact symmetric P x P Hessian of the joint objective.

    Rows/columns follow the packing [free latent entries, b, rho, nu];
    the scale/shape coordinates are (rho_tilde, nu_tilde) when
    ``reparameterized`` (matching :func:`joint_grad`), or the natural
    (rho, nu) otherwise (the form the Laplace value uses).
    """
    Y_set, specs = kernels._as_sets(Y_set, specs)
    X = latent.X
    n, q = X.shape
    free = ~latent.pin_mask
    free_flat = free.ravel()

    Hxx = kernels.gplvm_hessian_xx(Y_set, X, specs)
    if _gaussian_x_prior(specs) and priors.enabled:
        Hxx = Hxx + np.eye(n * q) / (n * priors.sigma1**2)

    if not include_survival:
        H = Hxx[np.ix_(free_flat, free_flat)]
        return np.triu(H) + np.triu(H, 1).T

    t, delta = weibull.records_to_arrays(records)
    w, ev = _survival_weights(t, delta, X, wphm)
    b = wphm.b
    rho, nu = wphm.rho, wphm.nu
    logz = np.log(t / rho)

    # hazard curvature in X is block diagonal over individuals
    Hxx = Hxx.reshape(n, q, n, q)
    bb = np.outer(b, b) / n
    for i in range(n):
        Hxx[i, :, i, :] += w[i] * bb
    Hxx = Hxx.reshape(n * q, n * q)

    # cross blocks, rows (i, mu)
    cross_b = np.zeros((n, q, q))
    cross_b += (w * 1.0)[:, None, None] * X[:, None, :] * b[None, :, None]
    eye = np.eye(q)
    cross_b += (w - ev)[:, None, None] * eye[None, :, :]
    cross_b /= n
    cross_rho = (-(nu / rho) * w)[:, None] * b[None, :] / n
    cross_nu = (logz * w)[:, None] * b[None, :] / n

    Htt = weibull.hessian_arrays(
        t, delta, X, wphm, priors, reparameterized=reparameterized
    )
    if reparameterized:
        cross_rho = cross_rho * sigmoid(wphm.rho_tilde)
        cross_nu = cross_nu * sigmoid(wphm.nu_tilde)

    nfree = int(np.count_nonzero(free_flat))
    p = nfree + q + 2
    H = np.zeros((p, p))
    H[:nfree, :nfree] = Hxx[np.ix_(free_flat, free_flat)]
    cross = np.concatenate(
        [cross_b.reshape(n * q, q), cross_rho.reshape(n * q, 1), cross_nu.reshape(n * q, 1)],
        axis=1,
    )[free_flat]
    H[:nfree, nfree:] = cross
    H[nfree:, :nfree] = cross.T
    H[nfree:, nfree:] = Htt
    return np.triu(H) + np.triu(H, 1).T


def laplace_value(l_star: float, p: int, n: int, logdet_nh: float) -> float:
    """L* - (P/2N) log 2pi + (1/2N) log|N H| from precomputed pieces."""
    return l_star - 0.5 * p / n * LOG_2PI + 0.5 * logdet_nh / n


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitOptions:
    """Controls for :func:`fit_map`; defaults follow the implementation notes."""

    tol_outer: float = 1e-6
    max_outer: int = 100
    inner_grad_tol: float = 1e-6
    inner_max_iter: int = 400
    grad_tol: float = 1e-4
    restarts: int | None = None  # None: 1 for all-linear kernels, else 5
    joint_polish: bool = True
    compute_laplace: bool = True
    include_survival: bool = True
    init_rho: float = 3.0
    init_nu: float = 10.0
    rho_lb: float = 0.0
    nu_lb: float = 0.0
    init: "ModelFit | None" = None


@dataclass
class ModelFit:
    """A converged (or best-effort) MAP fit with Laplace metadata."""

    latent: LatentState
    wphm: WphmParams | None
    specs: list[KernelSpec]
    priors: PriorConfig
    include_survival: bool
    nll: float
    grad_norm: float
    free_param_count: int
    converged: bool
    restarts_used: int
    outer_rounds: int
    nll_trace: list = field(default_factory=list)
    hyp_nll: float | None = None
    hessian_logdet: float | None = None  # log |N H| over free parameters
    Y_set: list | None = None
    records: list | None = None
    seed: int | None = None


def _default_restarts(specs) -> int:
    return 1 if all(s.family == kernels.LINEAR for s in specs) else 5


def fit_map(
    Y_set,
    records,
    q: int,
    specs,
    priors: PriorConfig | None = None,
    opts: FitOptions | None = None,
    rng=None,
) -> ModelFit:
    """Alternating MAP fit: X block, then (b, rho, nu) block, to a stable value.

    Starts from b = 0, rho = 3, nu = 10 and X ~ N(0, I) with pinned entries
    zeroed; the best of several restarts is kept (1 for all-linear kernels,
    5 otherwise).  A final joint polish over all free parameters tightens
    stationarity before the Hessian is evaluated.
    """
    priors = priors or PriorConfig()
    opts = opts or FitOptions()
    rng = as_rng(rng)
    Y_set, specs = kernels._as_sets(Y_set, specs)
    n = Y_set[0].shape[0]
    if q < 1:
        raise InputError("q must be >= 1")
    if opts.include_survival:
        t, delta = weibull.records_to_arrays(records)
        if t.size != n:
            raise InputError("record count does not match data rows")
    else:
        t = delta = None

    restarts = opts.restarts if opts.restarts is not None else _default_restarts(specs)
    pin = make_pin_mask(n, q)

    def run_attempt(init_fit):
        if init_fit is not None:
            X0 = init_fit.latent.X.copy()
            theta0 = init_fit.wphm.theta() if init_fit.wphm is not None else None
        else:
            X0 = rng.standard_normal((n, q))
            theta0 = None
        X0[pin] = 0.0
        return _fit_once(Y_set, t, delta, X0, theta0, pin, specs, priors, opts)

    attempts = []
    for r in range(restarts):
        init_fit = opts.init if (r == 0 and opts.init is not None) else None
        attempts.append(run_attempt(init_fit))

    fit = min(attempts, key=lambda f: f.nll)
    fit.restarts_used = len(attempts)

    if opts.compute_laplace:
        ok = _attach_laplace(fit, Y_set, records, priors)
        extra = 0
        while not ok and extra < restarts:
            extra += 1
            cand = run_attempt(None)
            if _attach_laplace(cand, Y_set, records, priors) and cand.nll <= fit.nll + 1e-6:
                cand.restarts_used = fit.restarts_used + extra
                fit = cand
                ok = True
        if not ok:
            log.info("Hessian not positive definite after %d retries", extra)
            fit.hyp_nll = float("inf")
            fit.hessian_logdet = None
            fit.converged = False
            fit.restarts_used += extra

    fit.Y_set = Y_set
    fit.records = list(records) if records is not None else None
    return fit


def _fit_once(Y_set, t, delta, X0, theta0, pin, specs, priors, opts) -> ModelFit:
    n, q = X0.shape
    include_survival = opts.include_survival
    gaussian_prior = _gaussian_x_prior(specs)
    latent = LatentState(X0.copy(), pin)
    if include_survival:
        base = WphmParams.from_natural(
            np.zeros(q), opts.init_rho, opts.init_nu, rho_lb=opts.rho_lb, nu_lb=opts.nu_lb
        )
        params = base.with_theta(theta0) if theta0 is not None else base
    else:
        params = None

    inner = OptimOptions(max_iter=opts.inner_max_iter, grad_tol=opts.inner_grad_tol)

    def x_objective(xfree, params_now):
        X = latent.unpack(xfree)
        value, gX = kernels.gplvm_nll_grad_x(Y_set, X, specs)
        value += _x_prior_value(X, latent.n_free, priors, gaussian_prior)
        gX = gX + _x_prior_grad(X, priors, gaussian_prior)
        if include_survival:
            value += weibull.nll_arrays(t, delta, X, params_now, priors)
            gX = gX + _survival_grad_x(t, delta, X, params_now)
        return value, gX[~pin]

    def theta_objective(theta, X, gplvm_const):
        p = params.with_theta(theta)
        value = gplvm_const + weibull.nll_arrays(t, delta, X, p, priors)
        grad = weibull.grad_arrays(t, delta, X, p, priors)
        return value, grad

    prev = None
    trace = []
    rounds = 0
    for rounds in range(1, opts.max_outer + 1):
        res = minimize(lambda v: x_objective(v, params), latent.pack(), inner)
        latent = LatentState(latent.unpack(res.x), pin)
        cur = res.value
        if include_survival:
            gplvm_const = kernels.gplvm_nll(Y_set, latent.X, specs) + _x_prior_value(
                latent.X, latent.n_free, priors, gaussian_prior
            )
            res2 = minimize(
                lambda v: theta_objective(v, latent.X, gplvm_const), params.theta(), inner
            )
            params = params.with_theta(res2.x)
            cur = res2.value
        trace.append(cur)
        if prev is not None:
            if cur > prev + 1e-8 * (1.0 + abs(prev)):
                warnings.warn(
                    f"joint objective increased across an outer round "
                    f"({prev:.10g} -> {cur:.10g})",
                    UserWarning,
                    stacklevel=2,
                )
            if abs(prev - cur) < opts.tol_outer:
                break
        prev = cur

    if opts.joint_polish:
        latent, params = _polish(
            Y_set, t, delta, latent, params, specs, priors, opts, inner
        )

    # post-hoc reflection fix: make pinned-diagonal entries nonnegative
    X = latent.X.copy()
    b = params.b.copy() if include_survival else None
    for k in range(min(q, n)):
        if X[k, k] < 0:
            X[:, k] *= -1.0
            if b is not None:
                b[k] *= -1.0
    latent = LatentState(X, pin)
    if include_survival:
        params = replace(params, b=b)

    anchor = float(np.linalg.norm(X[0]))
    scale = float(np.mean(np.linalg.norm(X, axis=1))) or 1.0
    if q > 1 and anchor < 1e-6 * scale:
        warnings.warn(
            "first latent row is close to zero; the pinned solution may not be unique",
            UserWarning,
            stacklevel=2,
        )

    records = (
        weibull.arrays_to_records(t, delta) if include_survival else None
    )
    value = joint_nll(Y_set, records, latent, params, specs, priors, include_survival)
    grad = joint_grad(Y_set, records, latent, params, specs, priors, include_survival)
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    return ModelFit(
        latent=latent,
        wphm=params,
        specs=list(specs),
        priors=priors,
        include_survival=include_survival,
        nll=value,
        grad_norm=grad_norm,
        free_param_count=_count_free_params(latent, include_survival),
        converged=grad_norm <= opts.grad_tol,
        restarts_used=1,
        outer_rounds=rounds,
        nll_trace=trace,
    )


def _polish(Y_set, t, delta, latent, params, specs, priors, opts, inner):
    pin = latent.pin_mask
    include_survival = opts.include_survival
    gaussian_prior = _gaussian_x_prior(specs)
    nfree = latent.n_free

    def objective(z):
        X = latent.unpack(z[:nfree])
        value, gX = kernels.gplvm_nll_grad_x(Y_set, X, specs)
        value += _x_prior_value(X, nfree, priors, gaussian_prior)
        gX = gX + _x_prior_grad(X, priors, gaussian_prior)
        if include_survival:
            p = params.with_theta(z[nfree:])
            value += weibull.nll_arrays(t, delta, X, p, priors)
            gX = gX + _survival_grad_x(t, delta, X, p)
            gtheta = weibull.grad_arrays(t, delta, X, p, priors)
            return value, np.concatenate([gX[~pin], gtheta])
        return value, gX[~pin]

    z0 = latent.pack()
    if include_survival:
        z0 = np.concatenate([z0, params.theta()])
    res = minimize(objective, z0, inner)
    new_latent = LatentState(latent.unpack(res.x[:nfree]), pin)
    new_params = params.with_theta(res.x[nfree:]) if include_survival else None
    return new_latent, new_params


def _attach_laplace(fit: ModelFit, Y_set, records, priors) -> bool:
    """Compute log|N H| in natural coordinates; False if H is not PD."""
    H = assemble_hessian(
        Y_set,
        records,
        fit.latent,
        fit.wphm,
        fit.specs,
        priors,
        include_survival=fit.include_survival,
        reparameterized=False,
    )
    try:
        chol = cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        return False
    n = fit.latent.X.shape[0]
    p = fit.free_param_count
    logdet_h = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    fit.hessian_logdet = p * np.log(n) + logdet_h
    fit.hyp_nll = laplace_value(fit.nll, p, n, fit.hessian_logdet)
    return True


def laplace_hyp_nll(fit: ModelFit) -> float:
    """Laplace-approximate negative hyperparameter log likelihood of a fit."""
    if fit.hyp_nll is None:
        if fit.Y_set is None:
            raise NumericalError("fit carries no data; refit with compute_laplace=True")
        if not _attach_laplace(fit, fit.Y_set, fit.records, fit.priors):
            raise NumericalError(
                "Hessian is not positive definite at the fitted point; refit"
            )
    return fit.hyp_nll


# ---------------------------------------------------------------------------
# hyperparameter optimization and dimensionality scanning


@dataclass(frozen=True)
class HyperOptions:
    """Search controls for the Laplace hyperparameter objective."""

    max_evals: int = 60
    xatol: float = 1e-3
    fatol: float = 1e-5
    log_noise_bounds: tuple = (np.log(1e-8), np.log(1e3))
    log_sigma_bounds: tuple = (np.log(1e-4), np.log(1e4))
    log_length_bounds: tuple = (np.log(1e-4), np.log(1e4))


@dataclass
class HyperResult:
    specs: list[KernelSpec]
    fit: ModelFit
    trace: list  # (hyperparameter vector, hyper-NLL) per evaluation
    n_evals: int


def _initial_specs(Y_set, families) -> list[KernelSpec]:
    specs = []
    for Y, fam in zip(Y_set, families):
        beta2 = 0.1 * float(np.mean(np.var(Y, axis=0))) or 0.1
        if fam == SE:
            specs.append(KernelSpec(fam, noise_var=beta2, sigma=1.0, lengthscale=1.0))
        else:
            specs.append(KernelSpec(fam, noise_var=beta2, sigma=1.0))
    return specs


def _pack_hyper(specs) -> np.ndarray:
    vec = []
    for s in specs:
        if s.family == SE:
            vec.extend([np.log(s.sigma), np.log(s.lengthscale), np.log(s.noise_var)])
        else:
            vec.append(np.log(s.noise_var))
    return np.array(vec)


def _unpack_hyper(vec, specs0) -> list[KernelSpec]:
    out = []
    i = 0
    for s in specs0:
        if s.family == SE:
            out.append(
                KernelSpec(
                    s.family,
                    sigma=float(np.exp(vec[i])),
                    lengthscale=float(np.exp(vec[i + 1])),
                    noise_var=float(np.exp(vec[i + 2])),
                )
            )
            i += 3
        else:
            out.append(KernelSpec(s.family, sigma=1.0, noise_var=float(np.exp(vec[i]))))
            i += 1
    return out


def _hyper_bounds(specs0, hopts: HyperOptions):
    lo, hi = [], []
    for s in specs0:
        if s.family == SE:
            lo.extend([hopts.log_sigma_bounds[0], hopts.log_length_bounds[0], hopts.log_noise_bounds[0]])
            hi.extend([hopts.log_sigma_bounds[1], hopts.log_length_bounds[1], hopts.log_noise_bounds[1]])
        else:
            lo.append(hopts.log_noise_bounds[0])
            hi.append(hopts.log_noise_bounds[1])
    return np.array(lo), np.array(hi)


def optimize_hyperparameters(
    Y_set,
    records,
    q: int,
    families,
    priors: PriorConfig | None = None,
    fit_opts: FitOptions | None = None,
    hyper_opts: HyperOptions | None = None,
    rng=None,
    init_specs=None,
) -> HyperResult:
    """Minimize the Laplace hyperparameter objective over kernel parameters.

    Searches the per-source noise variances for all families, plus
    (sigma, lengthscale) for squared exponential sources; sigma stays
    fixed at 1 for linear/polynomial.  Each objective evaluation refits
    the model, warm-started from the previous evaluation's optimum.
    """
    priors = priors or PriorConfig()
    fit_opts = fit_opts or FitOptions()
    hopts = hyper_opts or HyperOptions()
    rng = as_rng(rng)
    if isinstance(Y_set, np.ndarray):
        Y_set = [Y_set]
    Y_set = [np.asarray(Y, dtype=float) for Y in Y_set]
    if isinstance(families, str):
        families = [families] * len(Y_set)
    specs0 = list(init_specs) if init_specs is not None else _initial_specs(Y_set, families)
    lo, hi = _hyper_bounds(specs0, hopts)

    state = {"warm": None, "best": None, "trace": [], "evals": 0}

    def evaluate(vec):
        vec = np.clip(np.asarray(vec, dtype=float).ravel(), lo, hi)
        specs = _unpack_hyper(vec, specs0)
        warm = state["warm"]
        fo = replace(
            fit_opts,
            compute_laplace=True,
            init=warm,
            restarts=fit_opts.restarts if warm is None else 1,
        )
        try:
            fit = fit_map(Y_set, records, q, specs, priors, fo, rng)
        except NumericalError:
            state["trace"].append((vec.copy(), float("inf")))
            state["evals"] += 1
            return float("inf")
        value = fit.hyp_nll if fit.hyp_nll is not None else float("inf")
        state["evals"] += 1
        state["trace"].append((vec.copy(), value))
        if np.isfinite(value):
            state["warm"] = fit
            if state["best"] is None or value < state["best"][0]:
                state["best"] = (value, specs, fit)
        return value

    x0 = _pack_hyper(specs0)
    if x0.size == 1:
        _search_scalar(evaluate, float(x0[0]), float(lo[0]), float(hi[0]), hopts)
    else:
        import scipy.optimize

        scipy.optimize.minimize(
            evaluate,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": hopts.max_evals,
                "xatol": hopts.xatol,
                "fatol": hopts.fatol,
                "initial_simplex": _initial_simplex(x0, lo, hi),
            },
        )
    if state["best"] is None:
        raise NumericalError("no hyperparameter evaluation produced a usable fit")
    value, specs, fit = state["best"]
    return HyperResult(specs=specs, fit=fit, trace=state["trace"], n_evals=state["evals"])


def _search_scalar(evaluate, x0, lo, hi, hopts: HyperOptions, span: float = 2.0):
    """Bounded scalar search around x0; widens once toward a boundary minimum."""
    import scipy.optimize

    a, b = max(lo, x0 - span), min(hi, x0 + span)
    for _ in range(2):
        res = scipy.optimize.minimize_scalar(
            lambda v: evaluate(np.array([v])),
            bounds=(a, b),
            method="bounded",
            options={"xatol": hopts.xatol, "maxiter": hopts.max_evals},
        )
        x = float(res.x)
        at_low = x - a < 4 * hopts.xatol and a > lo
        at_high = b - x < 4 * hopts.xatol and b < hi
        if not (at_low or at_high):
            break
        if at_low:
            a, b = max(lo, a - 2 * span), a + 2 * hopts.xatol
        else:
            a, b = b - 2 * hopts.xatol, min(hi, b + 2 * span)


def _initial_simplex(x0, lo, hi, scale=0.4):
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] = min(hi[i], simplex[i + 1, i] + scale)
    return simplex


@dataclass
class ScanEntry:
    q: int
    hyp_nll: float
    specs: list[KernelSpec]
    fit: ModelFit


@dataclass
class ScanResult:
    entries: list
    q_star: int
    ratios: dict  # q -> exp(N * (L_hyp(q) - L_hyp(q*)))


def scan_dimensionality(
    Y_set,
    records,
    q_range,
    families,
    priors: PriorConfig | None = None,
    fit_opts: FitOptions | None = None,
    hyper_opts: HyperOptions | None = None,
    rng=None,
) -> ScanResult:
    """Optimize hyperparameters at each q and pick the Laplace minimizer."""
    rng = as_rng(rng)
    entries = []
    for q in q_range:
        result = optimize_hyperparameters(
            Y_set, records, int(q), families, priors, fit_opts, hyper_opts, rng
        )
        entries.append(
            ScanEntry(q=int(q), hyp_nll=result.fit.hyp_nll, specs=result.specs, fit=result.fit)
        )
    best = min(entries, key=lambda e: e.hyp_nll)
    n = best.fit.latent.X.shape[0]
    ratios = {}
    for e in entries:
        with np.errstate(over="ignore"):
            ratios[e.q] = float(np.exp(n * (e.hyp_nll - best.hyp_nll)))
    return ScanResult(entries=entries, q_star=best.q, ratios=ratios)
