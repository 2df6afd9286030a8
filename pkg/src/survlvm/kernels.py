"""Latent-variable kernels and the Gaussian-process observation term.

Implements the three kernel families (linear, second-order polynomial,
squared exponential), the per-source covariance matrices, and analytic
first/second derivatives of the negative log observation likelihood with
respect to the latent coordinates.

Conventions used throughout:

* ``X`` is the (N, q) latent matrix; ``Y_set`` is a list of (N, d_s)
  observation matrices, one per data source, with a matching list of
  :class:`KernelSpec`.
* The observation term for one source is
  ``(1/2N) sum_mu y_mu' K^-1 y_mu + (d/2N) log|K| + (d/2) log 2pi``
  with ``K_ij = k(x_i, x_j) + noise_var * delta_ij``.  Values are summed
  over sources.
* Latent-gradient sparsity: ``dK_ij/dx_r`` is nonzero only when
  ``r in {i, j}``, which keeps per-coordinate gradients O(N).

All functions are pure; inputs are treated as immutable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._util import LOG_2PI
from .errors import InputError, NumericalError

LINEAR = "linear"
POLY2 = "poly2"
SE = "se"
KERNEL_FAMILIES = (LINEAR, POLY2, SE)

_POLY_ORDER = 2
_JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """One data source's kernel family and hyperparameters.

    Parameters
    ----------
    family : str
        One of ``"linear"``, ``"poly2"``, ``"se"``.
    noise_var : float
        Observation noise variance (> 0); added to the kernel diagonal.
    sigma : float
        Signal variance (> 0).  Held at 1 during fitting for the linear
        and polynomial families, where it is redundant with the latent
        scale.
    lengthscale : float, optional
        Inverse-squared-distance rate of the squared exponential kernel,
        ``k = sigma * exp(-lengthscale * |x_i - x_j|^2 / 2)``.  Required
        (> 0) for ``"se"``, ignored otherwise.
    """

    family: str
    noise_var: float
    sigma: float = 1.0
    lengthscale: float | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}")
        if not (np.isfinite(self.noise_var) and self.noise_var > 0):
            raise InputError("noise_var must be positive and finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InputError("sigma must be positive and finite")
        if self.family == SE:
            if self.lengthscale is None or not (
                np.isfinite(self.lengthscale) and self.lengthscale > 0
            ):
                raise InputError("se kernel requires a positive lengthscale")


@dataclass
class KernelMatrix:
    """A factorized covariance matrix for one source."""

    K: np.ndarray
    chol: tuple
    logdet: float
    jitter: float = 0.0
    _inv: np.ndarray | None = field(default=None, repr=False)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """K^{-1} B via the cached Cholesky factor."""
        return cho_solve(self.chol, B)

    @property
    def inv(self) -> np.ndarray:
        if self._inv is None:
            self._inv = cho_solve(self.chol, np.eye(self.K.shape[0]))
        return self._inv


def _check_latent(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InputError("latent matrix must be (N, q) with N, q >= 1")
    if not np.all(np.isfinite(X)):
        raise InputError("latent matrix contains non-finite values")
    return X


def kernel_only(X, spec: KernelSpec) -> np.ndarray:
    """Noise-free kernel Gram matrix k(x_i, x_j)."""
    X = _check_latent(X)
    if spec.family == LINEAR:
        return spec.sigma * (X @ X.T)
    if spec.family == POLY2:
        return spec.sigma * (1.0 + X @ X.T) ** _POLY_ORDER
    sq = _sqdist(X, X)
    return spec.sigma * np.exp(-0.5 * spec.lengthscale * sq)


def kernel_cross(X, Z, spec: KernelSpec) -> np.ndarray:
    """Noise-free cross kernel k(x_i, z_j), shape (N, M)."""
    X = _check_latent(X)
    Z = _check_latent(Z)
    if spec.family == LINEAR:
        return spec.sigma * (X @ Z.T)
    if spec.family == POLY2:
        return spec.sigma * (1.0 + X @ Z.T) ** _POLY_ORDER
    return spec.sigma * np.exp(-0.5 * spec.lengthscale * _sqdist(X, Z))


def kernel_point(x, spec: KernelSpec) -> float:
    """k(x, x) for a single latent point."""
    x = np.asarray(x, dtype=float).ravel()
    s2 = float(x @ x)
    if spec.family == LINEAR:
        return spec.sigma * s2
    if spec.family == POLY2:
        return spec.sigma * (1.0 + s2) ** _POLY_ORDER
    return spec.sigma


def _sqdist(X, Z):
    xx = np.sum(X * X, axis=1)[:, None]
    zz = np.sum(Z * Z, axis=1)[None, :]
    sq = xx + zz - 2.0 * (X @ Z.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def kernel_matrix(X, spec: KernelSpec) -> KernelMatrix:
    """Build and factorize K = k(X, X) + noise_var * I.

    A single jitter retry (1e-10 * mean diagonal) guards near-duplicate
    latent rows; a second factorization failure raises
    :class:`NumericalError` reporting the smallest pivot.
    """
    X = _check_latent(X)
    K = kernel_only(X, spec)
    K[np.diag_indices_from(K)] += spec.noise_var
    jitter = 0.0
    try:
        chol = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        jitter = _JITTER_SCALE * float(np.mean(np.diag(K)))
        K2 = K + jitter * np.eye(K.shape[0])
        try:
            chol = cho_factor(K2, lower=True)
        except np.linalg.LinAlgError:
            pivot = float(np.linalg.eigvalsh(K2).min())
            raise NumericalError(
                f"kernel matrix factorization failed; smallest pivot {pivot:.3e}"
            ) from None
        K = K2
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    return KernelMatrix(K=K, chol=chol, logdet=logdet, jitter=jitter)


def _as_sets(Y_set, specs):
    if isinstance(Y_set, np.ndarray):
        Y_set = [Y_set]
    if isinstance(specs, KernelSpec):
        specs = [specs]
    Y_set = [np.asarray(Y, dtype=float) for Y in Y_set]
    if len(Y_set) != len(specs):
        raise InputError("number of data sources and kernel specs differ")
    if not Y_set:
        raise InputError("at least one data source is required")
    n = Y_set[0].shape[0]
    for Y in Y_set:
        if Y.ndim != 2:
            raise InputError("each data source must be a 2-d array")
        if Y.shape[0] != n:
            raise InputError("all data sources must share the same row count")
    return Y_set, list(specs)


def _warn_latent_dim(X, Y_set):
    dmin = min(Y.shape[1] for Y in Y_set)
    if X.shape[1] >= dmin:
        warnings.warn(
            f"latent dimension q={X.shape[1]} is not smaller than the smallest "
            f"source dimension d={dmin}",
            UserWarning,
            stacklevel=3,
        )


def gplvm_nll(Y_set, X, specs) -> float:
    """Negative log observation likelihood, 1/N-normalized, summed over sources."""
    X = _check_latent(X)
    Y_set, specs = _as_sets(Y_set, specs)
    _warn_latent_dim(X, Y_set)
    n = X.shape[0]
    total = 0.0
    for Y, spec in zip(Y_set, specs):
        km = kernel_matrix(X, spec)
        alpha = km.solve(Y)
        d = Y.shape[1]
        total += (
            0.5 * float(np.sum(Y * alpha)) / n
            + 0.5 * d * km.logdet / n
            + 0.5 * d * LOG_2PI
        )
    return total


def _source_pieces(Y, X, spec):
    """Shared factorization products for one source: (km, alpha, A, G).

    A = dL/dK = (d/2N)(K^-1 - G) with G = K^-1 S K^-1 and S = Y Y'/d.
    """
    n = X.shape[0]
    d = Y.shape[1]
    km = kernel_matrix(X, spec)
    alpha = km.solve(Y)
    G = (alpha @ alpha.T) / d
    A = (0.5 * d / n) * (km.inv - G)
    return km, alpha, A, G


def _grad_x_source(Y, X, spec, pieces=None) -> np.ndarray:
    n, q = X.shape
    d = Y.shape[1]
    km, alpha, A, G = pieces if pieces is not None else _source_pieces(Y, X, spec)
    if spec.family == LINEAR:
        return 2.0 * spec.sigma * (A @ X)
    if spec.family == POLY2:
        P = (
            _POLY_ORDER
            * spec.sigma
            * (1.0 + X @ X.T) ** (_POLY_ORDER - 1)
        )
        return 2.0 * ((A * P).T @ X)
    Kt = km.K - np.diag(np.full(n, spec.noise_var + km.jitter))
    E = A * Kt
    l = spec.lengthscale
    return 2.0 * l * (E.T @ X - X * E.sum(axis=0)[:, None])


def gplvm_grad_x(Y_set, X, specs, pin_mask=None) -> np.ndarray:
    """Gradient of :func:`gplvm_nll` w.r.t. X; pinned entries masked to 0."""
    value, grad = gplvm_nll_grad_x(Y_set, X, specs, pin_mask=pin_mask)
    return grad


def gplvm_nll_grad_x(Y_set, X, specs, pin_mask=None):
    """Value and latent gradient in one pass (single factorization per source)."""
    X = _check_latent(X)
    Y_set, specs = _as_sets(Y_set, specs)
    _warn_latent_dim(X, Y_set)
    n = X.shape[0]
    total = 0.0
    grad = np.zeros_like(X)
    for Y, spec in zip(Y_set, specs):
        pieces = _source_pieces(Y, X, spec)
        km, alpha, A, G = pieces
        d = Y.shape[1]
        total += (
            0.5 * float(np.sum(Y * alpha)) / n
            + 0.5 * d * km.logdet / n
            + 0.5 * d * LOG_2PI
        )
        grad += _grad_x_source(Y, X, spec, pieces=pieces)
    if pin_mask is not None:
        grad = np.where(pin_mask, 0.0, grad)
    return total, grad


def half_grad_mats(X, spec: KernelSpec, Kt=None) -> list[np.ndarray]:
    """The q matrices W_mu with W_mu[i, r] = dK_ir/dx_{r,mu}.

    Diagonal entries carry half of dK_rr/dx_{r,mu} so that, as a matrix,
    dK/dx_{p,nu} = e_p D' + D e_p' with D = W_nu[:, p].  Only column/row p
    of dK/dx_{p,nu} is nonzero, which is the sparsity that makes per-row
    gradients O(N).
    """
    X = _check_latent(X)
    n, q = X.shape
    if spec.family == LINEAR:
        return [np.tile(spec.sigma * X[:, m][:, None], (1, n)) for m in range(q)]
    if spec.family == POLY2:
        P = _POLY_ORDER * spec.sigma * (1.0 + X @ X.T) ** (_POLY_ORDER - 1)
        return [P * X[:, m][:, None] for m in range(q)]
    if Kt is None:
        Kt = kernel_only(X, spec)
    l = spec.lengthscale
    return [l * (X[:, m][:, None] - X[:, m][None, :]) * Kt for m in range(q)]


def gplvm_hessian_xx(Y_set, X, specs) -> np.ndarray:
    """Exact (Nq, Nq) second derivatives of :func:`gplvm_nll` w.r.t. X.

    Flattening is row-major over (row, latent dimension).  The returned
    matrix is exactly symmetric: the upper triangle is computed and
    mirrored.
    """
    X = _check_latent(X)
    Y_set, specs = _as_sets(Y_set, specs)
    n, q = X.shape
    H = np.zeros((n * q, n * q))
    for Y, spec in zip(Y_set, specs):
        H += _hessian_xx_source(Y, X, spec)
    return np.triu(H) + np.triu(H, 1).T


def _hessian_xx_source(Y, X, spec) -> np.ndarray:
    n, q = X.shape
    d = Y.shape[1]
    km, alpha, A, G = _source_pieces(Y, X, spec)
    Kinv = km.inv
    Kt = km.K - np.diag(np.full(n, spec.noise_var + km.jitter))
    W = half_grad_mats(X, spec, Kt=Kt)

    UK = [Kinv @ W[v] for v in range(q)]
    UG = [G @ W[v] for v in range(q)]
    M1 = [W[m].T @ Kinv for m in range(q)]
    M2 = [W[m].T @ G for m in range(q)]
    Q = [[M1[m] @ W[v] for v in range(q)] for m in range(q)]
    R = [[M2[m] @ W[v] for v in range(q)] for m in range(q)]

    cd = d / n
    H = np.zeros((n, q, n, q))
    for p in range(n):
        kp = Kinv[:, p]
        gp = G[:, p]
        for v in range(q):
            u = UK[v][:, p]
            w = UG[v][:, p]
            for m in range(q):
                H[p, v, :, m] += cd * (
                    Q[m][v][:, p] * (gp - kp)
                    + M1[m][:, p] * (w - u)
                    + M2[m][:, p] * u
                    + R[m][v][:, p] * kp
                )
            H[p, v] += _dw_term(spec, X, A, Kt, p, v)
    return H.reshape(n * q, n * q)


def _dw_term(spec, X, A, Kt, p, v):
    """Slice contribution 2 * sum_i A_ir dW_mu[i,r]/dx_{p,v}, shape (N, q)."""
    n, q = X.shape
    out = np.zeros((n, q))
    if spec.family == LINEAR:
        out[:, v] = 2.0 * spec.sigma * A[p, :]
        return out
    if spec.family == POLY2:
        a = _POLY_ORDER
        s = spec.sigma
        B = 1.0 + X @ X[p]
        Bm1 = B ** (a - 1)
        Bm2 = B ** (a - 2) if a >= 2 else np.zeros(n)
        c1 = 2.0 * a * s * (a - 1) * A[p, :] * Bm2 * X[:, v]
        out += c1[:, None] * X[p][None, :]
        out[:, v] += 2.0 * a * s * A[p, :] * Bm1
        wrow = 2.0 * a * s * (a - 1) * A[:, p] * Bm2 * X[:, v]
        wrow[p] *= 2.0
        row_p = wrow @ X
        row_p[v] += 2.0 * a * s * A[p, p] * Bm1[p]
        out[p, :] = row_p
        return out
    l = spec.lengthscale
    e2 = A[p, :] * Kt[p, :]
    dv = X[p, v] - X[:, v]
    diff = X[p][None, :] - X
    out += (-2.0 * l * l * e2 * dv)[:, None] * diff
    out[:, v] += 2.0 * l * e2
    ev = X[:, v] - X[p, v]
    wrow = 2.0 * l * l * (A[:, p] * Kt[:, p]) * ev
    row_p = wrow @ (X - X[p][None, :])
    row_p[v] -= 2.0 * l * (float(np.sum(A[:, p] * Kt[:, p])) - A[p, p] * Kt[p, p])
    out[p, :] = row_p
    return out
