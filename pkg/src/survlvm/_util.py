"""Small numeric helpers used across modules."""

from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def as_rng(seed_or_rng) -> np.random.Generator:
    """Normalize an int seed / Generator / None into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    x = np.asarray(x, dtype=float)
    out = np.logaddexp(0.0, x)
    if out.ndim == 0:
        return float(out)
    return out


def softplus_inv(y):
    """Inverse of softplus on y > 0; exact round trip in float64.

    For large y, log(e^y - 1) = y + log1p(-e^-y) avoids overflow.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("softplus_inv requires positive input")
    with np.errstate(over="ignore"):
        small = y < 30.0
        out = np.where(small, np.log(np.expm1(np.minimum(y, 30.0))), y + np.log1p(-np.exp(-y)))
    if out.ndim == 0:
        return float(out)
    return out


def random_orthogonal(q: int, rng) -> np.ndarray:
    """Haar-ish random orthogonal q x q matrix via QR."""
    rng = as_rng(rng)
    a = rng.standard_normal((q, q))
    qmat, r = np.linalg.qr(a)
    return qmat * np.sign(np.diag(r))
