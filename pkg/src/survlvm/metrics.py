"""Survival-analysis evaluation: KM curves, log-rank, concordance, CV.

Conventions (the literature varies, so they are fixed here):

* Harrell's concordance: a pair (i, j) is comparable when i is uncensored
  and t_i < t_j (strictly); ties in score count 1/2.
* Uno's concordance: the same pairs, restricted to t_i < tau and weighted
  by 1 / G(t_i-)^2 where G is the Kaplan-Meier estimate of the censoring
  survival function; tau defaults to the largest uncensored time.
* Log-rank: two-group statistic with the hypergeometric variance;
  simultaneous events at a time are handled as one tied event time.
* Risk-group split: median split on score, descending; the extra member
  of an odd cohort goes to the low-risk group; ties broken by index order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from ._util import as_rng
from .errors import InputError
from .weibull import PriorConfig, SurvivalRecord, fit_weibull_ph, records_to_arrays


@dataclass
class KmCurve:
    """Product-limit estimate as ordered step rows."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __iter__(self):
        return iter(zip(self.times, self.survival, self.at_risk, self.events))


def kaplan_meier(records) -> KmCurve:
    """Kaplan-Meier curve with one row per distinct observed time."""
    if not records:
        raise InputError("no records")
    t, delta = records_to_arrays(records)
    order = np.argsort(t, kind="stable")
    t, delta = t[order], delta[order]
    uniq = np.unique(t)
    at_risk = np.empty(uniq.size)
    events = np.empty(uniq.size, dtype=int)
    surv = np.empty(uniq.size)
    n_risk = t.size
    s = 1.0
    for k, ut in enumerate(uniq):
        here = t == ut
        d = int(np.sum(delta[here]))
        at_risk[k] = n_risk
        events[k] = d
        if d > 0:
            s *= 1.0 - d / n_risk
        surv[k] = s
        n_risk -= int(np.sum(here))
    return KmCurve(times=uniq, survival=surv, at_risk=at_risk, events=events)


@dataclass
class LogRankResult:
    chi_square: float
    p_value: float


def log_rank(records_a, records_b) -> LogRankResult:
    """Two-group log-rank test; chi-square with one degree of freedom."""
    if not records_a or not records_b:
        raise InputError("both groups must be nonempty")
    ta, da = records_to_arrays(records_a)
    tb, db = records_to_arrays(records_b)
    if int(np.sum(da)) + int(np.sum(db)) == 0:
        raise InputError("log-rank test undefined without any events")
    event_times = np.unique(np.concatenate([ta[da == 1], tb[db == 1]]))
    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    for ut in event_times:
        na = int(np.sum(ta >= ut))
        nb = int(np.sum(tb >= ut))
        n = na + nb
        oa = int(np.sum((ta == ut) & (da == 1)))
        ob = int(np.sum((tb == ut) & (db == 1)))
        d = oa + ob
        if n == 0 or d == 0:
            continue
        observed_a += oa
        expected_a += d * na / n
        if n > 1:
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1)
    if variance == 0:
        return LogRankResult(chi_square=0.0, p_value=1.0)
    stat = (observed_a - expected_a) ** 2 / variance
    return LogRankResult(chi_square=float(stat), p_value=float(chi2.sf(stat, df=1)))


def _censoring_survival_before(records):
    """G(t-) at each record's own time, from the censoring KM."""
    t, delta = records_to_arrays(records)
    flipped = [SurvivalRecord(r.time, 1 - r.event) for r in records]
    curve = kaplan_meier(flipped)
    out = np.ones(t.size)
    for i, ti in enumerate(t):
        before = curve.times < ti
        out[i] = curve.survival[before][-1] if np.any(before) else 1.0
    return out


def concordance(risk_scores, records, variant: str = "harrell", truncation: float | None = None) -> float:
    """Concordance of risk scores with observed outcomes, in [0, 1]."""
    scores = np.asarray(risk_scores, dtype=float)
    t, delta = records_to_arrays(records)
    if scores.size != t.size:
        raise InputError("scores and records differ in length")
    if variant not in ("harrell", "uno"):
        raise InputError(f"unknown concordance variant {variant!r}")
    if variant == "uno":
        if truncation is None:
            if not np.any(delta == 1):
                raise InputError("no uncensored records to set the truncation time")
            truncation = float(np.max(t[delta == 1]))
        g = _censoring_survival_before(records)
        with np.errstate(divide="ignore"):
            weights = np.where(g > 0, 1.0 / g**2, np.inf)
    num = 0.0
    den = 0.0
    for i in range(t.size):
        if delta[i] != 1:
            continue
        if variant == "uno":
            if t[i] > truncation:
                continue
            if not np.isfinite(weights[i]):
                warnings.warn(
                    "skipping pairs with zero censoring-survival weight", UserWarning
                )
                continue
            w = weights[i]
        else:
            w = 1.0
        comparable = t > t[i]
        if not np.any(comparable):
            continue
        si = scores[i]
        sj = scores[comparable]
        num += w * (np.sum(sj < si) + 0.5 * np.sum(sj == si))
        den += w * np.count_nonzero(comparable)
    if den == 0:
        raise InputError("no comparable pairs")
    return float(num / den)


def mse_event_times(predicted, records) -> float:
    """Mean squared error over uncensored records only."""
    predicted = np.asarray(predicted, dtype=float)
    t, delta = records_to_arrays(records)
    if predicted.size != t.size:
        raise InputError("predictions and records differ in length")
    ev = delta == 1
    if not np.any(ev):
        raise InputError("no uncensored records")
    return float(np.mean((predicted[ev] - t[ev]) ** 2))


def split_risk_groups(risk_scores):
    """(high, low) index arrays from a median split on score."""
    scores = np.asarray(risk_scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    n_high = scores.size // 2
    return np.sort(order[:n_high]), np.sort(order[n_high:])


@dataclass
class CvReport:
    metric: str
    fold_values: list
    mean: float
    folds: list = field(default_factory=list)  # test-index arrays per fold
    invalid_folds: list = field(default_factory=list)


def make_folds(n: int, k: int, seed) -> list[np.ndarray]:
    """Seeded shuffle into k folds whose sizes differ by at most one."""
    if k < 2:
        raise InputError("k must be >= 2")
    if n < k:
        raise InputError("fewer samples than folds")
    perm = as_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, k)]


def kfold_cv(
    Y_set,
    records,
    k: int,
    model_opts: "CvModelOptions",
    metric: str = "concordance",
    seed=0,
) -> CvReport:
    """k-fold cross-validation of predictive performance.

    Per fold: fit on the training part, project the held-out individuals
    into the latent space (or fit the observed-space hazard model when
    ``model_opts.model == "observed"``), score them, and compute the
    metric.  Folds without comparable pairs (or, for MSE, without any
    uncensored member) are marked invalid and excluded from the mean.
    """
    from . import model as model_mod
    from . import predict as predict_mod

    if isinstance(Y_set, np.ndarray):
        Y_set = [Y_set]
    Y_set = [np.asarray(Y, dtype=float) for Y in Y_set]
    n = Y_set[0].shape[0]
    records = list(records)
    if len(records) != n:
        raise InputError("records and data differ in length")
    folds = make_folds(n, k, seed)
    rng = as_rng(seed)

    values = []
    invalid = []
    for fold_id, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        Y_train = [Y[train_idx] for Y in Y_set]
        Y_test = [Y[test_idx] for Y in Y_set]
        rec_train = [records[i] for i in train_idx]
        rec_test = [records[i] for i in test_idx]
        try:
            if model_opts.model == "observed":
                cov = np.hstack(Y_train)
                params, _, _ = fit_weibull_ph(cov, rec_train, model_opts.priors)
                cov_test = np.hstack(Y_test)
                scores = cov_test @ params.b
                rho, nu = params.rho, params.nu
            else:
                fit = model_mod.fit_map(
                    Y_train,
                    rec_train,
                    model_opts.q,
                    model_opts.specs,
                    model_opts.priors,
                    model_opts.fit_opts,
                    rng,
                )
                scores = np.empty(test_idx.size)
                for j in range(test_idx.size):
                    proj = predict_mod.project_new(
                        [Y[j] for Y in Y_test], fit, rng=rng,
                        n_starts=model_opts.projection_starts,
                    )
                    scores[j] = predict_mod.risk_score(proj.x_star, fit)
                rho, nu = fit.wphm.rho, fit.wphm.nu
            if metric == "concordance":
                value = concordance(scores, rec_test, variant=model_opts.variant)
            elif metric == "mse":
                from .predict import event_time_moments

                preds = np.array([event_time_moments(g, rho, nu)[0] for g in scores])
                value = mse_event_times(preds, rec_test)
            else:
                raise InputError(f"unknown metric {metric!r}")
        except InputError as exc:
            warnings.warn(f"fold {fold_id} invalid: {exc}", UserWarning)
            invalid.append(fold_id)
            values.append(float("nan"))
            continue
        values.append(float(value))

    valid = [v for v in values if np.isfinite(v)]
    if not valid:
        raise InputError("no valid folds")
    return CvReport(
        metric=metric,
        fold_values=values,
        mean=float(np.mean(valid)),
        folds=folds,
        invalid_folds=invalid,
    )


@dataclass
class CvModelOptions:
    """What to fit inside each CV fold."""

    q: int = 2
    specs: list = None
    priors: PriorConfig = None
    fit_opts: object = None
    model: str = "latent"  # or "observed"
    variant: str = "harrell"
    projection_starts: int = 10

    def __post_init__(self):
        if self.priors is None:
            self.priors = PriorConfig()
        if self.model not in ("latent", "observed"):
            raise InputError("model must be 'latent' or 'observed'")
