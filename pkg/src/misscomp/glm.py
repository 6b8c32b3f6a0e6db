"""Weighted GLM fitting (IRLS), prediction, influence functions, marginals.

One solver covers the three families the estimators need (logistic,
linear, Poisson). Non-convergence is a recorded state on the fit, never
an exception, so the replication harness can track convergence rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .tabular import Dataset, design_matrix_labeled

FAMILIES = ("binomial-logit", "gaussian-identity", "poisson-log")

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 50
DIVERGENCE_BOUND = 25.0

_EPS = 1e-10


@dataclass
class GlmFit:
    family: str
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    deviance: float
    n_used: int
    weight_sum: float
    cov_kind: str = "model"
    formula: tuple[str, ...] | None = None
    labels: tuple[str, ...] | None = None
    response: str | None = None

    @property
    def p(self) -> int:
        return len(self.coef)


def _mean_and_var(family: str, eta: np.ndarray):
    if family == "binomial-logit":
        m = expit(eta)
        return m, np.clip(m * (1.0 - m), _EPS, None)
    if family == "gaussian-identity":
        return eta, np.ones_like(eta)
    if family == "poisson-log":
        m = np.exp(np.clip(eta, -30, 30))
        return m, np.clip(m, _EPS, None)
    raise ValueError(f"unknown family {family!r}")


def _deviance(family: str, y, m, w):
    if family == "binomial-logit":
        mc = np.clip(m, _EPS, 1.0 - _EPS)
        return -2.0 * np.sum(w * (y * np.log(mc) + (1.0 - y) * np.log(1.0 - mc)))
    if family == "gaussian-identity":
        return float(np.sum(w * (y - m) ** 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / np.clip(m, _EPS, None)), 0.0)
    return 2.0 * float(np.sum(w * (term - (y - m))))


def fit_glm(X, y, weights=None, family="binomial-logit", offset=None) -> GlmFit:
    """Weighted maximum-likelihood GLM via iteratively reweighted least squares.

    Converged means the relative deviance change fell below 1e-8 within 50
    iterations with all coefficients inside the divergence bound; a singular
    weighted information matrix also yields converged=False.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n,p) and y length n")
    n, p = X.shape
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError("weights length must match X rows")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be finite, >= 0, and not all zero")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if family == "binomial-logit" and not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial response must be 0/1")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    beta = np.zeros(p)
    dev = np.inf
    converged = False
    singular = False
    bounded_family = family != "gaussian-identity"
    for _ in range(IRLS_MAX_ITER):
        eta = X @ beta + off
        m, v = _mean_and_var(family, eta)
        wv = w * v
        H = X.T @ (X * wv[:, None])
        g = X.T @ (w * (y - m))
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            singular = True
            break
        if not np.all(np.isfinite(step)):
            singular = True
            break
        beta = beta + step
        if bounded_family and np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            break
        new_dev = _deviance(family, y, _mean_and_var(family, X @ beta + off)[0], w)
        if converged:
            break  # polish pass after deviance convergence sharpens the score
        if abs(new_dev - dev) < IRLS_TOL * (abs(new_dev) + 0.1):
            converged = True
        dev = new_dev
        if family == "gaussian-identity":
            converged = True  # weighted least squares solves in one step
            break

    eta = X @ beta + off
    m, v = _mean_and_var(family, eta)
    dev = _deviance(family, y, m, w)
    cov = np.full((p, p), np.nan)
    if converged and not singular:
        H = X.T @ (X * (w * v)[:, None])
        # information collapse (e.g. complete separation pushing every fitted
        # variance to zero) is non-convergence, not a tiny-deviance success
        if bounded_family and np.min(np.diag(H)) < 1e-8 * max(np.sum(w), 1.0):
            converged = False
        else:
            try:
                cov = np.linalg.inv(H)
                if family == "gaussian-identity":
                    dof = max(np.sum(w > 0) - p, 1)
                    cov = cov * (dev / dof)
            except np.linalg.LinAlgError:
                converged = False
    else:
        converged = False
    if converged and not np.all(np.isfinite(beta)):
        converged = False
    return GlmFit(
        family=family,
        coef=beta,
        cov=cov,
        converged=converged,
        deviance=float(dev),
        n_used=int(np.sum(w > 0)),
        weight_sum=float(np.sum(w)),
    )


def fit_working_model(d: Dataset, response: str, formula, weights=None,
                      family="binomial-logit", offset=None) -> GlmFit:
    """Fit `response ~ formula terms` on a dataset; the fit remembers its formula."""
    X, labels = design_matrix_labeled(d, formula)
    fit = fit_glm(X, d.column(response), weights=weights, family=family, offset=offset)
    fit.formula = tuple(formula)
    fit.labels = tuple(labels)
    fit.response = response
    return fit


def predict_mean(fit: GlmFit, X, offset=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != fit.p:
        raise ValueError(f"design has {X.shape[1]} columns, fit expects {fit.p}")
    eta = X @ fit.coef
    if offset is not None:
        eta = eta + offset
    return _mean_and_var(fit.family, eta)[0]


def sandwich_covariance(fit: GlmFit, X, y, weights=None) -> np.ndarray:
    """Robust (sandwich) covariance treating weights as fixed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    m, v = _mean_and_var(fit.family, X @ fit.coef)
    A = X.T @ (X * (w * v)[:, None])
    S = X * (w * (y - m))[:, None]
    B = S.T @ S
    Ainv = np.linalg.inv(A)
    return Ainv @ B @ Ainv


def coefficient_eif(fit: GlmFit, X, y, weights=None) -> np.ndarray:
    """Per-observation influence values for the coefficients (n x p).

    Row i is n * (X'WVX)^{-1} w_i x_i (y_i - m_i); weighted column sums
    vanish at the solution (score equations).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    m, v = _mean_and_var(fit.family, X @ fit.coef)
    A = X.T @ (X * (w * v)[:, None])
    Ainv = np.linalg.inv(A)  # singular information propagates as LinAlgError
    return n * (X * (w * (y - m))[:, None]) @ Ainv.T


RATIO_ESTIMANDS = ("mRR", "mOR", "mlogRR", "mlogOR")


@dataclass
class MarginalResult:
    mu1: float
    mu0: float
    estimand_values: dict[str, float] = field(default_factory=dict)
    ses: dict[str, float] = field(default_factory=dict)
    ratio_defined: bool = True
    mu_cov: np.ndarray | None = None


def marginalize(fit: GlmFit, d: Dataset, weights, treat_col: str, cov=None) -> MarginalResult:
    """Weighted empirical-distribution marginals of a fitted outcome model.

    mu_a = sum_i w_i Q(a, covariates_i) / sum_i w_i for a in {0,1}, with
    delta-method standard errors through the coefficient covariance
    (weights treated as fixed).
    """
    if not fit.converged:
        raise ValueError("marginalize requires a converged fit")
    if fit.formula is None:
        raise ValueError("fit carries no formula; use fit_working_model")
    w = np.ones(d.n_rows) if weights is None else np.asarray(weights, dtype=float)
    V = fit.cov if cov is None else np.asarray(cov, dtype=float)
    wsum = w.sum()

    mus, grads = [], []
    for a in (1.0, 0.0):
        Xa, _ = design_matrix_labeled(d.with_values(treat_col, np.full(d.n_rows, a)), fit.formula)
        ma, va = _mean_and_var(fit.family, Xa @ fit.coef)
        mus.append(float(np.sum(w * ma) / wsum))
        grads.append((w * va) @ Xa / wsum)
    mu1, mu0 = mus
    G = np.vstack(grads)
    mu_cov = G @ V @ G.T

    vals: dict[str, float] = {"mRD": mu1 - mu0}
    ses: dict[str, float] = {}
    d_rd = np.array([1.0, -1.0])
    ses["mRD"] = float(np.sqrt(max(d_rd @ mu_cov @ d_rd, 0.0)))
    ratio_defined = 0.0 < mu0 < 1.0 and 0.0 < mu1 < 1.0
    if ratio_defined:
        vals["mRR"] = mu1 / mu0
        vals["mlogRR"] = np.log(mu1) - np.log(mu0)
        vals["mOR"] = (mu1 / (1 - mu1)) / (mu0 / (1 - mu0))
        vals["mlogOR"] = np.log(vals["mOR"])
        d_lrr = np.array([1.0 / mu1, -1.0 / mu0])
        d_lor = np.array([1.0 / (mu1 * (1 - mu1)), -1.0 / (mu0 * (1 - mu0))])
        ses["mlogRR"] = float(np.sqrt(max(d_lrr @ mu_cov @ d_lrr, 0.0)))
        ses["mlogOR"] = float(np.sqrt(max(d_lor @ mu_cov @ d_lor, 0.0)))
        ses["mRR"] = vals["mRR"] * ses["mlogRR"]
        ses["mOR"] = vals["mOR"] * ses["mlogOR"]
    else:
        for k in RATIO_ESTIMANDS:
            vals[k] = np.nan
            ses[k] = np.nan
    return MarginalResult(mu1=mu1, mu0=mu0, estimand_values=vals, ses=ses,
                          ratio_defined=ratio_defined, mu_cov=mu_cov)
