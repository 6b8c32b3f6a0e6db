"""Generalized-raking weight calibration.

Adjusts inverse-probability base weights on the complete cases so that
weighted totals of auxiliary variables match their full-cohort totals,
under the exponential-tilting distance d(a,b) = a ln(a/b) - a + b (which
keeps calibrated weights positive). The dual is smooth and convex and is
solved by damped Newton.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CalibrationProblem:
    base_weights: np.ndarray  # inverse observation probabilities, complete cases
    aux_full: np.ndarray      # n x k auxiliaries over the full cohort
    selected: np.ndarray      # complete-data indicator, length n
    tol: float = 1e-8
    max_iter: int = 100


@dataclass
class CalibratedWeights:
    multipliers: np.ndarray   # a_i for complete cases; calibrated weight = a_i * base
    lam: np.ndarray
    converged: bool
    residual_norm: float
    n_iter: int = 0
    dual_path: tuple[float, ...] = ()


def _dual(d, H, T, lam):
    # g(lam) = sum_R d exp(h'lam) - lam'T; grad g = calibration residual
    expo = H @ lam
    if np.max(expo) > 500:
        return np.inf
    return float(np.sum(d * np.exp(expo)) - lam @ T)


def rake(problem: CalibrationProblem) -> CalibratedWeights:
    """Solve for calibrated weight multipliers a_i = exp(h_i'lambda).

    lambda solves sum_{R=1} d_i exp(h_i'lambda) h_i = sum_all h_i. Columns
    are rescaled internally for conditioning (exactly equivalence-preserving);
    the convergence check is the constraint residual in original units.
    """
    d = np.asarray(problem.base_weights, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ValueError("base weights must be positive and finite")
    sel = np.asarray(problem.selected).astype(bool)
    aux = np.asarray(problem.aux_full, dtype=float)
    if aux.ndim != 2 or aux.shape[0] != len(sel):
        raise ValueError("aux_full must be (n, k) aligned with selected")
    if sel.sum() != len(d):
        raise ValueError("base_weights length must equal number of selected rows")
    k = aux.shape[1]

    scale = np.max(np.abs(aux), axis=0)
    scale[scale == 0] = 1.0
    Hs = aux[sel] / scale
    Ts = aux.sum(axis=0) / scale

    lam = np.zeros(k)
    a = np.ones(len(d))
    resid = d @ Hs - Ts
    resid_orig = resid * scale
    dual_path = [_dual(d, Hs, Ts, lam)]
    converged = bool(np.max(np.abs(resid_orig)) < problem.tol)
    n_iter = 0
    while not converged and n_iter < problem.max_iter:
        n_iter += 1
        da = d * a
        J = Hs.T @ (Hs * da[:, None])
        try:
            step = np.linalg.solve(J, -resid)
        except np.linalg.LinAlgError:
            break
        # halving line search: the dual decreases away from the optimum; once
        # it is flat to machine precision, accept on residual decrease instead
        g0 = dual_path[-1]
        res0 = np.max(np.abs(resid_orig))
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = lam + t * step
            g1 = _dual(d, Hs, Ts, trial)
            if np.isfinite(g1):
                a_try = np.exp(Hs @ trial)
                res_try = np.max(np.abs(((d * a_try) @ Hs - Ts) * scale))
                if g1 < g0 or (g1 <= g0 + 1e-12 * (abs(g0) + 1.0) and res_try < res0):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        lam = trial
        a = a_try
        dual_path.append(g1)
        resid = (d * a) @ Hs - Ts
        resid_orig = resid * scale
        if np.max(np.abs(resid_orig)) < problem.tol:
            converged = True

    return CalibratedWeights(
        multipliers=a,
        lam=lam / scale,
        converged=converged,
        residual_norm=float(np.max(np.abs(resid_orig))),
        n_iter=n_iter,
        dual_path=tuple(dual_path),
    )


@dataclass
class RakingVariance:
    cov: np.ndarray
    phase1: np.ndarray
    phase2: np.ndarray
    aux_rank_deficient: bool = False


def raking_variance(fit, calibrated: CalibratedWeights, aux, base_weights,
                    X_sel, y_sel, selected) -> RakingVariance:
    """Linearized covariance of a GLM fit under calibrated two-phase weights.

    The per-unit contribution is the auxiliary projection of the score for
    every cohort member plus the base-weighted score residual for complete
    cases; the bread is the calibrated-weight information. A rank-deficient
    auxiliary regression falls back to the un-residualized inverse-probability
    form and flags it.
    """
    from .glm import _mean_and_var  # shared family mean/variance helpers

    aux = np.asarray(aux, dtype=float)
    sel = np.asarray(selected).astype(bool)
    d = np.asarray(base_weights, dtype=float)
    X = np.asarray(X_sel, dtype=float)
    y = np.asarray(y_sel, dtype=float)
    w_cal = calibrated.multipliers * d

    m, v = _mean_and_var(fit.family, X @ fit.coef)
    U = X * (y - m)[:, None]                      # unweighted scores, complete cases
    H = aux[sel]
    k, p = H.shape[1], X.shape[1]

    gamma = np.zeros((k, p))
    rank_deficient = False
    G = H.T @ (H * d[:, None])
    try:
        gamma = np.linalg.solve(G, H.T @ (U * d[:, None]))
        if not np.all(np.isfinite(gamma)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        gamma = np.zeros((k, p))
        rank_deficient = True

    resid = U - H @ gamma
    proj_all = aux @ gamma                         # phase-1 contribution, all rows
    contrib = proj_all.copy()
    contrib[sel] += resid * d[:, None]

    A = X.T @ (X * (w_cal * v)[:, None])
    Ainv = np.linalg.inv(A)
    B1 = proj_all.T @ proj_all
    ht = resid * d[:, None]
    B2 = ht.T @ ht
    B = contrib.T @ contrib
    cov = Ainv @ B @ Ainv.T
    cov = 0.5 * (cov + cov.T)
    return RakingVariance(
        cov=cov,
        phase1=Ainv @ B1 @ Ainv.T,
        phase2=Ainv @ B2 @ Ainv.T,
        aux_rank_deficient=rank_deficient,
    )
