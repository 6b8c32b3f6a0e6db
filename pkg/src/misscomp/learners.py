"""Probability learners and the cross-validated convex super learner.

The library is deliberately small (main-effect and pairwise-interaction
logistic regressions plus shallow boosted trees) so nuisance-model fits
stay fast at replication scale; the meta-learner minimizes weighted
binomial log-loss over the simplex by exponentiated gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import glm
from .rng import substream

PROB_CLIP = 1e-4


class LearnerFailure(RuntimeError):
    """A learner could not be fit (e.g. separation); super learner drops it."""


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    depth: int = 1
    shrinkage: float = 0.1
    rounds: int = 200
    value: float = 0.5

    def __post_init__(self):
        if self.kind not in ("glm-main-effects", "glm-pairwise-interactions",
                             "boosted-stumps", "constant"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.kind == "boosted-stumps":
            if self.depth not in (1, 3):
                raise ValueError("boosted-stumps depth must be 1 or 3")
            if self.rounds < 1 or not 0 < self.shrinkage <= 1:
                raise ValueError("rounds >= 1 and shrinkage in (0,1] required")


def default_library() -> list[LearnerSpec]:
    return [
        LearnerSpec("glm-main-effects"),
        LearnerSpec("glm-pairwise-interactions"),
        LearnerSpec("boosted-stumps", depth=1, shrinkage=0.1, rounds=200),
        LearnerSpec("boosted-stumps", depth=3, shrinkage=0.1, rounds=200),
    ]


def rare_outcome_library() -> list[LearnerSpec]:
    return [
        LearnerSpec("glm-main-effects"),
        LearnerSpec("boosted-stumps", depth=1, shrinkage=0.1, rounds=200),
    ]


class _ConstantLearner:
    def __init__(self, p: float):
        self.p = float(np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP))

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.p)


def _pairwise_expand(X):
    n, k = X.shape
    cols = [X]
    for i in range(k):
        for j in range(i + 1, k):
            cols.append((X[:, i] * X[:, j])[:, None])
    return np.hstack(cols)


class _GlmLearner:
    def __init__(self, interactions: bool):
        self.interactions = interactions
        self.fit = None

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        feats = _pairwise_expand(X) if self.interactions else X
        return np.column_stack([np.ones(feats.shape[0]), feats])

    def train(self, X, y, w):
        fit = glm.fit_glm(self._design(X), y, weights=w, family="binomial-logit")
        if not fit.converged:
            raise LearnerFailure("logistic learner did not converge")
        self.fit = fit

    def predict(self, X):
        return np.clip(glm.predict_mean(self.fit, self._design(X)),
                       PROB_CLIP, 1.0 - PROB_CLIP)


class _BoostedTrees:
    """Gradient boosting on log-loss with histogram split search.

    depth 1 fits a single axis-aligned split per round; depth 3 fits
    two-level (four-leaf) trees. The boosting loop runs in numba kernels
    over quantile-binned features.
    """

    _MAX_BINS = 64

    def __init__(self, levels: int, shrinkage: float, rounds: int):
        self.levels = levels
        self.shrinkage = shrinkage
        self.rounds = rounds
        self.f0 = 0.0
        self.feat = None
        self.cutv = None
        self.vals = None

    def _bin(self, X):
        n, nf = X.shape
        codes = np.empty((n, nf), dtype=np.int64)
        cuts = []
        for f in range(nf):
            qs = np.quantile(X[:, f], np.linspace(0, 1, self._MAX_BINS + 1)[1:-1])
            cuts.append(np.unique(qs))
            # code <= b exactly when x <= cuts[b]
            codes[:, f] = np.searchsorted(cuts[f], X[:, f], side="left")
        return codes, cuts

    def train(self, X, y, w):
        from ._boostjit import boost_fit

        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        codes, cuts = self._bin(X)
        ybar = float(np.clip(np.average(y, weights=w), PROB_CLIP, 1 - PROB_CLIP))
        self.f0 = float(logit(ybar))
        feat, cutb, vals = boost_fit(codes, self._MAX_BINS, y,
                                     np.asarray(w, dtype=float), self.rounds,
                                     self.shrinkage, self.levels, self.f0)
        cutv = np.zeros_like(cutb, dtype=float)
        for r in range(self.rounds):
            for slot in range(3):
                if feat[r, slot] >= 0:
                    cutv[r, slot] = cuts[feat[r, slot]][cutb[r, slot]]
        self.feat, self.cutv, self.vals = feat, cutv, vals

    def predict(self, X):
        from ._boostjit import boost_margin

        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        F = boost_margin(X, self.feat, self.cutv, self.vals, self.shrinkage, self.f0)
        return np.clip(expit(F), PROB_CLIP, 1.0 - PROB_CLIP)


def fit_learner(spec: LearnerSpec, X, y, w=None):
    """Fit one library member; returns an object with .predict(X) -> probs."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if spec.kind == "constant":
        return _ConstantLearner(spec.value)
    active = y[w > 0]
    if active.size == 0 or np.all(active == active[0]):
        return _ConstantLearner(active[0] if active.size else 0.5)
    if spec.kind == "glm-main-effects":
        learner = _GlmLearner(interactions=False)
    elif spec.kind == "glm-pairwise-interactions":
        learner = _GlmLearner(interactions=True)
    else:
        levels = 1 if spec.depth == 1 else 2
        learner = _BoostedTrees(levels, spec.shrinkage, spec.rounds)
    learner.train(X, y, w)
    return learner


def weighted_log_loss(y, p, w) -> float:
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))) / np.sum(w))


@dataclass
class SuperLearnerFit:
    specs: list[LearnerSpec]
    learners: list
    weights: np.ndarray
    cv_risk: np.ndarray
    dropped: list[LearnerSpec] = field(default_factory=list)
    oof: np.ndarray | None = None
    ensemble_cv_risk: float = float("nan")

    def predict(self, X) -> np.ndarray:
        preds = np.column_stack([
            np.clip(lr.predict(X), PROB_CLIP, 1.0 - PROB_CLIP) for lr in self.learners
        ])
        return preds @ self.weights


def fold_assignments(seed: int, n: int, folds: int) -> np.ndarray:
    """Deterministic function of (seed, n, folds)."""
    rng = substream(seed, ("sl-folds", n, folds))
    return rng.permutation(n) % folds


def _simplex_log_loss_weights(P, y, w, tol=1e-8, max_iter=5000):
    n, k = P.shape
    if k == 1:
        return np.ones(1), weighted_log_loss(y, P[:, 0], w)
    wsum = w.sum()
    alpha = np.full(k, 1.0 / k)

    def loss_grad(a):
        p = np.clip(P @ a, PROB_CLIP, 1.0 - PROB_CLIP)
        val = -np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))) / wsum
        grad = -(w * (y / p - (1 - y) / (1 - p))) @ P / wsum
        return val, grad

    val, grad = loss_grad(alpha)
    step = 1.0
    for _ in range(max_iter):
        trial = alpha * np.exp(-step * (grad - grad.min()))
        trial /= trial.sum()
        tval, tgrad = loss_grad(trial)
        if tval <= val:
            moved = np.max(np.abs(trial - alpha))
            alpha, val, grad = trial, tval, tgrad
            step *= 1.2
            if moved < tol:
                break
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return alpha, val


def fit_super_learner(library, X, y, w=None, folds=10, seed=0) -> SuperLearnerFit:
    """Cross-validated convex-combination ensemble.

    Any learner that fails on a fold (or the full-data refit) is dropped and
    recorded; simplex weights minimize the weighted log-loss of the combined
    out-of-fold predictions.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and n >= folds")
    fold_id = fold_assignments(seed, n, folds)

    survivors: list[LearnerSpec] = []
    dropped: list[LearnerSpec] = []
    oof_cols: list[np.ndarray] = []
    fitted: list = []
    for spec in library:
        oof = np.empty(n)
        try:
            for f in range(folds):
                hold = fold_id == f
                lr = fit_learner(spec, X[~hold], y[~hold], w[~hold])
                oof[hold] = lr.predict(X[hold])
            full = fit_learner(spec, X, y, w)
        except LearnerFailure:
            dropped.append(spec)
            continue
        survivors.append(spec)
        oof_cols.append(np.clip(oof, PROB_CLIP, 1.0 - PROB_CLIP))
        fitted.append(full)
    if not survivors:
        raise LearnerFailure("every learner in the library failed")

    P = np.column_stack(oof_cols)
    alpha, ens_risk = _simplex_log_loss_weights(P, y, w)
    cv_risk = np.array([weighted_log_loss(y, P[:, j], w) for j in range(len(survivors))])
    return SuperLearnerFit(specs=survivors, learners=fitted, weights=alpha,
                           cv_risk=cv_risk, dropped=dropped, oof=P,
                           ensemble_cv_risk=ens_risk)
