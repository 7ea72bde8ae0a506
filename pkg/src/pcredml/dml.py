"""Cross-fitted double machine learning for the partially linear model.

Outcome and treatment are both regressed on the controls with a random
forest; each row's residuals come from forests trained on the other folds.
The treatment effect is the no-intercept regression of outcome residuals on
treatment residuals, with the usual sandwich variance::

    theta = sum(d_res * y_res) / sum(d_res ** 2)
    var   = mean(eps ** 2 * d_res ** 2) / mean(d_res ** 2) ** 2 / n,
    eps   = y_res - theta * d_res
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateTreatmentError, FitError, MissingValuesError
from .forest import DESK_FOREST, ForestParams, RandomForestRegressor
from .panel import PanelDataset

__all__ = [
    "DmlConfig",
    "ResidualPair",
    "EstimateResult",
    "normal_cdf",
    "make_folds",
    "cross_fit_residuals",
    "plr_estimate",
    "plr_stderr",
    "p_value",
    "dml_plr",
]


def normal_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class DmlConfig:
    n_folds: int = 5
    n_reps: int = 1
    learner_params: ForestParams = DESK_FOREST
    seed: int = 0
    fold_average: bool = False

    def __post_init__(self):
        if self.n_folds < 2:
            raise ConfigurationError("n_folds must be >= 2")
        if self.n_reps < 1:
            raise ConfigurationError("n_reps must be >= 1")


@dataclass(frozen=True)
class ResidualPair:
    y_res: np.ndarray
    d_res: np.ndarray
    fold_of: np.ndarray

    def __post_init__(self):
        if not (self.y_res.shape == self.d_res.shape == self.fold_of.shape):
            raise ValueError("residual vectors and fold labels must have equal length")


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate, standard error and two-sided p-value of one estimator run.

    ``se`` and ``p_value`` are NaN when inference is unavailable.
    """

    coef: float
    se: float
    p_value: float
    estimator_name: str = ""
    metadata: dict = field(default_factory=dict, compare=False)


def make_folds(n: int, K: int, seed) -> np.ndarray:
    """Random partition of ``range(n)`` into ``K`` folds whose sizes differ by at most one."""
    if K < 2:
        raise ConfigurationError("need at least 2 folds")
    if n < K:
        raise ConfigurationError(f"cannot split {n} rows into {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.intp)
    folds[perm] = np.arange(n) % K
    return folds


FitHook = Callable[[int, np.ndarray, np.ndarray], None]


def cross_fit_residuals(
    ds: PanelDataset,
    outcome: str,
    treatment: str,
    controls: Sequence[str],
    cfg: DmlConfig,
    *,
    rep: int = 0,
    on_fit: Optional[FitHook] = None,
) -> ResidualPair:
    """Out-of-fold residuals of outcome and treatment on the controls.

    ``on_fit(fold, train_rows, eval_rows)`` is called once per fold before
    the two forests for that fold are fitted.
    """
    cols = [outcome, treatment, *controls]
    ds.require(cols)
    X = ds.matrix(list(controls))
    y = np.asarray(ds[outcome], dtype=float)
    d = np.asarray(ds[treatment], dtype=float)
    if np.isnan(X).any() or np.isnan(y).any() or np.isnan(d).any():
        raise MissingValuesError("DML inputs contain missing values")
    n = y.shape[0]
    folds = make_folds(n, cfg.n_folds, [cfg.seed, rep])
    y_hat = np.empty(n)
    d_hat = np.empty(n)
    for k in range(cfg.n_folds):
        test = np.flatnonzero(folds == k)
        train = np.flatnonzero(folds != k)
        if train.shape[0] < 2:
            raise FitError(f"fold {k} leaves {train.shape[0]} training rows")
        if on_fit is not None:
            on_fit(k, train, test)
        base = cfg.learner_params
        for target, out, role in ((y, y_hat, 0), (d, d_hat, 1)):
            seed = int(np.random.SeedSequence([base.seed, cfg.seed, rep, k, role]).generate_state(1)[0])
            forest = RandomForestRegressor.from_params(replace(base, seed=seed))
            forest.fit(X[train], target[train])
            out[test] = forest.predict(X[test])
    return ResidualPair(y - y_hat, d - d_hat, folds)


def plr_estimate(r: ResidualPair) -> float:
    """Orthogonalized regression slope of ``y_res`` on ``d_res``."""
    dd = math.fsum(r.d_res * r.d_res)
    if not dd > 0:
        raise DegenerateTreatmentError("treatment residuals are identically zero")
    return math.fsum(r.d_res * r.y_res) / dd


def plr_stderr(r: ResidualPair, theta: float) -> float:
    n = r.d_res.shape[0]
    if n < 2:
        raise FitError("need at least 2 residual pairs")
    d2 = r.d_res * r.d_res
    j = math.fsum(d2) / n
    if not j > 0:
        raise DegenerateTreatmentError("treatment residuals are identically zero")
    eps = r.y_res - theta * r.d_res
    psi2 = math.fsum(eps * eps * d2) / n
    return math.sqrt(psi2 / (j * j) / n)


def p_value(coef: float, se: float) -> float:
    """Two-sided normal p-value of ``coef / se``.

    With ``se == 0`` the test is degenerate: 1.0 for a zero coefficient,
    0.0 otherwise.  NaN inputs give NaN.
    """
    if math.isnan(coef) or math.isnan(se):
        return math.nan
    if se < 0:
        raise ValueError("standard error must be non-negative")
    if se == 0:
        return 1.0 if coef == 0 else 0.0
    z = abs(coef / se)
    # erfc keeps precision in the far tail where 2 * (1 - cdf) would round to 0
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _fold_average(r: ResidualPair, K: int) -> float:
    thetas = []
    for k in range(K):
        m = r.fold_of == k
        thetas.append(plr_estimate(ResidualPair(r.y_res[m], r.d_res[m], r.fold_of[m])))
    return math.fsum(thetas) / K


def dml_plr(
    ds: PanelDataset,
    outcome: str,
    treatment: str,
    controls: Sequence[str],
    cfg: DmlConfig = DmlConfig(),
    *,
    name: str = "DML",
    on_fit: Optional[FitHook] = None,
) -> EstimateResult:
    """Cross-fitted partially linear regression estimate of the treatment effect.

    With ``cfg.n_reps > 1`` the fold split is redrawn per repetition and the
    lower median coefficient is reported together with that repetition's
    standard error.
    """
    if len(ds) == 0:
        raise FitError("empty dataset")
    fits = []
    for rep in range(cfg.n_reps):
        r = cross_fit_residuals(ds, outcome, treatment, controls, cfg, rep=rep, on_fit=on_fit)
        theta = _fold_average(r, cfg.n_folds) if cfg.fold_average else plr_estimate(r)
        fits.append((theta, plr_stderr(r, theta)))
    order = sorted(range(len(fits)), key=lambda i: fits[i][0])
    theta, se = fits[order[(len(fits) - 1) // 2]]
    return EstimateResult(
        coef=theta,
        se=se,
        p_value=p_value(theta, se),
        estimator_name=name,
        metadata={"n_obs": len(ds), "controls": list(controls), "all_coefs": [f[0] for f in fits]},
    )
