"""The five treatment-effect estimators compared in the study.

Each is available as a plain function (``run_ols(ds, schema)`` and so on)
returning an :class:`~pcredml.dml.EstimateResult`, and as a scikit-learn
style estimator whose ``fit`` takes a :class:`~pcredml.panel.PanelDataset`.

All runners report normal-approximation p-values.  OLS and fixed effects
additionally record the Student-t p-value in ``metadata["p_value_t"]``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from .dml import DmlConfig, EstimateResult, dml_plr, normal_cdf, p_value
from .errors import CollinearityError, DataError, MissingValuesError
from .forest import DESK_FOREST, ForestParams
from .optimize import SimplexOptions, nelder_mead
from .panel import ColumnSchema, PanelDataset, lag_values

__all__ = [
    "DEFAULT_SCHEMA",
    "ESTIMATOR_NAMES",
    "run_ols",
    "run_fixed_effects",
    "gmm_objective",
    "run_system_gmm",
    "run_cre_dml",
    "run_p_cre_dml",
    "run_estimator",
    "normal_cdf",
    "nelder_mead",
    "OLS",
    "FixedEffects",
    "SystemGMM",
    "CREDML",
    "PCREDML",
]

DEFAULT_SCHEMA = ColumnSchema()

ESTIMATOR_NAMES = ("OLS", "Fixed Effects", "System GMM", "CRE-DML", "P-CRE-DML")


def ols_regressors(schema: ColumnSchema) -> list[str]:
    return [schema.treatment, *schema.controls, *schema.proxy_lags]


def cre_controls(schema: ColumnSchema) -> list[str]:
    return [*schema.controls, schema.outcome_lag, schema.treatment_mean, schema.outcome_mean]


def p_cre_controls(schema: ColumnSchema) -> list[str]:
    return [
        *schema.controls,
        schema.outcome_lag,
        *schema.proxy_lags,
        schema.treatment_mean,
        schema.outcome_mean,
        *schema.proxy_means,
    ]


def _complete(ds: PanelDataset, cols: Sequence[str]) -> None:
    ds.require(cols)
    bad = [c for c in cols if np.isnan(ds[c]).any()]
    if bad:
        raise MissingValuesError(f"missing values in column(s): {', '.join(bad)}")


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    n, k = X.shape
    if n < k:
        raise CollinearityError(f"{n} rows cannot identify {k} coefficients")
    if np.linalg.matrix_rank(X) == k:
        return
    offending = []
    kept = np.empty((n, 0))
    rank = 0
    for j in range(k):
        trial = np.column_stack([kept, X[:, j]])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            kept, rank = trial, r
        else:
            offending.append(names[j])
    raise CollinearityError(
        "design matrix is rank deficient; column(s) linearly dependent on earlier ones: "
        + ", ".join(offending)
    )


def _least_squares(y, X, names, dof):
    """Coefficients and classical standard errors via QR."""
    _check_rank(X, names)
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    rinv = np.linalg.inv(r)
    xtx_inv = rinv @ rinv.T
    if dof > 0:
        s2 = float(resid @ resid) / dof
        se = np.sqrt(np.maximum(np.diag(xtx_inv) * s2, 0.0))
    else:
        se = np.full(X.shape[1], np.nan)
    return beta, se


def _linear_result(name, coef, se, dof, n_obs):
    p_t = float(2 * stats.t.sf(abs(coef / se), dof)) if se > 0 and dof > 0 else p_value(coef, se)
    return EstimateResult(
        coef=float(coef),
        se=float(se),
        p_value=p_value(coef, se),
        estimator_name=name,
        metadata={"n_obs": n_obs, "dof": dof, "p_value_t": p_t},
    )


def run_ols(ds: PanelDataset, schema: ColumnSchema = DEFAULT_SCHEMA) -> EstimateResult:
    """Pooled OLS of the outcome on treatment, controls and lagged proxies, with intercept."""
    names = ols_regressors(schema)
    _complete(ds, [schema.outcome, *names])
    n = len(ds)
    if n == 0:
        raise DataError("empty estimation sample")
    X = np.column_stack([np.ones(n), ds.matrix(names)])
    y = np.asarray(ds[schema.outcome], dtype=float)
    beta, se = _least_squares(y, X, ["const", *names], n - X.shape[1])
    return _linear_result("OLS", beta[1], se[1], n - X.shape[1], n)


def demean_within(ds: PanelDataset, names: Sequence[str]) -> np.ndarray:
    """Subtract each entity's mean from the named columns."""
    M = ds.matrix(list(names)).astype(float)
    codes = ds.entity_codes()
    counts = np.bincount(codes).astype(float)
    out = np.empty_like(M)
    for j in range(M.shape[1]):
        means = np.bincount(codes, weights=M[:, j]) / counts
        out[:, j] = M[:, j] - means[codes]
    return out


def run_fixed_effects(ds: PanelDataset, schema: ColumnSchema = DEFAULT_SCHEMA) -> EstimateResult:
    """Entity fixed-effects (within) regression.

    Residual degrees of freedom are ``n - n_entities - k``.
    """
    names = ols_regressors(schema)
    _complete(ds, [schema.outcome, *names])
    n = len(ds)
    if n == 0:
        raise DataError("empty estimation sample")
    n_ent = ds.n_entities
    if n_ent == n:
        raise DataError("every entity has a single row; no within variation")
    W = demean_within(ds, [schema.outcome, *names])
    y, X = W[:, 0], W[:, 1:]
    dof = n - n_ent - X.shape[1]
    beta, se = _least_squares(y, X, names, dof)
    return _linear_result("Fixed Effects", beta[0], se[0], dof, n)


def gmm_objective(params, y, X, Z) -> float:
    """Mean of squared instrument moments ``Z' (y - X params)``."""
    e = y - X @ np.asarray(params, dtype=float)
    m = Z.T @ e
    return float(np.mean(m * m))


def gmm_design(ds: PanelDataset, schema: ColumnSchema = DEFAULT_SCHEMA):
    """Outcome, regressors and instruments of the dynamic-panel moment system.

    Regressors: lagged outcome, treatment, controls, lagged proxies (the
    treatment coefficient sits at index 1).  Instruments: outcome lagged
    twice, treatment lagged twice and three times.  Rows lacking any of these
    or the outcome's third lag are dropped.
    """
    x_names = [schema.outcome_lag, schema.treatment, *schema.controls, *schema.proxy_lags]
    ds.require([schema.outcome, *x_names])
    y = np.asarray(ds[schema.outcome], dtype=float)
    X = ds.matrix(x_names)
    Z = np.column_stack(
        [
            lag_values(ds, schema.outcome, 2),
            lag_values(ds, schema.treatment, 2),
            lag_values(ds, schema.treatment, 3),
        ]
    )
    y_lag3 = lag_values(ds, schema.outcome, 3)
    keep = ~(np.isnan(y) | np.isnan(X).any(axis=1) | np.isnan(Z).any(axis=1) | np.isnan(y_lag3))
    return y[keep], X[keep], Z[keep]


def run_system_gmm(
    ds: PanelDataset,
    schema: ColumnSchema = DEFAULT_SCHEMA,
    *,
    n_boot: int = 10,
    seed=0,
    options: SimplexOptions = SimplexOptions(),
) -> EstimateResult:
    """Unweighted moment-matching estimate of the treatment coefficient.

    The objective is minimised by Nelder-Mead from the zero vector.  The
    standard error is the (population) standard deviation of the treatment
    coefficient over ``n_boot`` refits on rows resampled with replacement.
    Non-convergence is reported in ``metadata`` but the estimate is kept.
    """
    y, X, Z = gmm_design(ds, schema)
    n = y.shape[0]
    if n == 0:
        raise DataError("no rows left after building GMM lags")
    x0 = np.zeros(X.shape[1])
    fit = nelder_mead(lambda b: gmm_objective(b, y, X, Z), x0, options)
    beta = float(fit.x[1])

    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        rows = rng.integers(0, n, size=n)
        yb, Xb, Zb = y[rows], X[rows], Z[rows]
        try:
            bfit = nelder_mead(lambda b: gmm_objective(b, yb, Xb, Zb), x0, options)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            continue
        if np.isfinite(bfit.x[1]):
            boot.append(float(bfit.x[1]))
    se = float(np.std(boot)) if boot else math.nan
    return EstimateResult(
        coef=beta,
        se=se,
        p_value=p_value(beta, se),
        estimator_name="System GMM",
        metadata={
            "n_obs": n,
            "converged": fit.converged,
            "n_iterations": fit.n_iterations,
            "objective": fit.fun,
            "params": fit.x.tolist(),
            "n_boot_ok": len(boot),
        },
    )


def run_cre_dml(
    ds: PanelDataset, schema: ColumnSchema = DEFAULT_SCHEMA, cfg: DmlConfig = DmlConfig()
) -> EstimateResult:
    """DML with controls, lagged outcome and entity means of treatment and outcome."""
    controls = cre_controls(schema)
    _complete(ds, [schema.outcome, schema.treatment, *controls])
    return dml_plr(ds, schema.outcome, schema.treatment, controls, cfg, name="CRE-DML")


def run_p_cre_dml(
    ds: PanelDataset, schema: ColumnSchema = DEFAULT_SCHEMA, cfg: DmlConfig = DmlConfig()
) -> EstimateResult:
    """CRE-DML plus the lagged proxies and their entity means as extra controls."""
    controls = p_cre_controls(schema)
    _complete(ds, [schema.outcome, schema.treatment, *controls])
    return dml_plr(ds, schema.outcome, schema.treatment, controls, cfg, name="P-CRE-DML")


def run_estimator(
    name: str,
    ds: PanelDataset,
    schema: ColumnSchema = DEFAULT_SCHEMA,
    *,
    dml_cfg: DmlConfig = DmlConfig(),
    gmm_n_boot: int = 10,
    seed=0,
) -> EstimateResult:
    """Dispatch on an estimator's display name (see ``ESTIMATOR_NAMES``)."""
    if name == "OLS":
        return run_ols(ds, schema)
    if name == "Fixed Effects":
        return run_fixed_effects(ds, schema)
    if name == "System GMM":
        return run_system_gmm(ds, schema, n_boot=gmm_n_boot, seed=seed)
    if name == "CRE-DML":
        return run_cre_dml(ds, schema, dml_cfg)
    if name == "P-CRE-DML":
        return run_p_cre_dml(ds, schema, dml_cfg)
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATOR_NAMES)}")


class _PanelEstimator(BaseEstimator):
    """Shared ``fit`` plumbing: run once, expose ``coef_``, ``se_``, ``p_value_``."""

    def _run(self, ds: PanelDataset) -> EstimateResult:
        raise NotImplementedError

    def fit(self, X: PanelDataset, y=None):
        if not isinstance(X, PanelDataset):
            raise TypeError(f"{type(self).__name__}.fit expects a PanelDataset")
        result = self._run(X)
        self.result_ = result
        self.coef_ = result.coef
        self.se_ = result.se
        self.p_value_ = result.p_value
        return self

    def summary(self) -> dict:
        r = self.result_
        return {"Estimator": r.estimator_name, "Coefficient": r.coef, "Standard Error": r.se, "p-value": r.p_value}


class OLS(_PanelEstimator):
    def __init__(self, schema: ColumnSchema = DEFAULT_SCHEMA):
        self.schema = schema

    def _run(self, ds):
        return run_ols(ds, self.schema)


class FixedEffects(_PanelEstimator):
    def __init__(self, schema: ColumnSchema = DEFAULT_SCHEMA):
        self.schema = schema

    def _run(self, ds):
        return run_fixed_effects(ds, self.schema)


class SystemGMM(_PanelEstimator):
    def __init__(self, schema: ColumnSchema = DEFAULT_SCHEMA, n_boot=10, seed=0, max_iterations=None):
        self.schema = schema
        self.n_boot = n_boot
        self.seed = seed
        self.max_iterations = max_iterations

    def _run(self, ds):
        return run_system_gmm(
            ds,
            self.schema,
            n_boot=self.n_boot,
            seed=self.seed,
            options=SimplexOptions(max_iterations=self.max_iterations),
        )


class _DmlEstimator(_PanelEstimator):
    _runner: Callable

    def __init__(
        self,
        schema: ColumnSchema = DEFAULT_SCHEMA,
        n_folds=5,
        n_reps=1,
        forest_params: ForestParams = DESK_FOREST,
        seed=0,
        fold_average=False,
    ):
        self.schema = schema
        self.n_folds = n_folds
        self.n_reps = n_reps
        self.forest_params = forest_params
        self.seed = seed
        self.fold_average = fold_average

    def _run(self, ds):
        cfg = DmlConfig(
            n_folds=self.n_folds,
            n_reps=self.n_reps,
            learner_params=self.forest_params,
            seed=self.seed,
            fold_average=self.fold_average,
        )
        return type(self)._runner(ds, self.schema, cfg)


class CREDML(_DmlEstimator):
    _runner = staticmethod(run_cre_dml)


class PCREDML(_DmlEstimator):
    _runner = staticmethod(run_p_cre_dml)
