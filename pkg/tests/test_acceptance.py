"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``[PASS]`` or ``[FAIL]`` line; the lines are repeated in the
``acceptance criteria`` section of the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest

from pcredml.cli import main
from pcredml.dml import DmlConfig, ResidualPair, cross_fit_residuals, dml_plr, p_value, plr_estimate
from pcredml.estimators import run_fixed_effects, run_ols
from pcredml.forest import DESK_FOREST, ForestParams, RandomForestRegressor, best_split
from pcredml.montecarlo import DgpParams, run_monte_carlo
from pcredml.optimize import nelder_mead
from pcredml.panel import ColumnSchema, PanelDataset

N_SIMS = 100
SEED = 42
RUNTIME_BUDGET = 15 * 60


@pytest.fixture(scope="module")
def desk_run():
    """Desk-scale Monte Carlo: code-variant DGP, 100 replications, seed 42, 50-tree forests."""
    t0 = time.perf_counter()
    report = run_monte_carlo(DgpParams(seed=SEED), N_SIMS, dml_cfg=DmlConfig(learner_params=DESK_FOREST))
    return report, time.perf_counter() - t0


def _fmt(s):
    return f"bias {s.bias:.4f}, var {s.variance:.4f}, mse {s.mse:.4f}"


@pytest.mark.slow
def test_criterion_1_estimator_ranking(desk_run, record_criterion):
    report, elapsed = desk_run
    s = report.summaries()
    p, c, g, fe = s["P-CRE-DML"], s["CRE-DML"], s["System GMM"], s["Fixed Effects"]
    checks = {
        "|bias P-CRE-DML| < |bias CRE-DML|": abs(p.bias) < abs(c.bias),
        "MSE P-CRE-DML < MSE CRE-DML": p.mse < c.mse,
        "MSE System GMM > 10 x MSE P-CRE-DML": g.mse > 10 * p.mse,
        "|bias Fixed Effects| < 0.15": abs(fe.bias) < 0.15,
        "runtime <= 15 min": elapsed <= RUNTIME_BUDGET,
    }
    for name, ok in checks.items():
        record_criterion(1, name, ok)
    detail = "; ".join(f"{k}: {_fmt(v)}" for k, v in s.items() if v is not None)
    failures = {k: v.n_failed for k, v in report.estimators.items() if v.n_failed}
    ok = record_criterion(1, "estimator ranking at desk scale", all(checks.values()), f"{detail}; {elapsed:.0f}s; failures {failures}")
    assert ok, checks


@pytest.mark.slow
def test_criterion_2_ols_bias(desk_run, record_criterion):
    report, _ = desk_run
    b = report.summary("OLS").bias
    # reference bias 3.5723; accepted within a factor of 4 either way
    ok = abs(b) > 1.0 and 3.5723 / 4 <= abs(b) <= 3.5723 * 4
    assert record_criterion(2, "OLS bias exceeds 1.0", ok, f"bias {b:.4f}")


def _random_panel(rng, n, k):
    X = rng.normal(size=(n, k)) * rng.uniform(0.1, 10, size=k)
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    n_ent = max(2, n // 5)
    ent = [f"e{i % n_ent:02d}" for i in range(n)]
    t = [i // n_ent for i in range(n)]
    cols = {"y": y, "d": X[:, 0], **{f"c{j}": X[:, j] for j in range(1, k)}}
    schema = ColumnSchema(outcome="y", treatment="d", controls=tuple(f"c{j}" for j in range(1, k)), proxies=())
    return PanelDataset.from_arrays(ent, t, cols), schema


def _exhaustive_split(X, y):
    best = None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            m = X[:, f] <= (lo + hi) / 2
            loss = ((y[m] - y[m].mean()) ** 2).sum() + ((y[~m] - y[~m].mean()) ** 2).sum()
            if best is None or loss < best:
                best = loss
    return best


def test_criterion_3_oracles(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"ols": 0.0, "fe": 0.0, "plr": 0.0, "split": 0.0}
    for _ in range(50):
        ds, schema = _random_panel(rng, int(rng.integers(15, 60)), int(rng.integers(1, 4)))
        names = ["d", *schema.controls]
        Xc = np.column_stack([np.ones(len(ds)), ds.matrix(names)])
        beta = np.linalg.solve(Xc.T @ Xc, Xc.T @ ds["y"])
        worst["ols"] = max(worst["ols"], abs(run_ols(ds, schema).coef - beta[1]) / abs(beta[1]))

        W = ds.matrix(["y", *names]).copy()
        for e in np.unique(ds.entity):
            m = ds.entity == e
            W[m] -= W[m].mean(axis=0)
        bw = np.linalg.solve(W[:, 1:].T @ W[:, 1:], W[:, 1:].T @ W[:, 0])
        worst["fe"] = max(worst["fe"], abs(run_fixed_effects(ds, schema).coef - bw[0]) / abs(bw[0]))

        yr, dr = rng.normal(size=40) * 100, rng.normal(size=40)
        theta = plr_estimate(ResidualPair(yr, dr, np.zeros(40, int)))
        worst["plr"] = max(worst["plr"], abs(math.fsum(dr * (yr - theta * dr))))

    for _ in range(100):
        n, p = int(rng.integers(2, 51)), int(rng.integers(1, 4))
        X = rng.integers(0, 8, size=(n, p)).astype(float)
        y = rng.normal(size=n) * 10
        expected, found = _exhaustive_split(X, y), best_split(X, y)
        if expected is None:
            assert found is None
            continue
        worst["split"] = max(worst["split"], abs(found[0] - expected) / max(1.0, expected))
    elapsed = time.perf_counter() - t0
    ok = worst["ols"] <= 1e-8 and worst["fe"] <= 1e-8 and worst["plr"] <= 1e-9 and worst["split"] <= 1e-9 and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    assert record_criterion(3, "oracle equivalence suite", ok, detail)


def test_criterion_4_recovery(record_criterion):
    coefs = []
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        n = 890
        x1, x2, x3 = rng.normal(size=(3, n))
        d = 0.5 * x1 - 0.3 * x2 + rng.normal(size=n)
        y = 0.5 * d + x1 + 0.5 * x3 + 0.5 * rng.normal(size=n)
        ds = PanelDataset.from_arrays([f"e{i // 10:03d}" for i in range(n)], [i % 10 for i in range(n)], dict(y=y, d=d, x1=x1, x2=x2, x3=x3))
        coefs.append(dml_plr(ds, "y", "d", ["x1", "x2", "x3"], DmlConfig(seed=seed)).coef)
    dml_ok = all(abs(c - 0.5) <= 0.1 for c in coefs)
    record_criterion(4, "DML recovers 0.5 on 10 seeds", dml_ok, f"range [{min(coefs):.4f}, {max(coefs):.4f}]")

    quad = nelder_mead(lambda x: float(np.sum((x - 2.0) ** 2)), np.zeros(2))
    rosen = nelder_mead(lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2, np.array([-1.2, 1.0]))
    nm_ok = bool(np.all(np.abs(quad.x - 2) < 1e-4) and np.all(np.abs(rosen.x - 1) < 1e-3))
    record_criterion(4, "Nelder-Mead quadratic and Rosenbrock targets", nm_ok, f"{quad.x.round(6)}, {rosen.x.round(6)}")
    assert dml_ok and nm_ok


def test_criterion_5_invariants(tmp_path, record_criterion):
    results = {}
    rep = run_monte_carlo(DgpParams(n_entities=20), 6, ["OLS", "Fixed Effects", "CRE-DML"], DmlConfig(learner_params=ForestParams(n_trees=5)))
    results["MSE identity"] = all(
        math.isclose(s.mse, s.bias**2 + s.variance, rel_tol=1e-12, abs_tol=1e-15) for s in rep.summaries().values()
    )

    rng = np.random.default_rng(9)
    n = 80
    ds = PanelDataset.from_arrays([f"e{i // 4:02d}" for i in range(n)], [i % 4 for i in range(n)], dict(y=rng.normal(size=n), d=rng.normal(size=n), x=rng.normal(size=n)))
    overlap = []
    cross_fit_residuals(ds, "y", "d", ["x"], DmlConfig(learner_params=ForestParams(n_trees=3)), on_fit=lambda k, tr, ev: overlap.append(np.intersect1d(tr, ev).size))
    results["cross-fit isolation"] = len(overlap) == 5 and sum(overlap) == 0

    args = ["simulate", "--n-sims", "2", "--estimators", "OLS,CRE-DML", "--trees", "5", "--output-dir"]
    assert main([*args, str(tmp_path / "a")]) == 0 and main([*args, str(tmp_path / "b")]) == 0
    results["byte-identical rerun"] = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("summary.csv", "histogram.csv")
    )

    X, y = rng.normal(size=(100, 3)), rng.standard_t(2, size=100)
    pred = RandomForestRegressor(n_trees=10, max_depth=8).fit(X, y).predict(rng.normal(size=(500, 3)) * 4)
    results["forest predictions bounded"] = bool(pred.min() >= y.min() and pred.max() <= y.max())

    pairs = zip(rng.normal(size=200) * 3, rng.uniform(0.01, 2, 200))
    results["p-value range and symmetry"] = all(0 <= p_value(c, s) <= 1 and p_value(c, s) == p_value(-c, s) for c, s in pairs)

    for name, ok in results.items():
        record_criterion(5, name, ok)
    assert all(results.values()), results


def test_criterion_6_estimate_pipeline(tmp_path, record_criterion):
    assert main(["simulate", "--panel-only", "--output-dir", str(tmp_path)]) == 0
    out = tmp_path / "est"
    rc = main(["estimate", "--input", str(tmp_path / "panel.csv"), "--output-dir", str(out), "--trees", "20", "--max-depth", "6"])
    lines = [l for l in (out / "results.csv").read_text().splitlines() if not l.startswith("#")]
    rows = [l.split(",") for l in lines[1:]]
    coefs = [float(r[1]) for r in rows if r[1]]
    pvals = [float(r[3]) for r in rows if r[3]]
    ok = rc == 0 and len(rows) == 5 and len(coefs) == 5 and all(map(math.isfinite, coefs)) and len(pvals) == 5 and all(0 <= p <= 1 for p in pvals)
    assert record_criterion(6, "estimate on exported simulated panel gives 5 finite rows", ok, ", ".join(f"{r[0]}={r[1]}" for r in rows))
