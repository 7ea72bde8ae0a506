"""Monte Carlo comparison of the estimators on a confounded dynamic panel.

The default data-generating process reproduces a reference simulation
script exactly, including its whole-array ``np.roll`` shifts.  Those shifts
take "lags" from the neighbouring entity rather than the previous period,
and make the autoregressive term vanish (``y[idx - T]`` is read before any
row of the current year is written).  ``clean=True`` switches to genuine
within-entity lags.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dml import DmlConfig, EstimateResult
from .errors import ConfigurationError
from .estimators import DEFAULT_SCHEMA, ESTIMATOR_NAMES, run_estimator
from .forest import DESK_FOREST
from .panel import PanelDataset

log = logging.getLogger(__name__)

__all__ = [
    "DgpParams",
    "Summary",
    "EstimatorDraws",
    "SimulationReport",
    "replication_seed",
    "simulate_panel",
    "run_monte_carlo",
    "summarize",
    "histogram_rows",
    "export_histogram",
    "export_histogram_svg",
    "write_summary_csv",
]


@dataclass(frozen=True)
class DgpParams:
    """Coefficients of the simulated panel.

    Outcome, for ``t >= 1``::

        y = ar_coef * y_prev + true_theta * d + x_weight * (x1 + x2 + x3)
            + quad_coef * d**2 + alpha_weight_in_y * alpha_i
            + alpha_tv_weight_in_y * alpha_it + N(0, y_noise)

    Time-varying confounder::

        alpha_it = alpha_carry * alpha_prev + proxy_weight * proxy_lag + N(0, alpha_tv_noise)

    Treatment (``variant="code"``)::

        d = d_noise * N(0, 1) + alpha_weight_in_d * alpha_i + alpha_tv_weight_in_d * alpha_it

    ``variant="prose"`` uses ``d = prose_d_noise * N(0, 1) + prose_alpha_weight * alpha_i``
    and drops ``alpha_it`` from the outcome.
    """

    n_entities: int = 89
    n_periods: int = 11
    true_theta: float = 0.1
    ar_coef: float = 0.3
    quad_coef: float = 0.05
    x_weight: float = 1.0
    alpha_weight_in_y: float = 1.0
    alpha_tv_weight_in_y: float = 1.0
    alpha_weight_in_d: float = 0.1
    alpha_tv_weight_in_d: float = 0.1
    alpha_carry: float = 0.5
    proxy_weight: float = 0.3
    d_noise: float = 0.2
    alpha_tv_noise: float = 0.2
    y_noise: float = 0.5
    prose_d_noise: float = 0.5
    prose_alpha_weight: float = 0.3
    variant: str = "code"
    clean: bool = False
    seed: int = 42

    def __post_init__(self):
        if self.n_entities < 1:
            raise ConfigurationError("n_entities must be >= 1")
        if self.n_periods < 2:
            raise ConfigurationError("n_periods must be >= 2")
        for name in ("d_noise", "alpha_tv_noise", "y_noise", "prose_d_noise"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be a finite non-negative number")
        if self.variant not in ("code", "prose"):
            raise ConfigurationError("variant must be 'code' or 'prose'")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


def replication_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed material for replication ``index``; depends on nothing else."""
    return np.random.SeedSequence([master_seed, index])


def _within_shift(v, N, T):
    out = np.zeros_like(v).reshape(N, T)
    out[:, 1:] = v.reshape(N, T)[:, :-1]
    return out.ravel()


def _cross_roll(v, T):
    out = np.roll(v, T)
    out[:T] = 0
    return out


def simulate_panel(p: DgpParams, replication_index: int) -> PanelDataset:
    """One simulated panel of ``n_entities * (n_periods - 1)`` rows (period 0 dropped)."""
    N, T = p.n_entities, p.n_periods
    n_obs = N * T
    rng = np.random.default_rng(replication_seed(p.seed, replication_index))
    years = np.tile(np.arange(T), N)

    alpha_i = np.repeat(rng.normal(0, 1, N), T)
    x_it = rng.normal(0, 1, (n_obs, 3))
    proxy_it = rng.normal(0, 1, n_obs)
    tv_noise = rng.normal(0, p.alpha_tv_noise, n_obs)
    d_noise = rng.normal(0, 1, n_obs)

    if p.clean:
        proxy_lag = _within_shift(proxy_it, N, T)
        alpha_it = p.alpha_carry * alpha_i + p.proxy_weight * proxy_lag + tv_noise
        alpha_it[years == 0] = 0
    else:
        proxy_lag = _cross_roll(proxy_it, T)
        alpha_it = p.alpha_carry * np.roll(alpha_i, 1) + p.proxy_weight * proxy_lag + tv_noise
        alpha_it[:T] = 0

    if p.variant == "code":
        d_it = p.d_noise * d_noise + p.alpha_weight_in_d * alpha_i + p.alpha_tv_weight_in_d * alpha_it
        tv_in_y = p.alpha_tv_weight_in_y
    else:
        d_it = p.prose_d_noise * d_noise + p.prose_alpha_weight * alpha_i
        tv_in_y = 0.0
    d_lag = _within_shift(d_it, N, T) if p.clean else _cross_roll(d_it, T)

    y_it = np.zeros(n_obs)
    prev = 1 if p.clean else T
    for t in range(1, T):
        idx = np.flatnonzero(years == t)
        y_it[idx] = (
            p.ar_coef * y_it[idx - prev]
            + p.true_theta * d_it[idx]
            + p.x_weight * x_it[idx].sum(axis=1)
            + p.quad_coef * d_it[idx] ** 2
            + p.alpha_weight_in_y * alpha_i[idx]
            + tv_in_y * alpha_it[idx]
            + rng.normal(0, p.y_noise, idx.shape[0])
        )
    y_lag = _within_shift(y_it, N, T) if p.clean else _cross_roll(y_it, T)

    cols = {
        "gdp_growth": y_it,
        "trust": d_it,
        "trust_lag": d_lag,
        "gdp_growth_lag": y_lag,
        "capital": x_it[:, 0],
        "labor": x_it[:, 1],
        "technology": x_it[:, 2],
        "gov_effectiveness_lag": proxy_lag,
    }
    for src, dst in (
        ("trust", "trust_mean"),
        ("gdp_growth", "gdp_growth_mean"),
        ("gov_effectiveness_lag", "gov_effectiveness_mean"),
    ):
        cols[dst] = np.repeat(cols[src].reshape(N, T).mean(axis=1), T)

    keep = years >= 1
    width = len(str(N - 1))
    entity = np.repeat([str(i).zfill(width) for i in range(N)], T)
    return PanelDataset.from_arrays(entity[keep], years[keep], {k: v[keep] for k, v in cols.items()})


@dataclass(frozen=True)
class Summary:
    bias: float
    variance: float
    mse: float


def summarize(draws, true_theta: float) -> Summary | None:
    """Bias, population variance and MSE of ``draws`` around ``true_theta``; None if empty."""
    d = np.asarray(draws, dtype=float)
    if d.size == 0:
        return None
    n = d.size
    mean = math.fsum(d) / n
    dev = d - mean
    err = d - true_theta
    return Summary(
        bias=mean - true_theta,
        variance=math.fsum(dev * dev) / n,
        mse=math.fsum(err * err) / n,
    )


@dataclass
class EstimatorDraws:
    name: str
    indices: list[int] = field(default_factory=list)
    draws: list[float] = field(default_factory=list)
    failed: list[int] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.draws, dtype=float)


@dataclass
class SimulationReport:
    n_simulations: int
    true_theta: float
    seed: int
    estimators: dict[str, EstimatorDraws]
    first_index: int = 0

    def summary(self, name: str) -> Summary | None:
        return summarize(self.estimators[name].draws, self.true_theta)

    def summaries(self) -> dict[str, Summary | None]:
        return {k: self.summary(k) for k in self.estimators}

    def concat(self, other: "SimulationReport") -> "SimulationReport":
        """Append the replications of ``other`` (same seed and estimators)."""
        if other.seed != self.seed or list(other.estimators) != list(self.estimators):
            raise ValueError("reports come from different runs")
        merged = {}
        for k, a in self.estimators.items():
            b = other.estimators[k]
            merged[k] = EstimatorDraws(k, a.indices + b.indices, a.draws + b.draws, a.failed + b.failed)
        return SimulationReport(
            self.n_simulations + other.n_simulations, self.true_theta, self.seed, merged, self.first_index
        )


EstimatorSpec = str | tuple[str, Callable[[PanelDataset, int], EstimateResult | float]]


def _resolve(estimators: Iterable[EstimatorSpec], dml_cfg: DmlConfig, gmm_n_boot: int, master_seed: int):
    resolved = []
    for e in estimators:
        if isinstance(e, str):
            if e not in ESTIMATOR_NAMES:
                raise ConfigurationError(f"unknown estimator {e!r}")

            def fn(ds, index, _name=e):
                ss = replication_seed(master_seed, index).spawn(1)[0]
                s = int(ss.generate_state(1)[0])
                return run_estimator(
                    _name,
                    ds,
                    DEFAULT_SCHEMA,
                    dml_cfg=replace(dml_cfg, seed=s),
                    gmm_n_boot=gmm_n_boot,
                    seed=s,
                )

            resolved.append((e, fn))
        else:
            resolved.append(e)
    return resolved


def _one_replication(p, index, resolved):
    ds = simulate_panel(p, index)
    out = {}
    for name, fn in resolved:
        try:
            r = fn(ds, index)
            coef = r.coef if isinstance(r, EstimateResult) else float(r)
        except Exception as exc:  # one estimator failing must not stop the run
            log.warning("replication %d: %s failed: %s", index, name, exc)
            coef = math.nan
        out[name] = coef
    return out


def run_monte_carlo(
    p: DgpParams = DgpParams(),
    n_sims: int = 100,
    estimators: Sequence[EstimatorSpec] = ESTIMATOR_NAMES,
    dml_cfg: DmlConfig | None = None,
    *,
    gmm_n_boot: int = 10,
    first_index: int = 0,
    n_jobs: int = 1,
    progress: Callable[[int], None] | None = None,
) -> SimulationReport:
    """Simulate ``n_sims`` panels and collect every estimator's coefficient.

    Replication ``i`` (counting from ``first_index``) uses seeds derived only
    from ``(p.seed, i)``, so a run can be split into index ranges and
    recombined with :meth:`SimulationReport.concat`.  Failed or non-finite
    estimates are counted and left out of the draws.
    """
    if n_sims < 1:
        raise ConfigurationError("n_sims must be >= 1")
    if dml_cfg is None:
        dml_cfg = DmlConfig(learner_params=DESK_FOREST)
    resolved = _resolve(estimators, dml_cfg, gmm_n_boot, p.seed)
    indices = range(first_index, first_index + n_sims)

    if n_jobs == 1:
        results = []
        for i in indices:
            results.append(_one_replication(p, i, resolved))
            if progress is not None:
                progress(i)
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_one_replication)(p, i, resolved) for i in indices)

    draws = {name: EstimatorDraws(name) for name, _ in resolved}
    for i, res in zip(indices, results):
        for name, coef in res.items():
            if math.isfinite(coef):
                draws[name].indices.append(i)
                draws[name].draws.append(coef)
            else:
                draws[name].failed.append(i)
    return SimulationReport(n_sims, p.true_theta, p.seed, draws, first_index)


def _fmt(v: float | None) -> str:
    if v is None or not math.isfinite(v):
        return ""
    return f"{round(v, 4):.4f}"


def write_summary_csv(report: SimulationReport, path, header: Mapping[str, object] | None = None) -> None:
    """Estimator, Bias, Variance, MSE rounded to 4 decimals; blank cells for missing summaries."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Estimator", "Bias", "Variance", "MSE"])
        for name in report.estimators:
            s = report.summary(name)
            if s is None:
                w.writerow([name, "", "", ""])
            else:
                w.writerow([name, _fmt(s.bias), _fmt(s.variance), _fmt(s.mse)])


def histogram_rows(draws, bins: int = 20) -> list[tuple[float, float, int]]:
    """Equal-width bins spanning ``[min(draws), max(draws)]``.

    All-equal draws collapse to a single zero-width bin.
    """
    d = np.asarray(draws, dtype=float)
    if d.size == 0:
        return []
    lo, hi = float(d.min()), float(d.max())
    if lo == hi:
        return [(lo, hi, int(d.size))]
    counts, edges = np.histogram(d, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def export_histogram(
    report: SimulationReport, path, bins: int = 20, header: Mapping[str, object] | None = None
) -> None:
    """Write per-estimator histogram counts as CSV.

    The true coefficient is recorded in a ``# true_theta=...`` header line.
    """
    if not any(e.draws for e in report.estimators.values()):
        raise ValueError("no estimator has any successful draws")
    with open(path, "w", newline="") as fh:
        fh.write(f"# true_theta={report.true_theta!r}\n")
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "bin_left", "bin_right", "count"])
        for name, e in report.estimators.items():
            for left, right, count in histogram_rows(e.draws, bins):
                w.writerow([name, repr(left), repr(right), count])


_COLOURS = ("#d62728", "#2ca02c", "#ff7f0e", "#1f77b4", "#9467bd")


def export_histogram_svg(report: SimulationReport, path, bins: int = 20) -> None:
    """Small-multiple bar charts, one row per estimator, dashed line at the true value."""
    rows = [(n, histogram_rows(e.draws, bins)) for n, e in report.estimators.items() if e.draws]
    if not rows:
        raise ValueError("no estimator has any successful draws")
    W, H, pad, label_w = 640, 110, 10, 110
    plot_w = W - label_w - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H * len(rows)}" '
        'font-family="sans-serif" font-size="11">'
    ]
    theta = report.true_theta
    for r, (name, hist) in enumerate(rows):
        top = r * H + pad
        base = top + H - 2 * pad - 14
        lo, hi = hist[0][0], hist[-1][1]
        span = hi - lo or 1.0
        peak = max(c for _, _, c in hist) or 1
        colour = _COLOURS[r % len(_COLOURS)]
        parts.append(f'<text x="{pad}" y="{top + 14}">{name}</text>')
        for left, right, count in hist:
            x0 = label_w + pad + (left - lo) / span * plot_w
            bw = max((right - left) / span * plot_w, 2.0)
            h = count / peak * (base - top)
            parts.append(
                f'<rect x="{x0:.2f}" y="{base - h:.2f}" width="{bw:.2f}" height="{h:.2f}" '
                f'fill="{colour}" fill-opacity="0.6"/>'
            )
        parts.append(f'<text x="{label_w + pad}" y="{base + 12}">{lo:.4g}</text>')
        parts.append(f'<text x="{W - pad}" y="{base + 12}" text-anchor="end">{hi:.4g}</text>')
        if lo <= theta <= hi:
            xt = label_w + pad + (theta - lo) / span * plot_w
            parts.append(
                f'<line x1="{xt:.2f}" y1="{top}" x2="{xt:.2f}" y2="{base}" stroke="black" stroke-dasharray="4 3"/>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
