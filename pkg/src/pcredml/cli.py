"""Command-line entry point: ``pcredml estimate | simulate | report``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dml import DmlConfig, EstimateResult
from .errors import PanelError
from .estimators import ESTIMATOR_NAMES, run_estimator
from .forest import FULL_FOREST, DESK_FOREST, ForestParams
from .montecarlo import (
    DgpParams,
    export_histogram,
    export_histogram_svg,
    run_monte_carlo,
    simulate_panel,
    write_summary_csv,
)
from .panel import (
    ColumnSchema,
    PanelDataset,
    add_entity_mean,
    add_lag,
    drop_missing_rows,
    filter_min_periods,
    impute,
    load_csv,
)

log = logging.getLogger("pcredml")

PRESETS = {
    # (default number of replications, forest settings)
    "desk": (100, DESK_FOREST),
    "paper": (1000, FULL_FOREST),
}

RESULT_COLUMNS = ["Estimator", "Coefficient", "Standard Error", "p-value"]
SUMMARY_COLUMNS = ["Estimator", "Bias", "Variance", "MSE"]


@dataclass
class RunConfig:
    subcommand: str
    input: Path | None = None
    output_dir: Path | None = None
    schema: ColumnSchema = field(default_factory=ColumnSchema)
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    dgp: DgpParams = field(default_factory=DgpParams)
    dml: DmlConfig = field(default_factory=DmlConfig)
    seed: int = 42
    preset: str = "desk"
    n_sims: int | None = None
    min_years: int | None = None
    min_years_column: str | None = None
    gmm_n_boot: int = 10
    n_jobs: int = 1
    svg: bool = False
    panel_only: bool = False
    strict: bool = False

    def __post_init__(self):
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown:
            raise ValueError(f"unknown estimator(s): {', '.join(unknown)}; choose from {', '.join(ESTIMATOR_NAMES)}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.subcommand in ("estimate", "report") and not self.input:
            raise ValueError(f"{self.subcommand} requires --input")
        if self.subcommand in ("estimate", "simulate") and not self.output_dir:
            raise ValueError(f"{self.subcommand} requires --output-dir")


def _fmt4(v: float) -> str:
    return "" if v is None or not math.isfinite(v) else f"{round(v, 4):.4f}"


def _split_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _write_header(fh, items):
    for k, v in items:
        fh.write(f"# {k}={v}\n")


# ---------------------------------------------------------------- estimate


def prepare_panel(ds: PanelDataset, schema: ColumnSchema) -> PanelDataset:
    """Impute raw columns, then add missing lags and entity means.

    Derived columns already present in the input are used unchanged.  Rows
    without the one-period lags (each entity's first period) are dropped
    before entity means are computed.
    """
    raw = [c for c in schema.data_columns if c in ds]
    ds = impute(ds, raw)
    lag_cols = []
    for src, lag in [(schema.outcome, schema.outcome_lag), *zip(schema.proxies, schema.proxy_lags)]:
        if lag not in ds and src in ds:
            ds = add_lag(ds, src, 1, lag)
        if lag in ds:
            lag_cols.append(lag)
    ds = drop_missing_rows(ds, lag_cols)
    means = [
        (schema.treatment, schema.treatment_mean),
        (schema.outcome, schema.outcome_mean),
        *zip(schema.proxy_lags, schema.proxy_means),
    ]
    for src, dst in means:
        if dst not in ds and src in ds:
            ds = add_entity_mean(ds, src, dst)
    return ds


def estimate_all(ds: PanelDataset, cfg: RunConfig) -> list[tuple[str, EstimateResult | None, str]]:
    rows = []
    for name in cfg.estimators:
        try:
            res = run_estimator(
                name, ds, cfg.schema, dml_cfg=replace(cfg.dml, seed=cfg.seed), gmm_n_boot=cfg.gmm_n_boot, seed=cfg.seed
            )
            rows.append((name, res, ""))
        except (PanelError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
            log.error("%s failed: %s", name, exc)
            rows.append((name, None, str(exc)))
    return rows


def cmd_estimate(cfg: RunConfig) -> int:
    schema = cfg.schema
    # proxies are optional at load time; estimators that need them fail individually
    ds = load_csv(cfg.input, replace(schema, proxies=()))
    if cfg.min_years:
        col = cfg.min_years_column or (schema.controls[-1] if schema.controls else schema.outcome)
        ds = filter_min_periods(ds, col, cfg.min_years)
    ds = prepare_panel(ds, schema)
    rows = estimate_all(ds, cfg)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "results.csv"
    with open(path, "w", newline="") as fh:
        header = [
            ("seed", cfg.seed),
            ("preset", cfg.preset),
            ("estimators", ",".join(cfg.estimators)),
            ("n_obs", len(ds)),
        ]
        header += [(f"error[{name}]", msg.replace("\n", " ")) for name, res, msg in rows if res is None]
        _write_header(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for name, res, _ in rows:
            if res is None:
                w.writerow([name, "", "", ""])
            else:
                w.writerow([name, _fmt4(res.coef), _fmt4(res.se), _fmt4(res.p_value)])
    print(path)
    return 0


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig) -> int:
    n_default, _ = PRESETS[cfg.preset]
    n_sims = cfg.n_sims if cfg.n_sims is not None else n_default
    dgp = replace(cfg.dgp, seed=cfg.seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if cfg.panel_only:
        path = cfg.output_dir / "panel.csv"
        simulate_panel(dgp, 0).to_csv(path, cfg.schema.entity, cfg.schema.time)
        print(path)
        return 0

    report = run_monte_carlo(
        dgp, n_sims, cfg.estimators, cfg.dml, gmm_n_boot=cfg.gmm_n_boot, n_jobs=cfg.n_jobs
    )
    header = [
        ("seed", cfg.seed),
        ("preset", cfg.preset),
        ("n_sims", n_sims),
        ("estimators", ",".join(cfg.estimators)),
        ("dgp_variant", dgp.variant),
        ("clean_lags", dgp.clean),
    ]
    for name, e in report.estimators.items():
        if e.n_failed:
            header.append((f"failed[{name}]", e.n_failed))
    summary = cfg.output_dir / "summary.csv"
    hist = cfg.output_dir / "histogram.csv"
    write_summary_csv(report, summary, dict(header))
    if any(e.draws for e in report.estimators.values()):
        export_histogram(report, hist, header=dict(header))
        if cfg.svg:
            export_histogram_svg(report, cfg.output_dir / "histogram.svg")
    else:
        log.error("no estimator produced a finite estimate; histogram not written")
        return 1
    print(summary)
    print(hist)
    return 0


# ---------------------------------------------------------------- report


def _read_table(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no table found")
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _num(s: str) -> float:
    return float(s) if s.strip() else math.nan


def check_identity(bias: float, variance: float, mse: float) -> bool:
    """``MSE == bias**2 + variance`` up to the error of 4-decimal rounding."""
    if any(math.isnan(v) for v in (bias, variance, mse)):
        return True
    tol = 5e-5 * (2 * abs(bias) + 2) + 1e-9
    return abs(mse - (bias * bias + variance)) <= tol


def render_table(header, rows) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    out.append("  ".join("-" * w for w in widths))
    for r in rows:
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(out)


def cmd_report(cfg: RunConfig) -> int:
    header, rows = _read_table(cfg.input)
    if header == SUMMARY_COLUMNS:
        if any(len(r) != 4 for r in rows):
            raise ValueError(f"{cfg.input}: ragged summary table")
        vals = [(r[0], _num(r[1]), _num(r[2]), _num(r[3])) for r in rows]
        print(render_table(SUMMARY_COLUMNS, [[c.strip() for c in r] for r in rows]))
        bad = [name for name, b, v, m in vals if not check_identity(b, v, m)]
        if bad:
            for name in bad:
                print(f"IDENTITY VIOLATION: MSE != Bias^2 + Variance for {name}")
        else:
            print("identity check passed: MSE = Bias^2 + Variance for every row")
        return 3 if bad and cfg.strict else 0
    if header == RESULT_COLUMNS:
        if any(len(r) != 4 for r in rows):
            raise ValueError(f"{cfg.input}: ragged results table")
        for r in rows:
            for c in r[1:]:
                _num(c)
        print(render_table(RESULT_COLUMNS, rows))
        return 0
    raise ValueError(f"{cfg.input}: unrecognised columns {header}")


# ---------------------------------------------------------------- parsing


def _parse_kv(items, target_cls):
    known = {f.name: f.type for f in fields(target_cls)}
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in known or k in ("seed", "variant", "clean"):
            raise ValueError(f"unknown DGP parameter {k!r}")
        default = getattr(target_cls(), k)
        if isinstance(default, bool):
            out[k] = v.strip().lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            out[k] = int(v)
        elif isinstance(default, float):
            out[k] = float(v)
        else:
            out[k] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcredml", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--estimators", default=",".join(ESTIMATOR_NAMES), help="comma-separated estimator names")
    common.add_argument("--output-dir", type=Path)
    common.add_argument("--folds", type=int, default=5)
    common.add_argument("--dml-reps", type=int, default=1)
    common.add_argument("--fold-average", action="store_true", help="average per-fold estimates instead of pooling")
    common.add_argument("--trees", type=int)
    common.add_argument("--max-depth", type=int)
    common.add_argument("--min-samples-split", type=int)
    common.add_argument("--split-features", help="'all', 'sqrt' or a count")
    common.add_argument("--criterion", choices=["sse", "mse"])
    common.add_argument("--gmm-boot", type=int, default=10, help="bootstrap refits for the GMM standard error")

    schema = argparse.ArgumentParser(add_help=False)
    schema.add_argument("--entity-col", default="country")
    schema.add_argument("--time-col", default="year")
    schema.add_argument("--outcome", default="gdp_growth")
    schema.add_argument("--treatment", default="trust")
    schema.add_argument("--controls", default="capital,labor,technology")
    schema.add_argument("--proxies", default="gov_effectiveness")

    est = sub.add_parser("estimate", parents=[common, schema], help="run estimators on a panel CSV")
    est.add_argument("--input", type=Path, required=True)
    est.add_argument("--preset", choices=list(PRESETS), default="paper")
    est.add_argument("--min-years", type=int, help="keep entities with at least this many observed years")
    est.add_argument("--min-years-column", help="column counted by --min-years (default: last control)")

    sim = sub.add_parser("simulate", parents=[common, schema], help="Monte Carlo comparison")
    sim.add_argument("--preset", choices=list(PRESETS), default="desk")
    sim.add_argument("--n-sims", type=int)
    sim.add_argument("--dgp-variant", choices=["code", "prose"], default="code")
    sim.add_argument("--clean-lags", action="store_true", help="use within-entity lags in the DGP")
    sim.add_argument("--dgp", action="append", metavar="KEY=VALUE", help="override a DGP coefficient")
    sim.add_argument("--n-jobs", type=int, default=1)
    sim.add_argument("--svg", action="store_true", help="also write histogram.svg")
    sim.add_argument("--panel-only", action="store_true", help="write one simulated panel to panel.csv and exit")

    rep = sub.add_parser("report", help="print a results or summary CSV as a table")
    rep.add_argument("--input", type=Path, required=True)
    rep.add_argument("--strict", action="store_true", help="exit 3 when the MSE identity fails")
    return parser


def config_from_args(args) -> RunConfig:
    if args.subcommand == "report":
        return RunConfig("report", input=args.input, strict=args.strict)
    preset = args.preset
    forest = PRESETS[preset][1]
    overrides = {}
    if args.trees is not None:
        overrides["n_trees"] = args.trees
    if args.max_depth is not None:
        overrides["max_depth"] = args.max_depth
    if args.min_samples_split is not None:
        overrides["min_samples_split"] = args.min_samples_split
    if args.split_features is not None:
        sf = args.split_features
        overrides["n_split_features"] = int(sf) if sf.isdigit() else sf
    if args.criterion is not None:
        overrides["criterion"] = args.criterion
    forest = replace(forest, **overrides)
    dml = DmlConfig(
        n_folds=args.folds,
        n_reps=args.dml_reps,
        learner_params=forest,
        seed=args.seed,
        fold_average=args.fold_average,
    )
    schema = ColumnSchema(
        outcome=args.outcome,
        treatment=args.treatment,
        controls=_split_list(args.controls),
        proxies=_split_list(args.proxies),
        entity=args.entity_col,
        time=args.time_col,
    )
    kw = dict(
        input=getattr(args, "input", None),
        output_dir=args.output_dir,
        schema=schema,
        estimators=_split_list(args.estimators),
        dml=dml,
        seed=args.seed,
        preset=preset,
        gmm_n_boot=args.gmm_boot,
    )
    if args.subcommand == "estimate":
        return RunConfig("estimate", min_years=args.min_years, min_years_column=args.min_years_column, **kw)
    dgp = DgpParams(
        variant=args.dgp_variant,
        clean=args.clean_lags,
        seed=args.seed,
        **_parse_kv(args.dgp, DgpParams),
    )
    return RunConfig(
        "simulate",
        dgp=dgp,
        n_sims=args.n_sims,
        n_jobs=args.n_jobs,
        svg=args.svg,
        panel_only=args.panel_only,
        **kw,
    )


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.subcommand](cfg)
    except (PanelError, ValueError, OSError) as exc:
        print(f"pcredml {args.subcommand}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
