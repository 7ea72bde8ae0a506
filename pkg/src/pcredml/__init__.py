"""Panel treatment-effect estimation with proxy-augmented correlated-random-effects DML."""

__version__ = "0.1.0"

from .dml import DmlConfig, EstimateResult, ResidualPair, dml_plr
from .estimators import (
    CREDML,
    OLS,
    PCREDML,
    FixedEffects,
    SystemGMM,
    run_cre_dml,
    run_fixed_effects,
    run_ols,
    run_p_cre_dml,
    run_system_gmm,
)
from .forest import ForestParams, RandomForestRegressor
from .montecarlo import DgpParams, SimulationReport, run_monte_carlo, simulate_panel
from .panel import ColumnSchema, PanelDataset, load_csv

__all__ = [
    "ColumnSchema",
    "CREDML",
    "DgpParams",
    "DmlConfig",
    "EstimateResult",
    "FixedEffects",
    "ForestParams",
    "OLS",
    "PCREDML",
    "PanelDataset",
    "RandomForestRegressor",
    "ResidualPair",
    "SimulationReport",
    "SystemGMM",
    "dml_plr",
    "load_csv",
    "run_cre_dml",
    "run_fixed_effects",
    "run_monte_carlo",
    "run_ols",
    "run_p_cre_dml",
    "run_system_gmm",
    "simulate_panel",
]
