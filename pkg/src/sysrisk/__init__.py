"""Individual bank contributions to systemic risk.

Co-risk measures by quantile regression, Shapley attribution of portfolio
VaR, a tournament ranking the measures against crisis events, and panel
regressions of the contributions on bank characteristics.
"""

from .corisk import RiskSeries, asym_delta_covar, delta_coes, delta_covar, var_series
from .errors import (
    DegenerateResponseError,
    FeasibilityError,
    ParseError,
    SampleSizeError,
    SingularDesignError,
    SysRiskError,
    ValidationError,
)
from .ingest import (
    EventTimeline,
    GrowthPanel,
    MarketPanel,
    QuarterPanel,
    SimConfig,
    StateSeries,
    compute_growth,
    load_events,
    load_market_panel,
    load_quarter_panel,
    load_state_series,
    portfolio_growth,
    simulate_system,
)
from .panelreg import (
    PanelSpec,
    RegressionResult,
    assemble_panel,
    diff_in_diff,
    economic_impact,
    endogeneity_chain,
    prais_winsten_pcse,
)
from .pipeline import compute_measures, quarterly_matrix
from .quantreg import QuantileFit, fit_quantile
from .ranking import ScoreBoard, build_iev, fit_logit, fit_mlogit, granger_test, mcfadden_r2, score_measures
from .shapley import (
    CharacteristicCache,
    SystemSpec,
    brute_shapley,
    build_system_spec,
    gross_shapley,
    net_shapley,
)

__all__ = [
    "RiskSeries",
    "asym_delta_covar",
    "delta_coes",
    "delta_covar",
    "var_series",
    "DegenerateResponseError",
    "FeasibilityError",
    "ParseError",
    "SampleSizeError",
    "SingularDesignError",
    "SysRiskError",
    "ValidationError",
    "EventTimeline",
    "GrowthPanel",
    "MarketPanel",
    "QuarterPanel",
    "SimConfig",
    "StateSeries",
    "compute_growth",
    "load_events",
    "load_market_panel",
    "load_quarter_panel",
    "load_state_series",
    "portfolio_growth",
    "simulate_system",
    "PanelSpec",
    "RegressionResult",
    "assemble_panel",
    "diff_in_diff",
    "economic_impact",
    "endogeneity_chain",
    "prais_winsten_pcse",
    "compute_measures",
    "quarterly_matrix",
    "QuantileFit",
    "fit_quantile",
    "ScoreBoard",
    "build_iev",
    "fit_logit",
    "fit_mlogit",
    "granger_test",
    "mcfadden_r2",
    "score_measures",
    "CharacteristicCache",
    "SystemSpec",
    "brute_shapley",
    "build_system_spec",
    "gross_shapley",
    "net_shapley",
]

__version__ = "0.1.0"
