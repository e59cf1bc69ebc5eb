"""Heavy-tailed stochastic volatility factors and volatility-contagion regressions.

Stage 1 filters daily factor returns with GARCH-AM, Gaussian SV or
explosive SV (ESV) volatility. Stage 2 regresses country returns on the
demeaned factors and their volatility shocks.
"""

__version__ = "0.1.0"

from .contagion import (CrisisWindows, RegressionFit, capm_bias_demo, fit_crisis_contagion,
                        fit_static_contagion, ols, rolling_residual_correlation)
from .diagnostics import MomentTestResult, anscombe_kurtosis, dagostino_skewness, model_comparison
from .esv import (EsvParams, GridSpec, ParticleSet, esv_filter, extract_shocks, grid_search,
                  propagate_particle)
from .factors import FactorPanel, build_factor_panel, orthogonalize
from .ingest import RawSeries, ReturnPanel, align, load_series, prices_to_excess_returns
from .simulate import JointSimConfig, grid_filter_oracle, sim_esv, sim_garch, sim_joint_panel
from .volmodels import (FilterOutput, GarchParams, MeanModelSpec, garch_filter, garch_fit,
                        largest_residuals)

__all__ = [
    "CrisisWindows", "EsvParams", "FactorPanel", "FilterOutput", "GarchParams", "GridSpec",
    "JointSimConfig", "MeanModelSpec", "MomentTestResult", "ParticleSet", "RawSeries",
    "RegressionFit", "ReturnPanel", "align", "anscombe_kurtosis", "build_factor_panel",
    "capm_bias_demo", "dagostino_skewness", "esv_filter", "extract_shocks",
    "fit_crisis_contagion", "fit_static_contagion", "garch_filter", "garch_fit",
    "grid_filter_oracle", "grid_search", "largest_residuals", "load_series", "model_comparison",
    "ols", "orthogonalize", "prices_to_excess_returns", "propagate_particle",
    "rolling_residual_correlation", "sim_esv", "sim_garch", "sim_joint_panel",
]
