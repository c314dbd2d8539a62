from .diagnostics import (
    TrialRow,
    TrialTable,
    copula_density,
    density_integral,
    marginal_fit,
    nll_table,
    pearson_to_spearman,
    pit,
    qq_points,
    rank_correlations,
)

__all__ = [
    "TrialRow",
    "TrialTable",
    "copula_density",
    "density_integral",
    "marginal_fit",
    "nll_table",
    "pearson_to_spearman",
    "pit",
    "qq_points",
    "rank_correlations",
]
