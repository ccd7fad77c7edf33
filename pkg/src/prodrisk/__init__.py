"""Firm-level production networks: shock cascades and systemic-risk scores."""

from .netcore import (
    DataError,
    FirmRecord,
    NetworkError,
    ProductionNetwork,
    SectorNetwork,
    SyntheticConfig,
    TransactionEvent,
    aggregate_to_sectors,
    build_network,
    filter_long_term_links,
    fingerprint,
    generate_synthetic,
    input_matrix,
    market_shares,
    strengths,
)
from .prodfun import (
    ProductionParams,
    Scenario,
    ScenarioSpec,
    assign_scenario,
    calibrate,
    evaluate_gl,
)
from .cascade import (
    CascadeResult,
    CascadeState,
    ExogenousShock,
    ImpactMatrices,
    build_impact_matrices,
    initial_state,
    replaceability,
    rescale_for_coverage,
    run_cascade,
    step,
)
from .esri import EsriVector, esri_all, esri_single, scenario_suite
from .analysis import (
    DEFAULT_THRESHOLDS,
    LogLogFit,
    Plateau,
    PowerlawFit,
    RankProfile,
    SectorShockReport,
    YearComparison,
    count_above_thresholds,
    detect_plateau,
    disjoint_pair_fraction,
    fit_powerlaw_mle,
    jaccard_overlap,
    rank_profile,
    sector_shock_experiment,
    strength_esri_fit,
    year_over_year,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
