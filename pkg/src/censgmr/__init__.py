"""Censored multivariate Gaussian mixtures of regressions."""

from .data import CensoredDataset, apply_censoring, dataset_from_latent
from .errors import (
    CensGmrError,
    ComponentCollapseError,
    DegenerateRegionError,
    FactorizationError,
    FitFailureError,
)
from .inference import (
    ParamIndex,
    WaldReport,
    complete_score,
    empirical_information,
    score_matrix,
    stationarity_gap,
    wald_tests,
)
from .mixture import (
    EStepCache,
    FitConfig,
    FitResult,
    MixtureParams,
    Responsibilities,
    classify,
    component_loglik,
    e_step,
    fit_mixture,
    m_step,
    mixture_loglik,
)
from .model_selection import SelectionTable, icl_bic, select_g
from .simulation import (
    ScenarioConfig,
    adjusted_rand_index,
    align_components,
    generate,
    run_comparison,
    scenario_mild,
    scenario_severe,
    type1_study,
)
from .tobit import EmConfig, EmTrace, RegressionParams, fit_tobit, tobit_estep, tobit_loglik
from .truncated_gaussian import (
    CdfResult,
    GaussianParams,
    QmcConfig,
    RectRegion,
    TruncatedMoments,
    conditional_params,
    mvn_cdf,
    mvn_logpdf,
    truncated_moments,
)

__version__ = "0.1.0"
