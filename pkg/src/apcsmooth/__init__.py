"""Age-period-cohort models with penalized smoothing splines.

Fits the estimable reparameterization of the APC model (intercept, two
temporal slopes, three curvature smooths) to equally or unequally
aggregated tabular data, selects smoothing parameters by GCV, and
extracts the identifiable effects and curvatures.
"""

__version__ = "0.1.0"

from .basis import (
    BasisBlock,
    KnotSet,
    NaturalCubicSpline,
    crs_basis,
    cyclic_crs_basis,
    default_knots,
    natural_cubic_fit,
)
from .data_io import (
    ApcDataset,
    RateTable,
    aggregate_table,
    parse_rate_csv,
    round_counts,
    subset,
    to_model_dataset,
    write_rate_csv,
)
from .design import (
    ApcDesign,
    CovariateScale,
    ModelSpec,
    augment_with_periodic,
    build_design,
    factor_curvature_block,
)
from .effects import (
    EffectTable,
    ReplicateSummary,
    aggregate_true_age,
    aggregate_true_cohort,
    bias_mse,
    detrend,
    full_cube_eta,
    marginal_effect,
    model_effect_tables,
    penalty_inequality_check,
    periodicity_amplitude,
)
from .glm import (
    Family,
    FittedApcModel,
    effective_dof,
    fit_apc,
    pirls_fit,
    select_lambdas,
)
from .grid import CellIndex, TemporalGrid, build_grid, cohort_index
from .reparam import (
    NullSpaceTransform,
    apply_transform,
    null_space,
    orthogonalize_to_linear,
)
from .simulate import (
    SimConfig,
    StudyReport,
    TrueFunctions,
    aggregate_replicate,
    generate_replicate,
    run_study,
    study_setup,
    true_effect_tables,
)

__all__ = [name for name in dir() if not name.startswith("_")]
