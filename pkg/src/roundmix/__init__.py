"""Mixed-scale density estimation with rounded latent Gaussian mixtures.

The package models a vector of continuous and discrete coordinates as a
deterministic transformation of a latent real vector: continuous coordinates
pass through monotone maps, discrete coordinates arise by thresholding latent
axes into ordered cells.  Latent vectors follow a Gaussian mixture, fit by a
blocked Gibbs sampler under a truncated stick-breaking prior.
"""

from roundmix.schema import (
    Cell,
    MixedPoint,
    MixedSchema,
    MonotoneMap,
    PartitionSpec,
    SchemaError,
    cell_of,
    latent_of_continuous,
    load_schema,
    save_schema,
    validate_schema,
)
from roundmix.gaussian import (
    BoxAccuracyError,
    GaussianComponent,
    NumericalError,
    box_probability,
    condition,
    log_density,
    sample,
    sample_truncated,
)
from roundmix.mixture import LatentMixture, load_draws, save_draws
from roundmix.density import (
    MixedDensity,
    discrete_marginal,
    discrete_support_enumeration,
    eval_mixed_logdensity,
    export_density_grid,
    pushforward_sample,
    total_mass,
)
from roundmix.divergence import (
    DivergenceConfig,
    DivergenceEstimate,
    empirical_l1,
    kl_mixed,
    l1_mixed,
)
from roundmix.sampler import (
    DPConfig,
    NIWParams,
    PosteriorDraws,
    SamplerState,
    default_niw,
    flatten_draws,
    gibbs_sweep,
    init_state,
    niw_posterior,
    predictive_density,
    run,
)
from roundmix.lab import (
    ContractionReport,
    NonexpansionReport,
    canonical_truth,
    check_kl_nonexpansion,
    check_l1_nonexpansion,
    contraction_experiment,
    nonexpansion_suite,
    random_instance,
)
from roundmix.dataio import DataError, Dataset, ingest

__version__ = "0.1.0"

__all__ = [
    "BoxAccuracyError",
    "Cell",
    "ContractionReport",
    "DataError",
    "Dataset",
    "DivergenceConfig",
    "DivergenceEstimate",
    "DPConfig",
    "GaussianComponent",
    "LatentMixture",
    "MixedDensity",
    "MixedPoint",
    "MixedSchema",
    "MonotoneMap",
    "NIWParams",
    "NonexpansionReport",
    "NumericalError",
    "PartitionSpec",
    "PosteriorDraws",
    "SamplerState",
    "SchemaError",
    "box_probability",
    "canonical_truth",
    "cell_of",
    "check_kl_nonexpansion",
    "check_l1_nonexpansion",
    "condition",
    "contraction_experiment",
    "default_niw",
    "discrete_marginal",
    "discrete_support_enumeration",
    "empirical_l1",
    "eval_mixed_logdensity",
    "export_density_grid",
    "flatten_draws",
    "gibbs_sweep",
    "ingest",
    "init_state",
    "kl_mixed",
    "l1_mixed",
    "latent_of_continuous",
    "load_draws",
    "load_schema",
    "log_density",
    "niw_posterior",
    "nonexpansion_suite",
    "predictive_density",
    "pushforward_sample",
    "random_instance",
    "run",
    "sample",
    "sample_truncated",
    "save_draws",
    "save_schema",
    "total_mass",
    "validate_schema",
]
