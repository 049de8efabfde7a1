"""surveycast: prediction pipeline for longitudinal-survey tabular data.

Feature engineering (filters, imputation with missing-reason flags,
one-hot encoding, composites), dual feature selection (mutual
information, LASSO support), natively implemented elastic net / random
forest / gradient-boosted trees, four ensembling schemes, and the
relative-improvement evaluation suite, runnable end to end on synthetic
survey-shaped data.
"""

__version__ = "0.1.0"

from .ingest import (  # noqa: F401
    ColumnMeta,
    Dataset,
    Kind,
    OutcomeSet,
    Respondent,
    classify_column_kind,
    classify_dataset,
    load_dataset,
    parse_wave_respondent,
)
from .preprocess import (  # noqa: F401
    EncodedDataset,
    add_composite_homelessness,
    filter_high_missing,
    filter_low_variance,
    impute_mean_with_flags,
    one_hot_encode,
    preprocess_pipeline,
    transform_features,
)
from .featsel import (  # noqa: F401
    FeatureSet,
    first_pc_correlation,
    jaccard,
    lasso_select,
    mutual_information,
    select_top_k_mi,
)
from .linear import LinearModel, fit_elastic_net, fit_elastic_net_cv, fit_logistic  # noqa: F401
from .trees import (  # noqa: F401
    DecisionTree,
    ForestModel,
    GbtModel,
    feature_importance,
    fit_gbt,
    fit_random_forest,
    fit_tree,
)
from .tuning import GridSpec, SplitPlan, grid_search_cv, kfold, nested_forest_ensemble  # noqa: F401
from .ensemble import PredictionSet, simple_average, stack, weighted_average  # noqa: F401
from .evaluate import (  # noqa: F401
    aggregate_importance,
    baseline_loss,
    brier,
    importance_table,
    mse,
    relative_improvement,
    split_correlations,
)
from .synth import SynthConfig, generate, write_synth  # noqa: F401
