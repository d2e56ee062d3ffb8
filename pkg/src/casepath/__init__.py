"""Transparent decision-tree early-warning pipeline: trains per-cohort-year
trees, turns tree paths into practitioner-facing LLM explanations, and
closes the loop with blinded usability ratings and an effect regression."""

__version__ = "0.1.0"

from .datamodel import (  # noqa: F401
    LABEL_ATRISK,
    LABEL_GRAD,
    CohortPanel,
    FeatureMatrix,
    FeatureSchema,
    FeatureSpec,
    MatrixBuilder,
    StudentRecord,
    build_matrix,
    default_schema,
    load_panel,
    percentile_transform,
    save_panel,
)
from .metrics import ClassReport, class_report, precision_recall_f1, roc_auc  # noqa: F401
from .synthetic import PlantedRule, SyntheticConfig, generate_synthetic  # noqa: F401
from .tree import (  # noqa: F401
    DecisionTree,
    Hyperparameters,
    extract_path,
    impurity,
    parse_tree_text,
    predict,
    render_tree_text,
    train,
)
from .tuning import CVResult, GridSpec, grid_search, kfold_split  # noqa: F401
