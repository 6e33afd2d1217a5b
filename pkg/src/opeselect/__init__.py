"""Meta-learned estimator selection for off-policy evaluation."""

from .bandit import (
    DEFAULT_SPACE,
    DESK_SPACE,
    GeneratorSpace,
    LoggingDataset,
    OpeTask,
    TaskGenParams,
    generate_ope_task,
    is_trivial_task,
    sample_task_params,
    true_policy_value,
)
from .convert import ClassificationDataset, convert_classification_to_bandit, load_classification_csv
from .errors import (
    DegenerateSplitError,
    FullSupportError,
    ModelFormatError,
    OpeSelectError,
    SchemaMismatchError,
    TrainingDivergedError,
)
from .estimators import (
    enumerate_candidates,
    estimate_candidate,
    evaluate_all_candidates,
    slope_select,
)
from .features import FEATURE_NAMES, N_FEATURES, feature_matrix
from .meta_model import (
    BoundInputs,
    HyperparamSpace,
    TrainedMetaModel,
    domain_shift_bound,
    erm_bound,
    load_meta_model,
    mdi_importance,
    predict_mse,
    save_meta_model,
    train_meta_model,
)
from .metadataset import build_meta_dataset, evaluate_task, read_meta_dataset
from .pasif import PasifConfig, importance_fit, pasif_mse_all, tune_lambda
from .presets import PRESET_NAMES, ExperimentConfig, run_experiment_preset
from .reward_models import RewardModelConfig, fit_all_reward_matrices
from .selection import SelectionResult, autoope_select, relative_regret, spearman_rank
from .taskdir import TaskBundle, load_task_dir, save_task_dir

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SPACE",
    "DESK_SPACE",
    "GeneratorSpace",
    "LoggingDataset",
    "OpeTask",
    "TaskGenParams",
    "generate_ope_task",
    "is_trivial_task",
    "sample_task_params",
    "true_policy_value",
    "ClassificationDataset",
    "convert_classification_to_bandit",
    "load_classification_csv",
    "DegenerateSplitError",
    "FullSupportError",
    "ModelFormatError",
    "OpeSelectError",
    "SchemaMismatchError",
    "TrainingDivergedError",
    "enumerate_candidates",
    "estimate_candidate",
    "evaluate_all_candidates",
    "slope_select",
    "FEATURE_NAMES",
    "N_FEATURES",
    "feature_matrix",
    "BoundInputs",
    "HyperparamSpace",
    "TrainedMetaModel",
    "domain_shift_bound",
    "erm_bound",
    "load_meta_model",
    "mdi_importance",
    "predict_mse",
    "save_meta_model",
    "train_meta_model",
    "build_meta_dataset",
    "evaluate_task",
    "read_meta_dataset",
    "PasifConfig",
    "importance_fit",
    "pasif_mse_all",
    "tune_lambda",
    "PRESET_NAMES",
    "ExperimentConfig",
    "run_experiment_preset",
    "RewardModelConfig",
    "fit_all_reward_matrices",
    "SelectionResult",
    "autoope_select",
    "relative_regret",
    "spearman_rank",
    "TaskBundle",
    "load_task_dir",
    "save_task_dir",
]
