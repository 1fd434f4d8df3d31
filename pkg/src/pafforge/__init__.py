"""pafforge: low-degree polynomial ReLU/MaxPool replacement with
accuracy-recovery training and FHE cost analysis."""

from .catalog import PafCatalog, load_catalog
from .cost import CostEstimate, estimate_cost
from .ct import (
    ActivationProfile,
    CtConfig,
    CtDataset,
    collect_ct_dataset,
    profile,
    split_ct,
    tune_coefficients,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DomainError,
    PafForgeError,
    UnknownPafError,
)
from .nn import (
    Checkpoint,
    ModelGraph,
    TrainConfig,
    build_model,
    evaluate,
    pretrain,
    swa_average,
)
from .paf import (
    EXACT_SIGN,
    CompositePaf,
    EvaluationPlan,
    OddPolynomial,
    build_plan,
    eval_composite,
    eval_odd_poly,
    max_paf,
    relu_paf,
)
from .scaling import (
    ScaleMode,
    dynamic_scale,
    freeze_static,
    paf_activation,
    update_running_max,
)
from .scheduler import (
    ScheduleReport,
    StepState,
    Toggles,
    TrainingGroupRecord,
    alternate_swap,
    detect_overfitting,
    replace_next_nonpoly,
    run_baseline,
    run_framework,
    run_step,
    run_training_group,
)

__version__ = "0.1.0"
