"""Memory-augmented recurrent networks for formal-language tasks.

The package bundles a tape-based reverse-mode autodiff core (`autodiff`),
corpus generators and oracles for bracket-nesting, palindrome, and reversal
tasks (`languages`), six recurrent architectures with differentiable
external memory (`models`), a per-sequence training and multi-seed
experiment harness (`training`), task/model presets (`presets`), an
estimator-style wrapper (`estimator`), and a CLI (`marnn`).
"""

from .autodiff import (
    RngStream,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad_check,
    gumbel_softmax,
    primitive_forward,
    softmax_temp,
)
from .estimator import MarnnSequencePredictor
from .languages import (
    Dataset,
    GenerationBudgetError,
    GrammarConfig,
    Sample,
    Vocabulary,
    dyck_targets,
    encode,
    load_dataset,
    reversal_pairs,
    sample_dyck,
    sample_palindrome,
    save_dataset,
    verify_disjoint,
)
from .models import (
    ModelConfig,
    ModelParams,
    MemoryState,
    StackState,
    StepTrace,
    build_model,
    load_checkpoint,
    memory_update,
    op_matrices,
    run_sequence,
    save_checkpoint,
    stack_update,
)
from .presets import MODEL_VARIANTS, TASKS, ExperimentSpec, build_datasets
from .training import (
    Adam,
    RunReport,
    RunResult,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    mse_loss,
    predict_sets,
    run_experiment,
    sequence_correct,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Dataset",
    "ExperimentSpec",
    "GenerationBudgetError",
    "GrammarConfig",
    "MODEL_VARIANTS",
    "MarnnSequencePredictor",
    "MemoryState",
    "ModelConfig",
    "ModelParams",
    "RngStream",
    "RunReport",
    "RunResult",
    "Sample",
    "ShapeError",
    "StackState",
    "StepTrace",
    "TASKS",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "Vocabulary",
    "backward",
    "build_datasets",
    "build_model",
    "dyck_targets",
    "encode",
    "evaluate",
    "grad_check",
    "gumbel_softmax",
    "load_checkpoint",
    "load_dataset",
    "memory_update",
    "mse_loss",
    "op_matrices",
    "predict_sets",
    "primitive_forward",
    "reversal_pairs",
    "run_experiment",
    "run_sequence",
    "sample_dyck",
    "sample_palindrome",
    "save_checkpoint",
    "save_dataset",
    "sequence_correct",
    "softmax_temp",
    "stack_update",
    "train",
    "verify_disjoint",
]
