"""Active prompting engine for interactive segmentation.

A frozen promptable segmenter supplies features and masks; a small
Bayesian head with a Laplace-approximated posterior supplies ensemble
probability maps; per-pixel mutual information picks the next point
prompt. A benchmark harness compares the disagreement strategy against
entropy, random, oracle, and replayed-human baselines, and an HTTP
service exposes live sessions to the browser annotator.
"""

from .core import (
    EPS,
    BinaryMask,
    ContractViolation,
    Image,
    ProbabilityMap,
    Prompt,
    PromptSet,
    binary_entropy,
    iou,
)
from .backbone import BackboneOutput, FeatureMap, PromptableBackbone, ToyBackbone
from .head import (
    HeadArch,
    HeadConfig,
    HeadParams,
    LaplacePosterior,
    TrainRecord,
    fit_laplace,
    head_forward,
    init_params,
    load_head,
    load_posterior,
    sample_posterior,
    save_head,
    save_posterior,
    train_map,
)
from .acquisition import (
    CandidatesExhausted,
    EnsembleMaps,
    ScoreKind,
    ScoreMap,
    StrategyKind,
    mutual_information_map,
    oracle_select,
    predictive_ensemble,
    predictive_entropy_map,
    select_next,
)
from .session import (
    SessionState,
    StepRecord,
    StopConfig,
    StopReason,
    Trajectory,
    check_stop,
    run_matched_baselines,
    run_session,
    step,
)
from .synth import (
    SceneSpec,
    TrainingExample,
    generate_scene,
    generate_training_prompt_sets,
    split_dataset,
)

__all__ = [
    "EPS",
    "BinaryMask",
    "ContractViolation",
    "Image",
    "ProbabilityMap",
    "Prompt",
    "PromptSet",
    "binary_entropy",
    "iou",
    "BackboneOutput",
    "FeatureMap",
    "PromptableBackbone",
    "ToyBackbone",
    "HeadArch",
    "HeadConfig",
    "HeadParams",
    "LaplacePosterior",
    "TrainRecord",
    "fit_laplace",
    "head_forward",
    "init_params",
    "load_head",
    "load_posterior",
    "sample_posterior",
    "save_head",
    "save_posterior",
    "train_map",
    "CandidatesExhausted",
    "EnsembleMaps",
    "ScoreKind",
    "ScoreMap",
    "StrategyKind",
    "mutual_information_map",
    "oracle_select",
    "predictive_ensemble",
    "predictive_entropy_map",
    "select_next",
    "SessionState",
    "StepRecord",
    "StopConfig",
    "StopReason",
    "Trajectory",
    "check_stop",
    "run_matched_baselines",
    "run_session",
    "step",
    "SceneSpec",
    "TrainingExample",
    "generate_scene",
    "generate_training_prompt_sets",
    "split_dataset",
]

__version__ = "0.1.0"
