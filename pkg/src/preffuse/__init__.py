"""Multimodal preference fusion and reward learning for preference-based
RL, with every numerical component testable offline."""

from .trajectory import (
    PreferenceLabel,
    SchemaError,
    Trajectory,
    TrajectoryPair,
    combined_vector,
    load_dataset,
    save_dataset,
    segment,
    textual_projection,
)
from .keyframes import (
    KeyframeConfig,
    KeyframeExtractor,
    KeyframeSet,
    change_points_pelt,
    extract_keyframes,
    near_zero_velocity,
    smoothing_residual_peaks,
)
from .discriminability import (
    DiscriminabilityScores,
    HTTPEmbedding,
    ImageEmbedding,
    StateEmbedding,
    rho,
    td_high,
    trj_vol,
    vd_high,
    wasserstein,
)
from .evaluators import (
    EvaluatorProfile,
    Judgment,
    RemoteFMEvaluator,
    ResponseParseError,
    noisy_evaluator,
    parse_fm_response,
    scripted_teacher,
)
from .fusion import ModalResult, calibrated_confidence, crowd_check, fuse_intra, majority_vote
from .psl import (
    FusedPreference,
    FusionProblem,
    GroundRule,
    HingePotential,
    Literal,
    RuleTemplate,
    default_templates,
    fuse_inter,
    ground_rules,
    lukasiewicz_potential,
    map_inference,
    project_to_simplex,
)
from .synthesis import (
    CounterfactualSample,
    Intervention,
    PickEnv,
    ReachEnv,
    augment,
    foresight_generate,
    generate_counterfactual,
    identify_causal_steps,
    make_reach_generator,
    minimal_edit_filter,
    random_exploration,
    verify_counterfactual,
)
from .reward import (
    PreferenceRecord,
    RewardEnsemble,
    RewardNet,
    TrainConfig,
    causal_aux_loss,
    preference_loss,
    preference_prob,
    total_loss,
    train_reward,
    uncertainty_select,
)
from .config import PipelineConfig
from .pipeline import RunReport, run_pipeline

__version__ = "0.1.0"
