"""Parameter-efficient video quality assessment on frozen two-tower encoders.

A frozen vision-language backbone is steered by a small shared adapter
injected at its encoder layers and projections, quality-level prompts
with a learnable prefix, and a weighted-sum head over the per-level
similarities. Frame selection, training, evaluation and persistence live
in their own modules; the CLI ties them together.
"""

from .backbone import (
    AdapterHooks,
    BackboneSpec,
    LayerActivations,
    TinyBackbone,
    TwoTowerBackbone,
    backbone_checksum,
    encode_text,
    encode_video,
    make_tiny_backbone,
)
from .data import (
    ClipStore,
    DatasetManifest,
    DecodeConfig,
    FrameCache,
    ManifestRow,
    decode_frames,
    load_checkpoint,
    make_synthetic_dataset,
    save_checkpoint,
)
from .errors import (
    AuditError,
    CheckpointError,
    IngestionError,
    InputContractError,
    NumericContractError,
    VqaError,
)
from .evaluation import (
    EvalReport,
    SplitRecord,
    compute_metrics,
    krocc,
    plcc,
    rmse,
    run_split_protocol,
    split_indices,
    srocc,
)
from .frames import FrameSequence, resize_frames
from .model import VideoQualityModel, assemble_model
from .prompts import (
    LEVELS,
    PROMPT_MODES,
    PromptBank,
    QualityLevel,
    build_prompt_bank,
    embed_prompts,
    prompt_template,
)
from .quality import LevelScores, QualityHead, level_scores, predict_quality
from .sampling import (
    STRATEGIES,
    MotionProfile,
    SamplingPlan,
    motion_profile,
    plan_indices,
    sample_mixed,
    sample_mse_sorted_uniform,
    sample_random,
    sample_seg_mse_mean,
    sample_seg_mse_median,
    sample_uniform,
    sample_uniform_random_start,
)
from .scma import (
    AdapterState,
    SCMAConfig,
    closed_form_param_count,
    trainable_param_count,
)
from .training import (
    AuditReport,
    TrainConfig,
    TrainResult,
    assert_only_adapter_trainable,
    batch_loss,
    predict,
    split_protocol_runner,
    train,
)

__version__ = "0.1.0"
