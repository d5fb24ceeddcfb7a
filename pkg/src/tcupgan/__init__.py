"""ConvLSTM U-Net GAN segmentation with discriminator-guided review triage."""

from .cubes import ImageCube, MaskCube, PredictionCube
from .losses import (
    ConfusionCounts,
    LossBreakdown,
    TverskyParams,
    confusion,
    discriminator_bce,
    focal_tversky_loss,
    generator_objective,
    segmentation_metrics,
)
from .model import (
    ConvLSTMCell,
    ConvLSTMUNet,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    PatchScoreGrid,
    RecurrentState,
    conv_lstm_step,
    discriminator_forward,
    generator_forward,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .pipeline import (
    AnnotationRecord,
    DatasetManifest,
    SynthConfig,
    VolunteerNoise,
    aggregate_consensus,
    resize_cube,
    simulate_volunteers,
    stack_slices,
    synthesize_dataset,
    ten_crop,
)
from .training import TrainConfig, TrainingHistory, evaluate, train
from .triage import (
    SelectionCut,
    SliceStats,
    apply_cut,
    export_review_queue,
    fit_selection_cut,
    score_dataset,
    slice_stats,
)

__version__ = "0.1.0"
