"""Desk-scale semi-supervised image classification: an EMA-teacher
training pipeline with confidence-weighted mixup on pseudo-labeled data."""

from .augment import AugmentPolicy, apply, center_crop, make_views
from .config import ConfigError, RunConfig, StageConfig, load_run_config
from .data import LabeledBatch, UnlabeledBatch, ViewPair, split_dataset
from .losses import LossReport, soft_target_loss, supervised_loss
from .mixup import (
    MixConfig,
    MixedBatch,
    PseudoBatch,
    mix_images,
    mix_labels,
    pair_shuffle,
    prob_pseudo_mixup,
    pseudo_mixup,
    pseudo_mixup_plus,
    sample_lambda,
)
from .pipeline import RunFailure, run_pipeline
from .schedules import ScheduleState, layer_multiplier, lr_at
from .teacher import (
    StudentState,
    TeacherState,
    ema_update,
    generate_pseudo_labels,
    semi_step,
)
from .vit import TinyViT, ViTConfig, param_groups

__version__ = "0.1.0"
