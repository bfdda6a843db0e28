"""Uncertainty-aware ordinal severity grading for retinal images."""

__version__ = "0.1.0"

from .imageio import Image, load_image, save_image_png
from .imageqc import QcVerdict, crop_fundus, laplacian_variance, mean_brightness, qc_gate
from .augment import AugmentConfig, apply_clahe, apply_photometric, cutmix, mixup
from .ordinal import ClassDistribution, OrdinalTargets, decode, encode_hard, encode_soft, predict_grade
from .evidential import AnnealSchedule, EvidenceHead, EvidentialOutput, edl_loss, kl_to_uniform, lambda_at
from .backbone import FeatureMap, StandinBackbone, TokenSet, select_stage
from .lqap import (AttentionRecord, LesionQueryPooler, QuerySet,
                   diversity_loss, load_balance_loss, spatial_entropy_penalty)
from .metrics import ConfusionMatrix, EvalReport, build_report, quadratic_weighted_kappa
from .model import GradingModel
from .data import Dataset, SyntheticSpec, make_synthetic
from .trainer import TrainConfig, TrainState, evaluate, train

__all__ = [
    "Image", "load_image", "save_image_png",
    "QcVerdict", "crop_fundus", "laplacian_variance", "mean_brightness", "qc_gate",
    "AugmentConfig", "apply_clahe", "apply_photometric", "cutmix", "mixup",
    "ClassDistribution", "OrdinalTargets", "decode", "encode_hard", "encode_soft", "predict_grade",
    "AnnealSchedule", "EvidenceHead", "EvidentialOutput", "edl_loss", "kl_to_uniform", "lambda_at",
    "FeatureMap", "StandinBackbone", "TokenSet", "select_stage",
    "AttentionRecord", "LesionQueryPooler", "QuerySet",
    "diversity_loss", "load_balance_loss", "spatial_entropy_penalty",
    "ConfusionMatrix", "EvalReport", "build_report", "quadratic_weighted_kappa",
    "GradingModel", "Dataset", "SyntheticSpec", "make_synthetic",
    "TrainConfig", "TrainState", "evaluate", "train",
]
