"""Tri-modal (image, text, metadata) cross-contrastive pre-training for fine-grained classification."""
__version__ = "0.1.0"

from .autodiff import Tensor, backward
from .data import Dataset, SpeciesSpec, default_specs, generate, load_table, write_table
from .encoders import EncoderConfig, MetaInput, ModelParams, encode_meta_features
from .evaluation import EvalReport, GridSpec, class_heatmap, evaluate, export_location_embeddings, run_ablation
from .loss import LossBreakdown, Temperature, build_positive_mask, pair_loss, total_loss, two_term_loss
from .training import Adam, AdamW, TrainConfig, finetune, predict, pretrain
