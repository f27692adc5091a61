"""Noise-robust training by attribution-guided partitioning, selective
neuron pruning and anchored fine-tuning, on small dense networks."""

from .config import ExperimentConfig, load_config
from .data import Dataset, NoiseSpec, gen_blobs, inject_feature_noise, inject_label_noise, load_csv, save_csv
from .nn import FnnModel, ForwardTrace, ParamAnchor, activation_gradient, apply_prune_mask, forward, load_model, save_model, train
from .pipeline import RunRecord, run_pipeline, run_sweep

__version__ = "0.1.0"
