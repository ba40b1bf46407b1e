"""Pseudo-supervised contrastive meta-learning at desk scale."""
from ._backend import BACKEND
from .assignment import brute_force_assignment, select_top_k, sinkhorn
from .config import TrainConfig, load_config, preset
from .data import Dataset, SyntheticSpec, load_dataset, make_synthetic
from .encoder import EncoderState, encode_key, encode_query, init_encoder, l2_normalize
from .evaluation import AdaptConfig, EvalReport, adapt, evaluate, prototype_predict, sample_episode
from .losses import contrast_loss, moco_loss, psco_loss, total_loss
from .trainer import Trainer, train, train_step

__version__ = "0.1.0"
