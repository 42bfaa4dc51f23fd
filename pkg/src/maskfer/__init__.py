"""Sigmoid-mask gating over frozen embeddings for domain-generalizable
classification, with a cross-domain train/evaluate harness."""

from .feature_store import (
    Batch,
    FeatureDataset,
    FeatureFileError,
    ValidationError,
    make_batches,
    read_feature_file,
    write_feature_file,
)
from .frozen import FileBackedProvider, FrozenProvider, RandomProjectionProvider
from .channels import (
    ChannelPartition,
    DropMask,
    div_loss,
    sample_drop_mask,
    sep_logits,
    sep_loss,
    split_channels,
)
from .network import MaskNetwork, adapt_dim
from .optim import AdamState, grad_check
from .training import (
    TrainConfig,
    dump_masks,
    evaluate_cross_domain,
    predict,
    run_ablation,
    train,
)
from .benchmark import BenchmarkSpec, generate, nearest_mean_oracle, write_benchmark

__version__ = "0.1.0"
