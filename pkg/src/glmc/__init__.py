"""Global/local mixture consistency with cumulative class-balanced reweighting
for long-tailed image classification."""

from .longtail_data import (ClassFrequencyTable, ImbalanceSpec, LabeledDataset,
                            build_longtail_subset, compute_class_counts, imbalance_factor)
from .rebalance import RebalanceConfig, alpha, class_weights
from .samplers import Sampler, SamplerConfig, class_sampling_probs
from .mixing import MixingConfig, cutmix, make_mixed_batch, mixup, sample_cutbox, sample_lambda
from .models import GLMCNet, NetworkSpec
from .losses import (consistency_loss, mixed_cross_entropy, negative_cosine,
                     rebalanced_cross_entropy, total_loss)
from .maxnorm import MaxNormConfig, finetune_classifier, project_weights
from .evaluation import EvalReport, assign_groups, evaluate
from .config import ExperimentConfig, load_config
from .trainer import train, train_baseline_ce

__version__ = "0.1.0"
