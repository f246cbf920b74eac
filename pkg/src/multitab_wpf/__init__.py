"""Multi-tab webpage fingerprinting toolkit.

Trace augmentation, a convolutional encoder trained with a multi-label
proxy/sample metric loss, and a dual k-NN identifier over the learned
embedding space, plus metrics and a synthetic traffic generator.
"""

from .augment import AugmentationConfig, Burst, augment_dataset, exchange_bursts, extract_bursts, merge_traces
from .encoder import DFEncoder, EncoderConfig, encode, parameter_manifest
from .evaluation import EvalReport, ap_at_k, evaluate, precision_at_t, recall_at_k
from .identify import (
    IdentificationIndex,
    combine_and_decide,
    cosine_distance,
    proxy_scores,
    rank_classes,
    sample_scores,
    score_batch,
)
from .losses import (
    LossConfig,
    ProxySet,
    combined_loss,
    cosine_similarity,
    mine_irrelevant_pairs,
    proxy_loss,
    sample_loss,
)
from .pipeline import ABLATIONS, run_ablation, run_pipeline
from .synth import SynthConfig, generate_multi_tab, generate_sessions, generate_single_tab, raw_feature_baseline
from .trainer import AugmentPlan, IdentifyConfig, TrainConfig, build_index, embed_dataset, train
from .traces import Dataset, Trace, filter_short, load_dataset, save_dataset, split_dataset, to_model_input

__version__ = "0.1.0"
