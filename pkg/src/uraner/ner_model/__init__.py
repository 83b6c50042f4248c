"""Encoder + CRF tagger with concatenation, pre-infusion and post-infusion variants."""

from .crf import crf_log_partition, crf_marginals, crf_nll, crf_nll_tensor, crf_viterbi, path_score
from .model import (
    MODES,
    ContextOverflow,
    EncodedInput,
    ModelConfig,
    ModelParams,
    Vocab,
    Weights,
    anchor_vectors,
    encode,
    fit_bundle,
    forward,
    forward_baseline,
    forward_post_infusion,
    forward_pre_infusion,
    forward_raner,
    load_params,
    save_params,
)
from .training import AdamW, TrainConfig, TrainResult, predict, train, warmup_decay

__all__ = [
    "MODES", "AdamW", "ContextOverflow", "EncodedInput", "ModelConfig", "ModelParams", "TrainConfig",
    "TrainResult", "Vocab", "Weights", "anchor_vectors", "crf_log_partition", "crf_marginals", "crf_nll",
    "crf_nll_tensor", "crf_viterbi", "encode", "fit_bundle", "forward", "forward_baseline",
    "forward_post_infusion", "forward_pre_infusion", "forward_raner", "load_params", "path_score",
    "predict", "save_params", "train", "warmup_decay",
]
