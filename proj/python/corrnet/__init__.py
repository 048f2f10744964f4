"""Python bindings for the corrnet C++ core."""

from ._corrnet import (
    Model,
    beam_decode,
    brute_force_ctc,
    config_keys,
    corpus_wer,
    correlation,
    ctc_loss,
    default_config,
    edit_ops,
    generate_sample,
    gradcheck,
    greedy_decode,
    identification_attention,
    train,
    wer,
)

__all__ = [
    "Model",
    "beam_decode",
    "brute_force_ctc",
    "config_keys",
    "corpus_wer",
    "correlation",
    "ctc_loss",
    "default_config",
    "edit_ops",
    "generate_sample",
    "gradcheck",
    "greedy_decode",
    "identification_attention",
    "train",
    "wer",
]
