"""Attentive proposal fusion and cosine-margin loss for few-shot heads."""

from ._agcm import (
    AgcmError,
    attention_weights,
    class_cosines,
    confusion_percentage,
    cosine_sim,
    forgetting,
    fuse,
    fuse_vjp,
    generate,
    gradcheck,
    log_sum_exp,
    loss_forward,
    loss_vjp,
    margin_logits,
    neg_euclidean_sim,
    pearson_sim,
    run,
    softmax,
)

__all__ = [
    "AgcmError",
    "attention_weights",
    "class_cosines",
    "confusion_percentage",
    "cosine_sim",
    "forgetting",
    "fuse",
    "fuse_vjp",
    "generate",
    "gradcheck",
    "log_sum_exp",
    "loss_forward",
    "loss_vjp",
    "margin_logits",
    "neg_euclidean_sim",
    "pearson_sim",
    "run",
    "softmax",
]
