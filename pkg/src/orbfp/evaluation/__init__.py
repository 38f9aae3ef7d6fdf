"""Verification metrics, sliced reports and figures."""

from .metrics import (
    RocCurve,
    VerificationDecision,
    anchored_roc,
    anchored_verify,
    auc_rank,
    batched_pairwise_roc,
    eer,
    pairwise_roc,
    roc_from_scores,
    spoof_roc_from_embeddings,
)

__all__ = [
    "RocCurve",
    "VerificationDecision",
    "anchored_roc",
    "anchored_verify",
    "auc_rank",
    "batched_pairwise_roc",
    "eer",
    "pairwise_roc",
    "roc_from_scores",
    "spoof_roc_from_embeddings",
]
