"""Auxiliary training losses and the weighted total.

The functions only use arithmetic and ``.sum()``/``.mean()``, so they accept
numpy arrays and floats as well as torch tensors (gradients flow for the latter).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

import numpy as np

DEFAULT_WEIGHTS = {"simple": 1.0, "sync": 0.1, "emo": 0.1, "au": 0.1, "attr": 0.05}


class LossError(ValueError):
    pass


def _scalar(x) -> float:
    return float(x.detach()) if hasattr(x, "detach") else float(x)


@dataclass(frozen=True)
class SyncEstimate:
    """Audio-visual offset magnitude and the time of the misalignment, both in seconds."""

    offset_magnitude: object
    timestamp: object

    def __post_init__(self):
        value = _scalar(self.offset_magnitude)
        if value < 0:
            raise LossError(f"offset magnitude must be >= 0, got {value}")


@dataclass(frozen=True)
class AUMatrix:
    values: object  # [T, N]
    au_ids: tuple

    def __post_init__(self):
        if len(self.values.shape) != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise LossError(f"AU matrix must be [T >= 1, N >= 1], got {tuple(self.values.shape)}")
        if self.values.shape[1] != len(self.au_ids):
            raise LossError(f"{self.values.shape[1]} AU columns but {len(self.au_ids)} ids")


@dataclass(frozen=True)
class CaptionEmbedding:
    vector: object

    @property
    def norm(self):
        return (self.vector * self.vector).sum() ** 0.5


def sync_loss(pred: SyncEstimate, gt: SyncEstimate):
    return (pred.offset_magnitude - gt.offset_magnitude) ** 2 + (pred.timestamp - gt.timestamp) ** 2


def _pairs(seq):
    return seq.pairs if hasattr(seq, "pairs") else seq


def emo_loss(pred_seq, gt_seq):
    """Mean over segments of squared valence plus squared arousal differences."""
    p, g = _pairs(pred_seq), _pairs(gt_seq)
    if p.shape[0] != g.shape[0]:
        raise LossError(f"segment count mismatch: {p.shape[0]} vs {g.shape[0]}; resample first")
    if p.shape[0] < 1:
        raise LossError("emo loss needs at least one segment")
    d = p - g
    return (d * d).sum() / p.shape[0]


def au_loss(pred: AUMatrix, gt: AUMatrix):
    if tuple(pred.values.shape) != tuple(gt.values.shape):
        raise LossError(f"AU shape mismatch: {tuple(pred.values.shape)} vs {tuple(gt.values.shape)}")
    if tuple(pred.au_ids) != tuple(gt.au_ids):
        raise LossError(f"AU id mismatch: {pred.au_ids} vs {gt.au_ids}")
    d = pred.values - gt.values
    return (d * d).mean()


def attr_action_loss(e_p, e_gt):
    """1 - cosine similarity of two caption embeddings."""
    a = e_p.vector if isinstance(e_p, CaptionEmbedding) else e_p
    b = e_gt.vector if isinstance(e_gt, CaptionEmbedding) else e_gt
    na = (a * a).sum() ** 0.5
    nb = (b * b).sum() ** 0.5
    if _scalar(na) == 0.0 or _scalar(nb) == 0.0:
        raise LossError("cosine distance is undefined for a zero-norm embedding")
    return 1.0 - (a * b).sum() / (na * nb)


def diffusion_simple_loss(eps_pred, eps):
    if tuple(eps_pred.shape) != tuple(eps.shape):
        raise LossError(f"shape mismatch: {tuple(eps_pred.shape)} vs {tuple(eps.shape)}")
    d = eps_pred - eps
    return (d * d).mean()


def total_loss(components: Mapping[str, object], weights: Mapping[str, float]):
    """Weighted sum; returns (total, report) where report has one row per component."""
    for name, w in weights.items():
        if w < 0:
            raise LossError(f"weight for {name!r} is negative ({w})")
    total = 0.0
    report = []
    for name, value in components.items():
        w = float(weights.get(name, 0.0))
        weighted = w * value
        total = total + weighted
        report.append({"component": name, "raw": _scalar(value), "weight": w, "weighted": _scalar(weighted)})
    return total, report


def write_loss_report(fh: IO[str], step: int, report: Sequence[dict]) -> None:
    for row in report:
        fh.write(json.dumps({"step": step, **row}, sort_keys=True) + "\n")


def check_finite(components: Mapping[str, object], step: int | None = None) -> None:
    for name, value in components.items():
        if not np.isfinite(_scalar(value)):
            where = "" if step is None else f" at step {step}"
            raise FloatingPointError(f"loss component {name!r} is not finite{where}")
