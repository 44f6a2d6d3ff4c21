"""Evaluation metrics: ROC AUC, TPR at a fixed FPR, bit/word accuracy and
image-distortion measures.

Scores follow the convention higher = more watermark-like; detections are
scored as -log p so p-values far below machine epsilon stay ranked.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from skimage.metrics import peak_signal_noise_ratio
from sklearn.metrics import roc_auc_score, roc_curve

from .errors import InvalidArgumentError
from .ring_codec import Message
from .tensors import LatentTensor


def _labelled(scores_pos: Sequence[float], scores_neg: Sequence[float]):
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgumentError("both score lists must be non-empty")
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    return labels, np.concatenate([pos, neg])


P_FLOOR = np.finfo(np.float64).tiny


def detection_score(p: float) -> float:
    """Ranking score for a p-value: -log p, with p floored at the smallest normal double."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p-value must be in [0, 1], got {p}")
    return float(-np.log(max(p, P_FLOOR)))


def auc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Mann-Whitney statistic P(pos > neg) + P(pos = neg) / 2."""
    labels, scores = _labelled(scores_pos, scores_neg)
    return float(roc_auc_score(labels, scores))


def roc_points(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> dict[str, list[float]]:
    """FPR/TPR pairs of the ROC curve, for the JSON sidecar."""
    labels, scores = _labelled(scores_pos, scores_neg)
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return {"fpr": fpr.tolist(), "tpr": tpr.tolist()}


def tpr_at_fpr(scores_pos: Sequence[float], scores_neg: Sequence[float], fpr: float = 0.01) -> float:
    """Fraction of positives strictly above the (1 - fpr) quantile of the negatives."""
    if not 0 < fpr < 1:
        raise InvalidArgumentError(f"fpr must be in (0, 1), got {fpr}")
    _labelled(scores_pos, scores_neg)
    threshold = np.quantile(np.asarray(scores_neg, dtype=np.float64), 1.0 - fpr, method="higher")
    return float(np.mean(np.asarray(scores_pos, dtype=np.float64) > threshold))


def _aligned(truth: Sequence[Message], decoded: Sequence[Message]) -> None:
    if len(truth) != len(decoded):
        raise InvalidArgumentError(f"{len(truth)} reference messages vs {len(decoded)} decoded")
    if not truth:
        raise InvalidArgumentError("no messages to compare")
    for a, b in zip(truth, decoded):
        if len(a) != len(b):
            raise InvalidArgumentError(f"message lengths differ: {len(a)} vs {len(b)}")


def bit_accuracy(truth: Sequence[Message], decoded: Sequence[Message]) -> float:
    """Fraction of bits decoded correctly, pooled over all messages."""
    _aligned(truth, decoded)
    a = np.concatenate([m.bits for m in truth])
    b = np.concatenate([m.bits for m in decoded])
    return float(np.mean(a == b))


def word_accuracy(truth: Sequence[Message], decoded: Sequence[Message]) -> float:
    """Fraction of messages decoded with every bit correct."""
    _aligned(truth, decoded)
    return float(np.mean([a == b for a, b in zip(truth, decoded)]))


def _same_shape(img_wm: LatentTensor, img_plain: LatentTensor) -> None:
    if img_wm.shape != img_plain.shape:
        raise InvalidArgumentError(f"image shapes differ: {img_wm.shape} vs {img_plain.shape}")


def distortion_proxy(img_wm: LatentTensor, img_plain: LatentTensor) -> float:
    """Root-mean-square difference over all elements."""
    _same_shape(img_wm, img_plain)
    return float(np.sqrt(np.mean((img_wm.data - img_plain.data) ** 2)))


def psnr(img_wm: LatentTensor, img_plain: LatentTensor) -> float:
    """PSNR in dB with the plain image's value range as peak; inf when identical."""
    _same_shape(img_wm, img_plain)
    data_range = float(img_plain.data.max() - img_plain.data.min())
    if data_range == 0:
        raise InvalidArgumentError("plain image is constant; PSNR needs a non-zero value range")
    if np.array_equal(img_wm.data, img_plain.data):
        return float("inf")
    return float(peak_signal_noise_ratio(img_plain.data, img_wm.data, data_range=data_range))


@dataclass(frozen=True)
class EvalSummary:
    attack: str
    auc: float
    tpr_at_1pct_fpr: float
    bit_accuracy: float
    word_accuracy: float
    mean_detection_resolution: float
    distortion_proxy: float
    trials: int

    def __post_init__(self):
        if self.word_accuracy > self.bit_accuracy:
            raise InvalidArgumentError("word accuracy cannot exceed bit accuracy")

    def to_row(self) -> dict:
        return {
            "attack": self.attack,
            "auc": self.auc,
            "tpr@1%fpr": self.tpr_at_1pct_fpr,
            "bit_acc": self.bit_accuracy,
            "word_acc": self.word_accuracy,
            "mean_R_det": self.mean_detection_resolution,
            "distortion": self.distortion_proxy,
        }

    def to_json(self) -> dict:
        return asdict(self)


def summarize(attack: str, p_wm: Sequence[float], p_plain: Sequence[float], truth: Sequence[Message],
              decoded: Sequence[Message], resolutions: Sequence[float],
              distortions: Sequence[float]) -> EvalSummary:
    """Aggregate per-trial detection records for one attack."""
    pos = [detection_score(p) for p in p_wm]
    neg = [detection_score(p) for p in p_plain]
    return EvalSummary(
        attack=attack,
        auc=auc(pos, neg),
        tpr_at_1pct_fpr=tpr_at_fpr(pos, neg, 0.01),
        bit_accuracy=bit_accuracy(truth, decoded),
        word_accuracy=word_accuracy(truth, decoded),
        mean_detection_resolution=float(np.mean(resolutions)) if len(resolutions) else float("nan"),
        distortion_proxy=float(np.mean(distortions)) if len(distortions) else float("nan"),
        trials=len(truth),
    )
