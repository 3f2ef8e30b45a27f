"""Per-region scoring head with smooth log-sum-exp aggregation.

A 1x1 kernel scores every spatial cell; a per-location softmax yields class
scores in [0, 1] (class 0 = low aesthetics, 1 = high). The image-level score
per class is the LSE pool of the cell scores, converted to probabilities by a
two-way softmax. The regression variant scores one channel through a sigmoid
and pools the same way.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv2d
from .tensor import Tensor


def lse_aggregate(scores: Tensor, r: float) -> Tensor:
    """Pool the two trailing spatial axes: (1/r) log mean exp(r * scores).

    Lies between the mean (r -> 0) and the max (r -> inf) of the map.
    """
    return T.lse_pool(scores, r)


def image_probabilities(y0: float, y1: float) -> tuple[float, float]:
    """Two-way softmax over per-class aggregated scores."""
    m = max(y0, y1)
    e0, e1 = np.exp(y0 - m), np.exp(y1 - m)
    total = e0 + e1
    return float(e0 / total), float(e1 / total)


def classify(p0: float, p1: float) -> int:
    """Deterministic decision: class 1 only if strictly more probable."""
    return 1 if p1 > p0 else 0


class ScoringHead:
    def __init__(self, channels: int, rng: np.random.Generator, classes: int = 2):
        if classes not in (1, 2):
            raise ValueError("head supports 2 classes or 1 regression channel")
        self.classes = classes
        self.conv = Conv2d(rng, channels, classes, 1)

    def region_scores(self, fmap: Tensor) -> Tensor:
        """Per-location class scores (B, 2, H, W); each location sums to 1."""
        if self.classes != 2:
            raise ValueError("region_scores requires a 2-class head")
        logits = self.conv.forward(fmap)
        scores = T.softmax_rows(T.permute(logits, (0, 2, 3, 1)))
        return T.permute(scores, (0, 3, 1, 2))

    def class_scores(self, fmap: Tensor, r: float) -> tuple[Tensor, Tensor, Tensor]:
        """Region scores, aggregated per-class scores, image probabilities."""
        region = self.region_scores(fmap)
        y = lse_aggregate(region, r)       # (B, 2)
        probs = T.softmax_rows(y)
        return region, y, probs

    def regress_score(self, fmap: Tensor, r: float) -> Tensor:
        """Image-level score in [0, 1]: sigmoid per cell, then LSE pooling."""
        if self.classes != 1:
            raise ValueError("regress_score requires a 1-channel head")
        cells = T.sigmoid(self.conv.forward(fmap))   # (B, 1, H, W)
        pooled = lse_aggregate(cells, r)             # (B, 1)
        return T.reshape(pooled, (fmap.shape[0],))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return self.conv.named_params(f"{prefix}/conv")

    def named_state(self, prefix: str) -> dict:
        return {}
