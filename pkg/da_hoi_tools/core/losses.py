# -----------------------------------------------------------------------------
# Copyright (C) 2025-2026, DA-HOI Tools contributors
# This file is part of DA-HOI Tools.
#
# DA-HOI Tools is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# DA-HOI Tools is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with DA-HOI Tools.  If not, see <https://www.gnu.org/licenses/>.
# -----------------------------------------------------------------------------

#! python3  # noqa: E265

"""
Binary focal losses for both training stages.
"""

# standard
from collections.abc import Sequence

# 3rd party
import torch

# package
from da_hoi_tools.core.errors import InvalidBatchError, ShapeError

PROB_EPS = 1e-6
DEFAULT_ALPHA = 0.25
DEFAULT_GAMMA = 2.0


def focal_bce(
    p: torch.Tensor | float,
    y: torch.Tensor | float,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
) -> torch.Tensor:
    """Element-wise binary focal loss.

    ``y = 1``: ``-alpha * (1 - p)^gamma * log(p)``;
    ``y = 0``: ``-(1 - alpha) * p^gamma * log(1 - p)``.
    Arguments of the logarithms are floored at ``eps``, so a perfect
    prediction costs exactly zero.

    :param p: predicted probabilities in [0, 1]
    :type p: torch.Tensor | float
    :param y: binary labels, same shape
    :type y: torch.Tensor | float
    :param alpha: positive-class weight
    :type alpha: float
    :param gamma: focusing exponent
    :type gamma: float
    :return: non-negative losses, same shape as ``p``
    :rtype: torch.Tensor
    """
    p = torch.as_tensor(p, dtype=torch.get_default_dtype()) if not torch.is_tensor(p) else p
    y = torch.as_tensor(y, dtype=p.dtype) if not torch.is_tensor(y) else y.to(p.dtype)
    log_p = torch.log(p.clamp_min(PROB_EPS))
    log_not_p = torch.log((1.0 - p).clamp_min(PROB_EPS))
    positive = -alpha * (1.0 - p).pow(gamma) * log_p
    negative = -(1.0 - alpha) * p.pow(gamma) * log_not_p
    return torch.where(y > 0.5, positive, negative)


def stage1_loss(
    scores: torch.Tensor,
    labels: torch.Tensor,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
) -> torch.Tensor:
    """Mean focal loss of interactiveness scores over a batch of pairs.

    :raises InvalidBatchError: empty batch
    :raises ShapeError: scores and labels differ in shape
    """
    if scores.numel() == 0:
        raise InvalidBatchError("Stage-1 batch is empty")
    if scores.shape != labels.shape:
        raise ShapeError(f"{tuple(scores.shape)} scores for {tuple(labels.shape)} labels")
    return focal_bce(scores, labels, alpha, gamma).mean()


def stage2_loss(
    score_vectors: Sequence[torch.Tensor],
    label_vectors: Sequence[torch.Tensor],
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
) -> torch.Tensor:
    """Double mean of focal losses over pairs, then over each pair's candidates.

    Pairs may have candidate lists of different lengths.

    :raises InvalidBatchError: empty batch
    :raises ShapeError: a score vector and its label vector differ in length
    """
    if not score_vectors:
        raise InvalidBatchError("Stage-2 batch is empty")
    if len(score_vectors) != len(label_vectors):
        raise ShapeError(f"{len(score_vectors)} score vectors for {len(label_vectors)} label vectors")
    per_pair = []
    for scores, labels in zip(score_vectors, label_vectors, strict=True):
        labels = torch.as_tensor(labels)
        if scores.shape != labels.shape or scores.numel() == 0:
            raise ShapeError(f"Score vector {tuple(scores.shape)} does not match labels {tuple(labels.shape)}")
        per_pair.append(focal_bce(scores, labels, alpha, gamma).mean())
    return torch.stack(per_pair).mean()
