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
Spatial-aware pooling.

Pooled human and object features are merged by an MLP, enriched with image context by a
single cross-attention layer (query: merged feature, keys and values: every feature-map
cell), summed with an embedding of the 7-dimensional pairwise spatial vector, and passed
through a normalised output MLP. Two heads sit on top: interactiveness (one logit) and
the projection into the language model embedding space.
"""

# standard
from collections.abc import Sequence
from contextlib import nullcontext

# 3rd party
import torch
from torch import nn

# package
from da_hoi_tools.core.backbone import FeatureMap, build_interaction_feature, roi_align_many
from da_hoi_tools.core.errors import ConfigError, ShapeError
from da_hoi_tools.core.geometry import BBox, iou

SPATIAL_DIM = 7


def spatial_vector(human: BBox, obj: BBox) -> torch.Tensor:
    """Pairwise spatial vector of a human box and an object box.

    Entries: human area, object area, human aspect ratio (w / h), object aspect ratio,
    IoU, horizontal offset ``(x_h - x_o) / w_h`` and vertical offset ``(y_h - y_o) / h_h``.

    :param human: human box
    :type human: BBox
    :param obj: object box
    :type obj: BBox
    :return: float64 tensor of shape (7,)
    :rtype: torch.Tensor
    """
    return torch.tensor(
        [
            human.w * human.h,
            obj.w * obj.h,
            human.w / human.h,
            obj.w / obj.h,
            iou(human, obj),
            (human.cx - obj.cx) / human.w,
            (human.cy - obj.cy) / human.h,
        ],
        dtype=torch.float64,
    )


def spatial_vectors(humans: Sequence[BBox], objects: Sequence[BBox]) -> torch.Tensor:
    """Stacked spatial vectors, shape (N, 7)."""
    if len(humans) != len(objects):
        raise ShapeError(f"{len(humans)} human boxes for {len(objects)} object boxes")
    if not humans:
        return torch.zeros((0, SPATIAL_DIM), dtype=torch.float64)
    return torch.stack([spatial_vector(h, o) for h, o in zip(humans, objects, strict=True)])


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, out_dim))


class SpatialAwarePooling(nn.Module):
    """Interaction feature extractor with interactiveness and projection heads.

    :param feature_dim: visual feature dimension d
    :param sap_dim: interaction feature dimension d_s
    :param lm_dim: language model embedding dimension d_lm
    :param pool_size: ROIAlign output size P
    :param n_heads: cross-attention heads
    :param use_spatial: enable the spatial-vector pathway
    :param use_cross_attention: enable the cross-attention pathway
    :param log_area: log-transform the two area entries of the spatial vector
    """

    def __init__(
        self,
        feature_dim: int = 64,
        sap_dim: int = 64,
        lm_dim: int = 64,
        pool_size: int = 2,
        n_heads: int = 4,
        use_spatial: bool = True,
        use_cross_attention: bool = True,
        log_area: bool = True,
        mlp_ratio: int = 4,
    ):
        super().__init__()
        if sap_dim % n_heads:
            raise ConfigError(f"sap_dim ({sap_dim}) must be divisible by n_heads ({n_heads})")
        self.feature_dim = feature_dim
        self.sap_dim = sap_dim
        self.lm_dim = lm_dim
        self.pool_size = pool_size
        self.n_heads = n_heads
        self.use_spatial = use_spatial
        self.use_cross_attention = use_cross_attention
        self.log_area = log_area

        hidden = mlp_ratio * sap_dim
        self.merge = _mlp(2 * pool_size * pool_size * feature_dim, hidden, sap_dim)
        self.cross_attention = nn.MultiheadAttention(
            sap_dim, n_heads, kdim=feature_dim, vdim=feature_dim, batch_first=True
        )
        self.spatial = _mlp(SPATIAL_DIM, hidden, sap_dim)
        self.out_norm = nn.LayerNorm(sap_dim)
        self.out_mlp = _mlp(sap_dim, hidden, sap_dim)
        self.interactiveness_head = nn.Linear(sap_dim, 1)
        self.projection = nn.Linear(sap_dim, lm_dim)

    def init_weights(self, seed: int = 0) -> "SpatialAwarePooling":
        """Truncated normal (std 0.02) weights, zero biases, unit norm scales."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for name, param in self.named_parameters():
                if name == "out_norm.weight":
                    nn.init.ones_(param)
                elif name.endswith("bias"):
                    nn.init.zeros_(param)
                else:
                    nn.init.trunc_normal_(param, std=0.02, a=-0.04, b=0.04)
        return self

    def spatial_input(self, u: torch.Tensor) -> torch.Tensor:
        """Spatial vector as fed to the spatial MLP."""
        if not self.log_area:
            return u
        return torch.cat([torch.log(u[..., :2]), u[..., 2:]], dim=-1)

    def _attend(self, merged: torch.Tensor, cells: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # merged (N, d_s), cells (N, HW, d) -> context (N, d_s), weights (N, HW)
        context, weights = self.cross_attention(
            merged.unsqueeze(1), cells, cells, need_weights=True, average_attn_weights=True
        )
        return context[:, 0], weights[:, 0]

    def forward(
        self, inter_tokens: torch.Tensor, u: torch.Tensor, cells: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Batched forward pass.

        :param inter_tokens: concatenated pooled features, (N, 2 * P * P, d)
        :type inter_tokens: torch.Tensor
        :param u: spatial vectors, (N, 7)
        :type u: torch.Tensor
        :param cells: feature-map cells, (HW, d) shared by all pairs or (N, HW, d)
        :type cells: torch.Tensor
        :raises ShapeError: inconsistent shapes
        :return: interaction features (N, d_s) and attention weights (N, HW), the latter
            None when cross attention is disabled
        :rtype: tuple[torch.Tensor, torch.Tensor | None]
        """
        n_tokens = 2 * self.pool_size * self.pool_size
        if inter_tokens.dim() != 3 or inter_tokens.shape[1:] != (n_tokens, self.feature_dim):
            raise ShapeError(
                f"Expected interaction tokens (N, {n_tokens}, {self.feature_dim}), got {tuple(inter_tokens.shape)}"
            )
        n = inter_tokens.shape[0]
        if u.shape != (n, SPATIAL_DIM):
            raise ShapeError(f"Expected spatial vectors ({n}, {SPATIAL_DIM}), got {tuple(u.shape)}")
        if cells.dim() == 2:
            cells = cells.unsqueeze(0).expand(n, -1, -1)
        if cells.dim() != 3 or cells.shape[0] != n or cells.shape[2] != self.feature_dim:
            raise ShapeError(f"Expected feature cells (N, HW, {self.feature_dim}), got {tuple(cells.shape)}")

        dtype = self.merge[0].weight.dtype
        hidden = self.merge(inter_tokens.reshape(n, -1).to(dtype))
        weights = None
        if self.use_cross_attention:
            context, weights = self._attend(hidden, cells.to(dtype))
            hidden = hidden + context
        if self.use_spatial:
            hidden = hidden + self.spatial(self.spatial_input(u.to(dtype)))
        return self.out_mlp(self.out_norm(hidden)), weights

    def interactiveness(self, f_inter: torch.Tensor) -> torch.Tensor:
        """Sigmoid of a single linear layer, shape (N,) for (N, d_s) input."""
        return torch.sigmoid(self.interactiveness_head(f_inter)).squeeze(-1)

    def project_to_lm(self, f_inter: torch.Tensor) -> torch.Tensor:
        """One language-model token embedding per interaction feature."""
        return self.projection(f_inter)


def pair_inputs(
    f_img: FeatureMap, humans: Sequence[BBox], objects: Sequence[BBox], pool_size: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Interaction tokens (N, 2 * P * P, d) and spatial vectors (N, 7) for a batch of pairs."""
    f_h = roi_align_many(f_img, list(humans), pool_size)
    f_o = roi_align_many(f_img, list(objects), pool_size)
    return build_interaction_feature(f_h, f_o), spatial_vectors(humans, objects)


def sap_forward(
    sap: SpatialAwarePooling,
    f_img: FeatureMap,
    humans: Sequence[BBox],
    objects: Sequence[BBox],
    grad: bool = False,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Run SAP on every (human, object) box pair of one image.

    :return: interaction features (N, d_s) and attention weights (N, H_f * W_f) or None
    :rtype: tuple[torch.Tensor, torch.Tensor | None]
    """
    with nullcontext() if grad else torch.no_grad():
        tokens, u = pair_inputs(f_img, humans, objects, sap.pool_size)
        return sap(tokens, u, f_img.cells())


def attention_map(
    sap: SpatialAwarePooling, f_img: FeatureMap, human: BBox, obj: BBox
) -> torch.Tensor:
    """Cross-attention weights of one pair over the feature grid, shape (H_f, W_f).

    :raises ConfigError: cross attention is disabled
    """
    if not sap.use_cross_attention:
        raise ConfigError("Attention maps need cross attention, which is disabled in this model")
    _, weights = sap_forward(sap, f_img, [human], [obj])
    return weights[0].reshape(f_img.height, f_img.width)
