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
Model bundle: frozen visual encoder, spatial-aware pooling and the language model with its
low-rank adapters, plus the tokenizer and taxonomy they were built for.
"""

# standard
from collections.abc import Sequence
from contextlib import nullcontext
from dataclasses import dataclass

# 3rd party
import numpy as np
import torch
from torch import nn

# package
from da_hoi_tools.core.backbone import FeatureCache, FeatureMap, ToyPatchEncoder, build_interaction_feature, roi_align
from da_hoi_tools.core.backends import ToyLMBackend
from da_hoi_tools.core.errors import ConfigError
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.language_model import ToyCausalLM, apply_low_rank, base_parameters, low_rank_parameters
from da_hoi_tools.core.prompts import DEFAULT_TEMPLATE_VERSION, template_texts
from da_hoi_tools.core.sap import SpatialAwarePooling, sap_forward
from da_hoi_tools.core.taxonomy import Taxonomy
from da_hoi_tools.core.tokenizer import Tokenizer

BLOB_KEYS = ("encoder", "sap", "lm_base", "lm_lowrank")
PROJECTION_PREFIX = "projection."


@dataclass
class ModelConfig:
    """Architecture hyper-parameters, echoed into every checkpoint."""

    feature_dim: int = 64
    stride: int = 8
    encoder_seed: int = 0
    sap_dim: int = 64
    sap_heads: int = 4
    pool_size: int = 2
    use_spatial: bool = True
    use_cross_attention: bool = True
    log_area: bool = True
    lm_dim: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    lowrank_rank: int = 8
    lowrank_alpha: float = 16.0
    pool_image_tokens: bool = False
    template_version: str = DEFAULT_TEMPLATE_VERSION
    seed: int = 0

    def __post_init__(self):
        for name in ("feature_dim", "stride", "sap_dim", "sap_heads", "pool_size", "lm_dim", "lm_layers", "lm_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.lowrank_rank < 1:
            raise ConfigError(f"ModelConfig.lowrank_rank must be >= 1, got {self.lowrank_rank}")


@dataclass
class PairFeatures:
    """SAP outputs for the pairs of one image."""

    f_inter: torch.Tensor
    interactiveness: torch.Tensor
    attention: torch.Tensor | None

    def __len__(self) -> int:
        return self.f_inter.shape[0]


class HoiModel(nn.Module):
    """Everything a checkpoint holds, as one module.

    :param config: architecture
    :type config: ModelConfig
    :param taxonomy: taxonomy the model was built for
    :type taxonomy: Taxonomy
    :param tokenizer: tokenizer, built from the templates and the taxonomy when None
    :type tokenizer: Tokenizer | None
    """

    def __init__(self, config: ModelConfig, taxonomy: Taxonomy, tokenizer: Tokenizer | None = None):
        super().__init__()
        self.config = config
        self.taxonomy = taxonomy
        self.tokenizer = tokenizer or Tokenizer.build(
            [*template_texts(config.template_version), *taxonomy.phrases()]
        )
        self.encoder = ToyPatchEncoder(dim=config.feature_dim, stride=config.stride, seed=config.encoder_seed)
        self.image_adapter = nn.Linear(config.feature_dim, config.lm_dim)
        self.sap = SpatialAwarePooling(
            feature_dim=config.feature_dim,
            sap_dim=config.sap_dim,
            lm_dim=config.lm_dim,
            pool_size=config.pool_size,
            n_heads=config.sap_heads,
            use_spatial=config.use_spatial,
            use_cross_attention=config.use_cross_attention,
            log_area=config.log_area,
        ).init_weights(config.seed)
        self.lm = ToyCausalLM(
            self.tokenizer.vocab_size, dim=config.lm_dim, n_layers=config.lm_layers, n_heads=config.lm_heads
        ).init_weights(config.seed + 1)
        apply_low_rank(self.lm, rank=config.lowrank_rank, alpha=config.lowrank_alpha, seed=config.seed + 2)

        generator = torch.Generator().manual_seed(config.encoder_seed + 1)
        with torch.no_grad():
            self.image_adapter.weight.copy_(
                torch.randn(self.image_adapter.weight.shape, generator=generator) / config.feature_dim**0.5
            )
            self.image_adapter.bias.zero_()
        self.freeze_all()
        self.feature_cache = FeatureCache.from_settings()

    # -- trainable groups ----------------------------------------------------

    def freeze_all(self) -> None:
        self.requires_grad_(False)

    def set_trainable(self, groups: Sequence[str], freeze_projection: bool = False) -> list[nn.Parameter]:
        """Freeze everything, then unfreeze the named groups.

        Groups: ``"sap"`` (without the projection), ``"projection"``, ``"lowrank"``,
        ``"lm_base"``, ``"encoder"``.

        :return: parameters left trainable
        :rtype: list[nn.Parameter]
        """
        self.freeze_all()
        params: list[nn.Parameter] = []
        for group in groups:
            if group == "sap":
                chosen = [p for n, p in self.sap.named_parameters() if not n.startswith(PROJECTION_PREFIX)]
            elif group == "projection":
                chosen = [] if freeze_projection else list(self.sap.projection.parameters())
            elif group == "lowrank":
                chosen = list(low_rank_parameters(self.lm).values())
            elif group == "lm_base":
                chosen = list(base_parameters(self.lm).values())
            elif group == "encoder":
                chosen = [*self.encoder.parameters(), *self.image_adapter.parameters()]
            else:
                raise ConfigError(f"Unknown parameter group '{group}'")
            for p in chosen:
                p.requires_grad_(True)
            params.extend(chosen)
        return params

    def blob_tensors(self) -> dict[str, dict[str, torch.Tensor]]:
        """Parameters split by checkpoint blob.

        The projection layer is stored with the stage-2 trainables.
        """
        sap = {n: p for n, p in self.sap.state_dict().items() if not n.startswith(PROJECTION_PREFIX)}
        lowrank = dict(low_rank_parameters(self.lm))
        lowrank.update({n: p for n, p in self.sap.state_dict().items() if n.startswith(PROJECTION_PREFIX)})
        encoder = {f"patch.{n}": p for n, p in self.encoder.state_dict().items()}
        encoder.update({f"adapter.{n}": p for n, p in self.image_adapter.state_dict().items()})
        return {
            "encoder": {n: t.detach() for n, t in encoder.items()},
            "sap": {n: t.detach() for n, t in sap.items()},
            "lm_base": {n: t.detach() for n, t in base_parameters(self.lm).items()},
            "lm_lowrank": {n: t.detach() for n, t in lowrank.items()},
        }

    @torch.no_grad()
    def load_blob_tensors(self, blobs: dict[str, dict[str, torch.Tensor]]) -> None:
        """Copy tensors produced by :meth:`blob_tensors` back into the modules."""
        current = self.blob_tensors()
        for key in BLOB_KEYS:
            expected = current[key]
            given = blobs.get(key, {})
            if set(given) != set(expected):
                raise ConfigError(f"Blob '{key}' tensor names do not match the model architecture")
            for name, tensor in given.items():
                target = expected[name]
                if tuple(target.shape) != tuple(tensor.shape):
                    raise ConfigError(f"Blob '{key}' tensor {name} has shape {tuple(tensor.shape)}, expected {tuple(target.shape)}")
                target.copy_(tensor.to(target.dtype))

    # -- forward helpers -----------------------------------------------------

    def backend(self) -> ToyLMBackend:
        return ToyLMBackend(self.lm, self.tokenizer)

    def encode(self, image: np.ndarray) -> FeatureMap:
        if self.feature_cache is not None:
            return self.feature_cache.encode(self.encoder, image)
        return self.encoder.encode(image)

    def image_tokens(self, f_img: FeatureMap) -> torch.Tensor:
        """Image embedding span for prompts, (H_f * W_f, d_lm) or (1, d_lm) when pooled."""
        cells = f_img.cells()
        if self.config.pool_image_tokens:
            cells = cells.mean(dim=0, keepdim=True)
        return self.image_adapter(cells)

    def roi_tokens(self, f_img: FeatureMap, human: BBox, obj: BBox) -> torch.Tensor:
        """Training-free interaction span: adapted pooled features, (2 * P * P, d_lm)."""
        pool = self.config.pool_size
        tokens = build_interaction_feature(roi_align(f_img, human, pool), roi_align(f_img, obj, pool))
        return self.image_adapter(tokens)

    def pair_features(
        self, f_img: FeatureMap, humans: Sequence[BBox], objects: Sequence[BBox], grad: bool = False
    ) -> PairFeatures:
        with nullcontext() if grad else torch.no_grad():
            f_inter, attention = sap_forward(self.sap, f_img, humans, objects, grad=grad)
            return PairFeatures(f_inter=f_inter, interactiveness=self.sap.interactiveness(f_inter), attention=attention)

    def inter_token(self, f_inter: torch.Tensor) -> torch.Tensor:
        """Projected single-token span (1, d_lm) for one interaction feature (d_s,)."""
        return self.sap.project_to_lm(f_inter).unsqueeze(0)
