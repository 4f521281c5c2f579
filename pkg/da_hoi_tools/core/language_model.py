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
Small decoder-only transformer and low-rank adapters for its attention projections.

Linear layers start at LeCun-normal scale and the two residual output projections of each
block are further shrunk by 1/sqrt(2 * n_layers). Attention and MLP outputs are then of the
same order as the token embeddings.

The model has no position embedding table: each head adds a linear recency penalty to its
attention scores (slopes 1/2, 1/4, ...), so injected feature embeddings enter the residual
stream exactly as given.
"""

# standard
import math
from dataclasses import dataclass

# 3rd party
import torch
from torch import nn

# package
from da_hoi_tools.core.errors import ConfigError, ShapeError

LOW_RANK_TARGETS = ("q_proj", "k_proj", "v_proj", "o_proj")
RESIDUAL_OUTPUTS = ("o_proj", "mlp.2")


@dataclass
class LMOutput:
    logits: torch.Tensor
    hidden_states: torch.Tensor


class LowRankLinear(nn.Module):
    """Frozen linear layer plus a trainable update ``(alpha / r) * B @ A``.

    ``B`` starts at zero so that a freshly wrapped layer computes exactly what the base layer
    computes.

    :param base: layer to wrap
    :type base: nn.Linear
    :param rank: rank r of the update
    :type rank: int
    :param alpha: scale numerator
    :type alpha: float
    """

    def __init__(self, base: nn.Linear, rank: int = 8, alpha: float = 16.0):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"Low-rank rank must be >= 1, got {rank}")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.lora_A = nn.Parameter(torch.zeros(rank, base.in_features))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        for p in self.base.parameters():
            p.requires_grad = False

    def delta_weight(self) -> torch.Tensor:
        return self.scaling * (self.lora_B @ self.lora_A)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + ((x @ self.lora_A.T) @ self.lora_B.T) * self.scaling


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ConfigError(f"lm_dim ({dim}) must be divisible by lm_heads ({n_heads})")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.o_proj = nn.Linear(dim, dim)
        slopes = torch.tensor([2.0 ** -(h + 1) for h in range(n_heads)])
        self.register_buffer("slopes", slopes, persistent=False)

    def recency_bias(self, length: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
        """(H, T, T) additive bias: ``-slope * (i - j)`` below the diagonal, ``-inf`` above."""
        pos = torch.arange(length, device=device)
        distance = (pos[:, None] - pos[None, :]).to(dtype)
        bias = -self.slopes.to(dtype=dtype, device=device)[:, None, None] * distance
        return bias.masked_fill(distance < 0, float("-inf"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, dim = x.shape

        def heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.q_proj(x)), heads(self.k_proj(x)), heads(self.v_proj(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores + self.recency_bias(length, x.dtype, x.device)
        out = torch.softmax(scores, dim=-1) @ v
        return self.o_proj(out.transpose(1, 2).reshape(batch, length, dim))


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class ToyCausalLM(nn.Module):
    """Pre-norm decoder-only transformer working on input embeddings.

    :param vocab_size: vocabulary size
    :type vocab_size: int
    :param dim: model dimension d_lm
    :type dim: int
    :param n_layers: number of decoder blocks
    :type n_layers: int
    :param n_heads: attention heads per block
    :type n_heads: int
    """

    def __init__(self, vocab_size: int, dim: int = 64, n_layers: int = 2, n_heads: int = 4):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        self.embed = nn.Embedding(vocab_size, dim)
        self.blocks = nn.ModuleList(DecoderBlock(dim, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(dim)
        self.lm_head = nn.Linear(dim, vocab_size, bias=False)

    def init_weights(self, seed: int = 0) -> "ToyCausalLM":
        residual_scale = 1.0 / math.sqrt(2 * len(self.blocks))
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for name, module in self.named_modules():
                if isinstance(module, nn.Linear):
                    std = 1.0 / math.sqrt(module.in_features)
                    if name.endswith(RESIDUAL_OUTPUTS):
                        std *= residual_scale
                    nn.init.normal_(module.weight, std=std)
                    if module.bias is not None:
                        nn.init.zeros_(module.bias)
                elif isinstance(module, nn.Embedding):
                    nn.init.normal_(module.weight, std=1.0)
                elif isinstance(module, nn.LayerNorm):
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)
        return self

    def forward(self, inputs_embeds: torch.Tensor) -> LMOutput:
        """Run the decoder.

        :param inputs_embeds: (B, T, d_lm) or (T, d_lm)
        :type inputs_embeds: torch.Tensor
        :return: logits (B, T, V) and final normalised hidden states (B, T, d_lm)
        :rtype: LMOutput
        """
        squeeze = inputs_embeds.dim() == 2
        x = inputs_embeds.unsqueeze(0) if squeeze else inputs_embeds
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"Expected embeddings (B, T, {self.dim}), got {tuple(inputs_embeds.shape)}")
        for block in self.blocks:
            x = block(x)
        hidden = self.ln_f(x)
        logits = self.lm_head(hidden)
        if squeeze:
            return LMOutput(logits=logits[0], hidden_states=hidden[0])
        return LMOutput(logits=logits, hidden_states=hidden)


def apply_low_rank(
    model: nn.Module,
    targets: tuple[str, ...] = LOW_RANK_TARGETS,
    rank: int = 8,
    alpha: float = 16.0,
    seed: int = 0,
) -> list[str]:
    """Replace every ``nn.Linear`` whose attribute name is in ``targets`` by a :class:`LowRankLinear`.

    :return: qualified names of the wrapped layers
    :rtype: list[str]
    """
    wrapped = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for parent_name, parent in list(model.named_modules()):
            for attr, child in list(parent.named_children()):
                if attr in targets and isinstance(child, nn.Linear):
                    setattr(parent, attr, LowRankLinear(child, rank=rank, alpha=alpha))
                    wrapped.append(f"{parent_name}.{attr}" if parent_name else attr)
    return wrapped


def low_rank_parameters(model: nn.Module) -> dict[str, nn.Parameter]:
    return {n: p for n, p in model.named_parameters() if ".lora_" in n or n.startswith("lora_")}


def base_parameters(model: nn.Module) -> dict[str, nn.Parameter]:
    lowrank = low_rank_parameters(model)
    return {n: p for n, p in model.named_parameters() if n not in lowrank}
