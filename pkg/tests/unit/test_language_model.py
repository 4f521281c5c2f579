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
Unit tests for tokenizer and language_model modules.
"""

import pytest
import torch

from da_hoi_tools.core import language_model
from da_hoi_tools.core.errors import ConfigError, ShapeError
from da_hoi_tools.core.language_model import LowRankLinear, ToyCausalLM
from da_hoi_tools.core.tokenizer import SPECIAL_TOKENS, Tokenizer


@pytest.mark.unit
class TestTokenizer:
    """Test the closed-vocabulary tokenizer."""

    def test_build_order(self):
        """Test special tokens come first, then letters, then sorted words."""
        tokenizer = Tokenizer.build(["riding a horse", "holding a cup"])
        assert tokenizer.tokens[: len(SPECIAL_TOKENS)] == SPECIAL_TOKENS
        assert tokenizer.tokens[len(SPECIAL_TOKENS)] == "A"
        words = tokenizer.tokens[len(SPECIAL_TOKENS) + 26 :]
        assert list(words) == sorted(words)
        assert {"riding", "holding", "horse", "cup", "a"} <= set(words)

    def test_encode_decode(self):
        """Test punctuation is split off and re-attached."""
        tokenizer = Tokenizer.build(["Select the correct interaction: holding a cup, riding a horse."])
        ids = tokenizer.encode("holding a cup, riding a horse.")
        assert len(ids) == 8
        assert tokenizer.decode(ids) == "holding a cup, riding a horse."

    def test_special_tokens(self):
        """Test placeholders are single tokens."""
        tokenizer = Tokenizer.build(["x"])
        assert tokenizer.encode("<f_img> x <|hoi|>") == [tokenizer.image_id, tokenizer.token_id("x"), tokenizer.hoi_id]

    def test_unknown(self):
        """Test out-of-vocabulary words map to <unk>."""
        tokenizer = Tokenizer.build(["cup"])
        assert tokenizer.encode("teapot") == [tokenizer.unk_id]

    def test_decode_skips_special(self):
        """Test padding and sequence markers are dropped."""
        tokenizer = Tokenizer.build(["cup"])
        ids = [tokenizer.bos_id, tokenizer.token_id("cup"), tokenizer.eos_id]
        assert tokenizer.decode(ids) == "cup"
        assert tokenizer.decode(ids, skip_special=False) == "<bos> cup <eos>"

    def test_invalid_vocabulary(self):
        """Test the vocabulary must start with the special tokens and be unique."""
        with pytest.raises(ConfigError):
            Tokenizer(["cup"])
        with pytest.raises(ConfigError):
            Tokenizer([*SPECIAL_TOKENS, "cup", "cup"])

    def test_round_trip_list(self):
        """Test the vocabulary list rebuilds the same tokenizer."""
        tokenizer = Tokenizer.build(["holding a cup"])
        assert Tokenizer(tokenizer.to_list()).tokens == tokenizer.tokens


@pytest.mark.unit
class TestLowRank:
    """Test low-rank adapters."""

    def test_zero_update_at_init(self):
        """Test a freshly wrapped layer computes the base output."""
        base = torch.nn.Linear(6, 4)
        wrapped = LowRankLinear(base, rank=2, alpha=4.0)
        x = torch.randn(3, 6)
        assert torch.equal(wrapped(x), base(x))
        assert torch.equal(wrapped.delta_weight(), torch.zeros(4, 6))

    def test_scaling(self):
        """Test the update is scaled by alpha / rank."""
        wrapped = LowRankLinear(torch.nn.Linear(2, 2), rank=2, alpha=4.0)
        with torch.no_grad():
            wrapped.lora_A.copy_(torch.eye(2))
            wrapped.lora_B.copy_(torch.eye(2))
        assert torch.allclose(wrapped.delta_weight(), 2.0 * torch.eye(2))

    def test_base_frozen(self):
        """Test only the factors train."""
        wrapped = LowRankLinear(torch.nn.Linear(2, 2), rank=1)
        assert not any(p.requires_grad for p in wrapped.base.parameters())
        assert wrapped.lora_A.requires_grad and wrapped.lora_B.requires_grad

    def test_invalid_rank(self):
        """Test rank 0 is rejected."""
        with pytest.raises(ConfigError):
            LowRankLinear(torch.nn.Linear(2, 2), rank=0)

    def test_apply_targets(self):
        """Test the four attention projections are wrapped, nothing else."""
        model = ToyCausalLM(vocab_size=10, dim=8, n_layers=2, n_heads=2).init_weights(0)
        wrapped = language_model.apply_low_rank(model, rank=2, alpha=4.0)
        assert wrapped == [f"blocks.{i}.attn.{p}_proj" for i in range(2) for p in "qkvo"]
        lowrank = language_model.low_rank_parameters(model)
        assert len(lowrank) == 16
        assert not set(lowrank) & set(language_model.base_parameters(model))

    def test_apply_keeps_output(self):
        """Test wrapping does not change the model output."""
        model = ToyCausalLM(vocab_size=10, dim=8, n_layers=1, n_heads=2).init_weights(0)
        embeds = torch.randn(5, 8)
        before = model(embeds).logits
        language_model.apply_low_rank(model, rank=2)
        assert torch.allclose(model(embeds).logits, before)


@pytest.mark.unit
class TestToyCausalLM:
    """Test the decoder."""

    def test_shapes(self):
        """Test unbatched and batched outputs."""
        model = ToyCausalLM(vocab_size=11, dim=8, n_layers=1, n_heads=2).init_weights(0)
        out = model(torch.randn(4, 8))
        assert out.logits.shape == (4, 11)
        assert out.hidden_states.shape == (4, 8)
        assert model(torch.randn(2, 4, 8)).logits.shape == (2, 4, 11)

    def test_init_scale(self):
        """Test LeCun-normal weights, residual outputs shrunk by the depth."""
        model = ToyCausalLM(vocab_size=10, dim=64, n_layers=2, n_heads=4).init_weights(0)
        block = model.blocks[0]
        assert float(block.attn.q_proj.weight.std()) == pytest.approx(1 / 8, rel=0.1)
        assert float(block.attn.o_proj.weight.std()) == pytest.approx(1 / 16, rel=0.1)
        assert float(block.mlp[2].weight.std()) == pytest.approx(1 / 32, rel=0.1)
        assert float(model.embed.weight.std()) == pytest.approx(1.0, rel=0.1)

    def test_causal(self):
        """Test a later token never changes earlier outputs."""
        model = ToyCausalLM(vocab_size=11, dim=8, n_layers=2, n_heads=2).init_weights(0)
        embeds = torch.randn(5, 8)
        changed = embeds.clone()
        changed[4] += 1.0
        assert torch.allclose(model(embeds).hidden_states[:4], model(changed).hidden_states[:4], atol=1e-6)

    def test_wrong_dim(self):
        """Test embeddings of the wrong size are rejected."""
        model = ToyCausalLM(vocab_size=11, dim=8, n_layers=1, n_heads=2)
        with pytest.raises(ShapeError):
            model(torch.randn(3, 5))

    def test_heads_divide_dim(self):
        """Test the head count must divide the model size."""
        with pytest.raises(ConfigError):
            ToyCausalLM(vocab_size=11, dim=6, n_layers=1, n_heads=4)
