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
Unit tests for backends and prompts modules.
"""

import math
import threading

import pytest
import torch

from da_hoi_tools.core import prompts
from da_hoi_tools.core.backends import LMInput, StubBackend, ToyLMBackend
from da_hoi_tools.core.errors import ConfigError, InvalidCandidateError, InvalidPromptError, ShapeError
from da_hoi_tools.core.language_model import ToyCausalLM

CANDIDATES = ["holding a cup", "painting a cup"]


def spans(dim: int = 8, n_image: int = 2) -> tuple[torch.Tensor, torch.Tensor]:
    return torch.randn(n_image, dim), torch.randn(1, dim)


@pytest.mark.unit
class TestLMInput:
    """Test backend inputs."""

    def test_feature_count(self):
        """Test embeddings and positions must agree."""
        with pytest.raises(ShapeError):
            LMInput((1, 2, 3), (0, 1), torch.zeros(1, 4))

    def test_feature_position_range(self):
        """Test positions must lie inside the sequence."""
        with pytest.raises(ShapeError):
            LMInput((1, 2), (5,), torch.zeros(1, 4))

    def test_extend(self):
        """Test extension keeps the feature spans."""
        inp = LMInput((1, 2), (0,), torch.zeros(1, 4)).extend([3])
        assert inp.token_ids == (1, 2, 3)
        assert inp.feature_positions == (0,)


@pytest.mark.unit
class TestStubBackend:
    """Test the deterministic fake backend."""

    def test_uniform_log_probs(self, tokenizer):
        """Test the default logits give log(1 / V) everywhere."""
        backend = StubBackend(tokenizer, dim=8)
        ids = tokenizer.encode("holding a cup")
        log_probs = backend.token_log_probs(LMInput(tuple(ids)), 1)
        assert log_probs.tolist() == pytest.approx([-math.log(tokenizer.vocab_size)] * 2)

    def test_call_counting(self, tokenizer):
        """Test every forward pass is counted and can be reset."""
        backend = StubBackend(tokenizer, dim=8)
        inp = LMInput(tuple(tokenizer.encode("a cup")))
        backend.forward(inp)
        backend.hidden_states(inp)
        assert backend.calls == 2
        backend.reset_calls()
        assert backend.calls == 0

    def test_thread_calls(self, tokenizer):
        """Test each thread sees its own passes while the total sums them all."""
        backend = StubBackend(tokenizer, dim=8)
        inp = LMInput(tuple(tokenizer.encode("a cup")))
        seen = {}

        def passes(n):
            for _ in range(n):
                backend.forward(inp)
            seen[n] = backend.thread_calls

        workers = [threading.Thread(target=passes, args=(n,)) for n in (3, 5, 7)]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()
        assert seen == {3: 3, 5: 5, 7: 7}
        assert backend.calls == 15
        assert backend.thread_calls == 0

    def test_position_independent(self, tokenizer):
        """Test a token has the same hidden state wherever it sits."""
        backend = StubBackend(tokenizer, dim=8)
        cup = tokenizer.token_id("cup")
        a = backend.hidden_states(LMInput((cup, tokenizer.token_id("a"))))
        b = backend.hidden_states(LMInput((tokenizer.token_id("a"), tokenizer.token_id("a"), cup)))
        assert torch.equal(a[0], b[2])

    def test_feature_splice(self, tokenizer):
        """Test spliced features replace the token embedding."""
        backend = StubBackend(tokenizer, dim=8)
        feature = torch.arange(8.0).unsqueeze(0)
        hidden = backend.hidden_states(LMInput((tokenizer.inter_id, tokenizer.token_id("cup")), (0,), feature))
        assert torch.equal(hidden[0], feature[0].to(torch.float64))

    def test_feature_dim_mismatch(self, tokenizer):
        """Test features of the wrong size are rejected."""
        backend = StubBackend(tokenizer, dim=8)
        with pytest.raises(ShapeError):
            backend.forward(LMInput((tokenizer.inter_id,), (0,), torch.zeros(1, 3)))

    def test_segment_mode(self, tokenizer):
        """Test segment hidden states average since the last delimiter."""
        backend = StubBackend(tokenizer, dim=8, hidden_mode="segment")
        ids = tuple(tokenizer.encode("holding a cup, holding a cup"))
        hidden = backend.hidden_states(LMInput(ids))
        assert torch.allclose(hidden[2], hidden[6])
        assert torch.allclose(hidden[2], backend.embed_tokens(ids[:3]).mean(dim=0))

    def test_scripted(self, tokenizer):
        """Test a scripted stub generates its answer then stops."""
        backend = StubBackend.scripted(tokenizer, "holding a cup", dim=8)
        generated = backend.generate(LMInput((tokenizer.bos_id,)), max_new_tokens=10)
        assert tokenizer.decode(generated) == "holding a cup"

    def test_generation_budget(self, tokenizer):
        """Test generation stops at the token budget."""
        backend = StubBackend.scripted(tokenizer, "holding a cup", dim=8)
        assert len(backend.generate(LMInput((tokenizer.bos_id,)), max_new_tokens=2)) == 2

    def test_target_start(self, tokenizer):
        """Test the first target cannot be the first token."""
        with pytest.raises(ShapeError):
            StubBackend(tokenizer).token_log_probs(LMInput((1, 2)), 0)


@pytest.mark.unit
class TestToyLMBackend:
    """Test the built-in decoder backend."""

    def test_vocabulary_mismatch(self, tokenizer):
        """Test model and tokenizer sizes must agree."""
        with pytest.raises(ShapeError):
            ToyLMBackend(ToyCausalLM(vocab_size=3, dim=8, n_layers=1, n_heads=2), tokenizer)

    def test_forward(self, tokenizer):
        """Test output shapes."""
        backend = ToyLMBackend(ToyCausalLM(tokenizer.vocab_size, dim=8, n_layers=1, n_heads=2).init_weights(0), tokenizer)
        out = backend.forward(LMInput(tuple(tokenizer.encode("holding a cup"))))
        assert out.logits.shape == (3, tokenizer.vocab_size)
        assert out.hidden_states.shape == (3, 8)
        assert backend.calls == 1


@pytest.mark.unit
class TestTemplates:
    """Test template loading."""

    def test_known(self):
        """Test the question template holds both placeholders."""
        question = prompts.load_template("question")
        assert "<f_img>" in question and "<f_inter>" in question and "{candidates}" in question

    def test_unknown_version(self):
        """Test a missing version is a config error."""
        with pytest.raises(ConfigError):
            prompts.load_template("question", version="v99")


@pytest.mark.unit
class TestGenerationPrompt:
    """Test the deterministic-generation prompt."""

    def test_candidates_in_order(self, tokenizer):
        """Test both phrases appear comma-separated in candidate order."""
        prompt = prompts.build_generation_prompt(tokenizer, *spans(), CANDIDATES)
        assert "holding a cup, painting a cup" in prompt.text
        assert prompt.text.endswith("Answer:")
        assert prompt.token_ids[0] == tokenizer.bos_id

    def test_feature_spans(self, tokenizer):
        """Test image and interaction spans expand to their lengths."""
        image, inter = spans(n_image=3)
        prompt = prompts.build_generation_prompt(tokenizer, image, inter, CANDIDATES)
        assert len(prompt.image_positions) == 3
        assert prompt.image_positions == tuple(range(prompt.image_positions[0], prompt.image_positions[0] + 3))
        assert len(prompt.inter_positions) == 1
        assert prompt.inter_position > prompt.image_positions[-1]

    def test_no_image_tokens(self, tokenizer):
        """Test an empty image span is rejected."""
        with pytest.raises(InvalidPromptError):
            prompts.build_generation_prompt(tokenizer, torch.zeros(0, 8), torch.zeros(1, 8), CANDIDATES)

    def test_no_candidates(self, tokenizer):
        """Test an empty candidate list is rejected."""
        with pytest.raises(InvalidPromptError):
            prompts.build_generation_prompt(tokenizer, *spans(), [])

    def test_deterministic(self, tokenizer):
        """Test equal inputs give equal ids."""
        image, inter = spans()
        a = prompts.build_generation_prompt(tokenizer, image, inter, CANDIDATES)
        b = prompts.build_generation_prompt(tokenizer, image, inter, CANDIDATES)
        assert a.token_ids == b.token_ids


@pytest.mark.unit
class TestMatchingPrompt:
    """Test the one-pass matching prompt."""

    def test_hoi_tokens(self, tokenizer):
        """Test one <|hoi|> token follows each of three candidates."""
        candidates = ["holding a ball", "kicking a ball", "watching a ball"]
        prompt = prompts.build_matching_prompt(tokenizer, *spans(), candidates)
        assert prompt.token_ids.count(tokenizer.hoi_id) == 3
        for position, candidate in zip(prompt.hoi_positions, candidates, strict=True):
            last = tokenizer.encode(candidate)[-1]
            assert prompt.token_ids[position - 1] == last

    def test_reserved_text(self, tokenizer):
        """Test a candidate holding special token text is rejected."""
        with pytest.raises(InvalidCandidateError):
            prompts.build_matching_prompt(tokenizer, *spans(), ["holding a <|hoi|> cup"])

    def test_empty_candidate(self, tokenizer):
        """Test a candidate that tokenizes to nothing is rejected."""
        with pytest.raises(InvalidCandidateError):
            prompts.build_matching_prompt(tokenizer, *spans(), ["   "])

    def test_to_input(self, tokenizer):
        """Test the backend input carries both feature spans."""
        image, inter = spans()
        prompt = prompts.build_matching_prompt(tokenizer, image, inter, CANDIDATES)
        inp = prompt.to_input()
        assert inp.feature_positions == prompt.image_positions + prompt.inter_positions
        assert inp.feature_embeds.shape == (3, 8)


@pytest.mark.unit
class TestOpenPrompt:
    """Test the open-ended prompts."""

    def test_multiple_choice(self, tokenizer):
        """Test candidates are labeled with letters."""
        prompt = prompts.build_open_prompt(tokenizer, *spans(), CANDIDATES, prompts.OPEN_MCQ)
        assert "A. holding a cup, B. painting a cup" in prompt.text

    def test_in_context(self, tokenizer):
        """Test the worked examples precede the question."""
        prompt = prompts.build_open_prompt(tokenizer, *spans(), CANDIDATES, prompts.OPEN_INCONTEXT)
        assert prompt.text.startswith("I will give you some examples")
        assert prompt.text.count("<f_img>") == 1

    def test_unknown_style(self, tokenizer):
        """Test unknown styles are rejected."""
        with pytest.raises(InvalidPromptError):
            prompts.build_open_prompt(tokenizer, *spans(), CANDIDATES, "open-essay")

    def test_too_many_letters(self, tokenizer):
        """Test multiple choice stops at 26 candidates."""
        with pytest.raises(InvalidPromptError):
            prompts.build_open_prompt(tokenizer, *spans(), ["holding a cup"] * 27, prompts.OPEN_MCQ)
