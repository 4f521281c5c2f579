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
Language-model backends.

A backend turns an :class:`LMInput` (token ids with feature embeddings spliced in at given
positions) into logits and hidden states. Two implementations ship with the package:
:class:`ToyLMBackend` runs the built-in decoder and :class:`StubBackend` is a
position-independent fake used for protocol checks.
"""

# standard
import threading
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

# 3rd party
import torch

# package
from da_hoi_tools.core.errors import ShapeError
from da_hoi_tools.core.language_model import LMOutput, ToyCausalLM
from da_hoi_tools.core.tokenizer import Tokenizer


@dataclass(frozen=True, eq=False)
class LMInput:
    """Token ids plus feature embeddings replacing the ids at ``feature_positions``."""

    token_ids: tuple[int, ...]
    feature_positions: tuple[int, ...] = ()
    feature_embeds: torch.Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        n_feat = 0 if self.feature_embeds is None else self.feature_embeds.shape[0]
        if n_feat != len(self.feature_positions):
            raise ShapeError(f"{n_feat} feature embeddings for {len(self.feature_positions)} positions")
        if any(p < 0 or p >= len(self.token_ids) for p in self.feature_positions):
            raise ShapeError("Feature position outside the token sequence")

    def __len__(self) -> int:
        return len(self.token_ids)

    def extend(self, suffix_ids: Sequence[int]) -> "LMInput":
        return LMInput(tuple(self.token_ids) + tuple(suffix_ids), self.feature_positions, self.feature_embeds)


class LMBackend(ABC):
    """Scoring contract shared by every language-model backend.

    ``calls`` counts forward passes. It is the figure reported by the latency benchmark.
    ``thread_calls`` counts the passes made by the calling thread only.
    """

    def __init__(self, tokenizer: Tokenizer, dim: int):
        self.tokenizer = tokenizer
        self.dim = dim
        self._calls = 0
        self._calls_lock = threading.Lock()
        self._local = threading.local()

    @property
    def calls(self) -> int:
        return self._calls

    def reset_calls(self) -> None:
        with self._calls_lock:
            self._calls = 0

    @property
    def thread_calls(self) -> int:
        return getattr(self._local, "calls", 0)

    def _count_call(self) -> None:
        with self._calls_lock:
            self._calls += 1
        self._local.calls = self.thread_calls + 1

    @abstractmethod
    def embed_tokens(self, token_ids: Sequence[int]) -> torch.Tensor:
        """Token embeddings, shape (T, d_lm)."""

    @abstractmethod
    def _run(self, inp: LMInput, embeds: torch.Tensor) -> LMOutput:
        """Single forward pass on already-assembled embeddings."""

    def embed(self, inp: LMInput) -> torch.Tensor:
        """Input embeddings with feature rows spliced in."""
        embeds = self.embed_tokens(inp.token_ids)
        if inp.feature_positions:
            feats = inp.feature_embeds.to(embeds.dtype)
            if feats.shape[-1] != embeds.shape[-1]:
                raise ShapeError(f"Feature embeddings have dim {feats.shape[-1]}, backend expects {embeds.shape[-1]}")
            embeds = embeds.clone()
            embeds[list(inp.feature_positions)] = feats
        return embeds

    def forward(self, inp: LMInput) -> LMOutput:
        """One counted forward pass. Outputs are (T, V) logits and (T, d_lm) hidden states."""
        self._count_call()
        return self._run(inp, self.embed(inp))

    def token_log_probs(self, inp: LMInput, start: int) -> torch.Tensor:
        """Forced-decoding log-probabilities of ``token_ids[start:]``, one forward pass.

        :param inp: full sequence, prompt followed by the target tokens
        :type inp: LMInput
        :param start: index of the first target token, >= 1
        :type start: int
        :return: tensor of shape (T - start,)
        :rtype: torch.Tensor
        """
        if not 1 <= start <= len(inp):
            raise ShapeError(f"Target start {start} outside [1, {len(inp)}]")
        logits = self.forward(inp).logits
        log_probs = torch.log_softmax(logits[start - 1 : len(inp) - 1].to(torch.float64), dim=-1)
        targets = torch.tensor(inp.token_ids[start:], dtype=torch.long)
        return log_probs.gather(1, targets.unsqueeze(1)).squeeze(1)

    def hidden_states(self, inp: LMInput) -> torch.Tensor:
        return self.forward(inp).hidden_states

    @torch.no_grad()
    def generate(self, inp: LMInput, max_new_tokens: int) -> list[int]:
        """Greedy decoding, stops after ``<eos>`` (excluded) or ``max_new_tokens`` tokens."""
        generated: list[int] = []
        current = inp
        for _ in range(max(0, max_new_tokens)):
            next_id = int(torch.argmax(self.forward(current).logits[-1]))
            if next_id == self.tokenizer.eos_id:
                break
            generated.append(next_id)
            current = current.extend([next_id])
        return generated


class ToyLMBackend(LMBackend):
    """Backend running a :class:`ToyCausalLM`."""

    def __init__(self, model: ToyCausalLM, tokenizer: Tokenizer):
        if model.vocab_size != tokenizer.vocab_size:
            raise ShapeError(f"Model vocabulary ({model.vocab_size}) and tokenizer ({tokenizer.vocab_size}) differ")
        super().__init__(tokenizer, model.dim)
        self.model = model

    def embed_tokens(self, token_ids: Sequence[int]) -> torch.Tensor:
        return self.model.embed(torch.tensor(list(token_ids), dtype=torch.long))

    def _run(self, inp: LMInput, embeds: torch.Tensor) -> LMOutput:
        return self.model(embeds)


def _hashed_embedding(token_id: int, dim: int) -> torch.Tensor:
    generator = torch.Generator().manual_seed(1_000_003 * (token_id + 1))
    return torch.randn(dim, generator=generator, dtype=torch.float64)


class StubBackend(LMBackend):
    """Deterministic fake backend.

    Hidden states never depend on position: by default the hidden state at a position is its
    input embedding (the hashed embedding of the token id, or the spliced feature). With
    ``hidden_mode="segment"`` it is the mean of the input embeddings since the previous
    ``,`` or ``:`` token, which still depends only on local content.

    :param tokenizer: tokenizer
    :param dim: embedding size
    :param logits_fn: maps the token ids of a sequence to (T, V) logits, uniform when None
    :param hidden_fn: maps (token ids, input embeddings) to (T, dim) hidden states
    :param hidden_mode: ``"token"`` or ``"segment"``
    """

    DELIMITERS = (",", ":")

    def __init__(
        self,
        tokenizer: Tokenizer,
        dim: int = 16,
        logits_fn: Callable[[Sequence[int]], torch.Tensor] | None = None,
        hidden_fn: Callable[[Sequence[int], torch.Tensor], torch.Tensor] | None = None,
        hidden_mode: str = "token",
    ):
        super().__init__(tokenizer, dim)
        self.logits_fn = logits_fn
        self.hidden_fn = hidden_fn
        self.hidden_mode = hidden_mode
        self._table = torch.stack([_hashed_embedding(i, dim) for i in range(tokenizer.vocab_size)])
        self._delimiters = {tokenizer.token_id(d) for d in self.DELIMITERS}

    @classmethod
    def scripted(cls, tokenizer: Tokenizer, answer: str, dim: int = 16) -> "StubBackend":
        """Stub whose greedy generation emits ``answer`` and then ``<eos>``."""
        script = tokenizer.encode(answer) + [tokenizer.eos_id]

        def logits_fn(ids: Sequence[int]) -> torch.Tensor:
            ids = list(ids)
            done = 0
            for k in range(min(len(script) - 1, len(ids)), 0, -1):
                if ids[-k:] == script[:k]:
                    done = k
                    break
            logits = torch.zeros((len(ids), tokenizer.vocab_size), dtype=torch.float64)
            logits[-1, script[done]] = 10.0
            return logits

        return cls(tokenizer, dim=dim, logits_fn=logits_fn)

    def embed_tokens(self, token_ids: Sequence[int]) -> torch.Tensor:
        return self._table[list(token_ids)]

    def _run(self, inp: LMInput, embeds: torch.Tensor) -> LMOutput:
        ids = list(inp.token_ids)
        if self.logits_fn is None:
            logits = torch.zeros((len(ids), self.tokenizer.vocab_size), dtype=torch.float64)
        else:
            logits = self.logits_fn(ids)
        if self.hidden_fn is not None:
            hidden = self.hidden_fn(ids, embeds)
        elif self.hidden_mode == "segment":
            hidden = self._segment_means(ids, embeds)
        else:
            hidden = embeds
        return LMOutput(logits=logits, hidden_states=hidden)

    def _segment_means(self, ids: Sequence[int], embeds: torch.Tensor) -> torch.Tensor:
        rows = []
        start = 0
        for t, token_id in enumerate(ids):
            if token_id in self._delimiters:
                start = t + 1
                rows.append(embeds[t])
                continue
            rows.append(embeds[start : t + 1].mean(dim=0))
        return torch.stack(rows) if rows else embeds
