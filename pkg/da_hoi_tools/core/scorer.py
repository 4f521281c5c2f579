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
Interaction scoring against a language-model backend.

- deterministic generation: one forced-decoding pass per candidate, the score is the
  probability of the candidate phrase given the prompt;
- one-pass matching: a single pass, the score of candidate k is the clamped cosine between
  the hidden state at its ``<|hoi|>`` token and the hidden state at the interaction feature;
- open-ended baselines: greedy free-running answers parsed back into candidate indices.
"""

# standard
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass

# 3rd party
import torch

# package
from da_hoi_tools.core.backends import LMBackend
from da_hoi_tools.core.errors import InvalidCandidateError, InvalidPromptError, UndefinedCosineError
from da_hoi_tools.core.prompts import MATCHING, MCQ_LETTERS, OPEN_MCQ, OPEN_STYLES, Prompt
from da_hoi_tools.toolbelt.log_handler import PlgLogger

COSINE_EPS = 1e-12
DEFAULT_ANSWER_BUDGET = 32
_MCQ_SEGMENT = re.compile(r"^([A-Za-z])\.?(\s.*)?$")


def candidate_log_likelihood(
    prompt: Prompt,
    target_ids: Sequence[int],
    backend: LMBackend,
    length_normalize: bool = False,
) -> torch.Tensor:
    """Sum (or mean) of forced-decoding log-probabilities of ``target_ids`` after the prompt."""
    start = len(prompt.token_ids)
    log_probs = backend.token_log_probs(prompt.to_input(target_ids), start)
    return log_probs.mean() if length_normalize else log_probs.sum()


def deterministic_generation_scores(
    prompt: Prompt,
    backend: LMBackend,
    length_normalize: bool = False,
    include_eos: bool = False,
) -> torch.Tensor:
    """Conditional likelihood of every candidate, one backend pass per candidate.

    :param prompt: generation prompt
    :type prompt: Prompt
    :param backend: language-model backend
    :type backend: LMBackend
    :param length_normalize: geometric mean of token probabilities instead of their product
    :type length_normalize: bool
    :param include_eos: append ``<eos>`` to each candidate before scoring
    :type include_eos: bool
    :raises InvalidCandidateError: a candidate tokenizes to nothing
    :return: scores in (0, 1], aligned with ``prompt.candidates``
    :rtype: torch.Tensor
    """
    if not prompt.candidates:
        raise InvalidPromptError("Prompt has no candidates")
    tokenizer = backend.tokenizer
    scores = []
    for candidate in prompt.candidates:
        ids = tokenizer.encode(candidate)
        if not ids:
            raise InvalidCandidateError(f"Candidate '{candidate}' is empty after tokenization")
        if include_eos:
            ids.append(tokenizer.eos_id)
        scores.append(torch.exp(candidate_log_likelihood(prompt, ids, backend, length_normalize)))
    return torch.stack(scores)


def one_pass_matching_scores(prompt: Prompt, backend: LMBackend) -> torch.Tensor:
    """Cosine between each ``<|hoi|>`` hidden state and the interaction-feature hidden state.

    Scores are clamped to [0, 1]. The clamp passes gradients strictly inside the interval
    and blocks them outside.

    :raises InvalidPromptError: not a matching prompt
    :raises UndefinedCosineError: a hidden state has zero norm
    :return: one score per candidate, single backend pass
    :rtype: torch.Tensor
    """
    if prompt.mode != MATCHING or len(prompt.hoi_positions) != len(prompt.candidates):
        raise InvalidPromptError("One-pass matching needs a matching prompt")
    hidden = backend.hidden_states(prompt.to_input())
    f_inter = hidden[prompt.inter_position]
    f_hoi = hidden[list(prompt.hoi_positions)]
    inter_norm = f_inter.norm()
    hoi_norm = f_hoi.norm(dim=-1)
    if float(inter_norm) <= COSINE_EPS or bool((hoi_norm <= COSINE_EPS).any()):
        raise UndefinedCosineError("Zero-norm hidden state, cosine similarity is undefined")
    cosine = (f_hoi @ f_inter) / (hoi_norm * inter_norm)
    return torch.clamp(cosine, 0.0, 1.0)


def open_ended_answer(prompt: Prompt, backend: LMBackend, max_new_tokens: int = DEFAULT_ANSWER_BUDGET) -> str:
    """Greedy free-running answer to an open-ended prompt."""
    if prompt.mode not in OPEN_STYLES:
        raise InvalidPromptError(f"Open-ended answers need an open-ended prompt, got '{prompt.mode}'")
    if max_new_tokens <= 0:
        return ""
    return backend.tokenizer.decode(backend.generate(prompt.to_input(), max_new_tokens))


@dataclass(frozen=True)
class ParsedAnswer:
    """Parsed free-form answer.

    :param indices: candidate indices named by the answer, empty on format error
    :param format_error: some segment matched no candidate (or the answer was empty)
    :param single_output: exactly one interaction was produced
    """

    indices: frozenset[int]
    format_error: bool

    @property
    def single_output(self) -> bool:
        return not self.format_error and len(self.indices) == 1


FORMAT_ERROR = ParsedAnswer(indices=frozenset(), format_error=True)


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def parse_answer(text: str, candidates: Sequence[str], style: str) -> ParsedAnswer:
    """Map a free-form answer back to candidate indices.

    Comma-separated segments are matched exactly (case-insensitive) against the candidate
    phrases, or against the choice letters for the multiple-choice style. A trailing period
    is ignored.

    :param text: generated answer
    :type text: str
    :param candidates: candidate phrases in prompt order
    :type candidates: Sequence[str]
    :param style: one of the open-ended styles
    :type style: str
    :return: parsed answer, never raises on malformed text
    :rtype: ParsedAnswer
    """
    body = text.strip()
    if body.endswith("."):
        body = body[:-1]
    segments = [s.strip() for s in body.split(",")]
    if not body or any(not s for s in segments):
        return FORMAT_ERROR

    indices = set()
    if style == OPEN_MCQ:
        letters = MCQ_LETTERS[: len(candidates)]
        for segment in segments:
            match = _MCQ_SEGMENT.match(segment)
            if match is None or match.group(1).upper() not in letters:
                return FORMAT_ERROR
            indices.add(letters.index(match.group(1).upper()))
    else:
        lookup = {}
        for i, candidate in enumerate(candidates):
            lookup.setdefault(_normalize(candidate), i)
        for segment in segments:
            index = lookup.get(_normalize(segment))
            if index is None:
                return FORMAT_ERROR
            indices.add(index)
    return ParsedAnswer(indices=frozenset(indices), format_error=False)


def likelihood_confidence(text: str, prompt: Prompt, backend: LMBackend) -> float:
    """Forced-decoding probability of a generated answer.

    An empty answer yields 1.0 (empty product) and is logged as degenerate.
    """
    ids = backend.tokenizer.encode(text)
    if not ids:
        PlgLogger.log(message="Likelihood of an empty answer requested, returning 1.0", log_level=1)
        return 1.0
    with torch.no_grad():
        return math.exp(float(candidate_log_likelihood(prompt, ids, backend)))
