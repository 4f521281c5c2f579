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
Prompt construction.

Templates are versioned text resources under ``resources/prompts/<version>/``. The question
names ``<f_img>`` and ``<f_inter>`` once each; at assembly time every placeholder token is
repeated to make room for its embedding span.
"""

# standard
import string
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

# 3rd party
import torch

# package
from da_hoi_tools.__about__ import DIR_RESOURCES
from da_hoi_tools.core.backends import LMInput
from da_hoi_tools.core.errors import ConfigError, InvalidCandidateError, InvalidPromptError
from da_hoi_tools.core.tokenizer import HOI_TOKEN, SPECIAL_TOKENS, Tokenizer

GENERATION = "generation"
MATCHING = "matching"
OPEN_SIMPLE = "open-simple"
OPEN_MCQ = "open-mcq"
OPEN_INCONTEXT = "open-incontext"
PROMPT_MODES = (GENERATION, MATCHING, OPEN_SIMPLE, OPEN_MCQ, OPEN_INCONTEXT)
OPEN_STYLES = (OPEN_SIMPLE, OPEN_MCQ, OPEN_INCONTEXT)
DEFAULT_TEMPLATE_VERSION = "v1"
MCQ_LETTERS = string.ascii_uppercase
TEMPLATE_NAMES = ("question", "answer", "incontext")


@lru_cache(maxsize=16)
def load_template(name: str, version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    """Read a prompt template.

    :raises ConfigError: unknown template or version
    """
    path = DIR_RESOURCES / "prompts" / version / f"{name}.txt"
    if not path.is_file():
        raise ConfigError(f"Prompt template '{name}' not found for version '{version}'")
    return path.read_text(encoding="UTF-8").rstrip("\n")


def template_texts(version: str = DEFAULT_TEMPLATE_VERSION) -> list[str]:
    """Every template of a version, for vocabulary building."""
    return [load_template(name, version) for name in TEMPLATE_NAMES]


@dataclass(frozen=True, eq=False)
class Prompt:
    """Assembled prompt: token ids, feature spans and, for matching, the ``<|hoi|>`` positions."""

    mode: str
    text: str
    candidates: tuple[str, ...]
    token_ids: tuple[int, ...]
    image_positions: tuple[int, ...]
    inter_positions: tuple[int, ...]
    hoi_positions: tuple[int, ...]
    image_embeds: torch.Tensor
    inter_embeds: torch.Tensor

    @property
    def inter_position(self) -> int:
        """Position whose hidden state stands for the interaction feature (last of its span)."""
        return self.inter_positions[-1]

    def to_input(self, suffix_ids: Sequence[int] = ()) -> LMInput:
        return LMInput(
            token_ids=self.token_ids + tuple(suffix_ids),
            feature_positions=self.image_positions + self.inter_positions,
            feature_embeds=torch.cat([self.image_embeds, self.inter_embeds.to(self.image_embeds.dtype)], dim=0),
        )


def _check_candidates(candidates: Sequence[str], tokenizer: Tokenizer) -> None:
    if not candidates:
        raise InvalidPromptError("Candidate list is empty")
    for candidate in candidates:
        if any(special in candidate for special in SPECIAL_TOKENS):
            raise InvalidCandidateError(f"Candidate '{candidate}' contains a reserved token")
        if not tokenizer.encode(candidate):
            raise InvalidCandidateError(f"Candidate '{candidate}' is empty after tokenization")


def render_question(candidate_text: str, version: str = DEFAULT_TEMPLATE_VERSION) -> str:
    return load_template("question", version).replace("{candidates}", candidate_text)


def _assemble(
    mode: str,
    text: str,
    candidates: Sequence[str],
    tokenizer: Tokenizer,
    image_embeds: torch.Tensor,
    inter_embeds: torch.Tensor,
) -> Prompt:
    if image_embeds.dim() != 2 or image_embeds.shape[0] == 0:
        raise InvalidPromptError("Prompt needs at least one image token")
    if inter_embeds.dim() != 2 or inter_embeds.shape[0] == 0:
        raise InvalidPromptError("Prompt needs at least one interaction-feature token")

    raw_ids = [tokenizer.bos_id, *tokenizer.encode(text)]
    for placeholder_id, label in ((tokenizer.image_id, "<f_img>"), (tokenizer.inter_id, "<f_inter>")):
        if raw_ids.count(placeholder_id) != 1:
            raise InvalidPromptError(f"Placeholder {label} must appear exactly once in the template")

    ids: list[int] = []
    image_positions: list[int] = []
    inter_positions: list[int] = []
    hoi_positions: list[int] = []
    for token_id in raw_ids:
        if token_id == tokenizer.image_id:
            image_positions.extend(range(len(ids), len(ids) + image_embeds.shape[0]))
            ids.extend([token_id] * image_embeds.shape[0])
        elif token_id == tokenizer.inter_id:
            inter_positions.extend(range(len(ids), len(ids) + inter_embeds.shape[0]))
            ids.extend([token_id] * inter_embeds.shape[0])
        else:
            if token_id == tokenizer.hoi_id:
                hoi_positions.append(len(ids))
            ids.append(token_id)

    return Prompt(
        mode=mode,
        text=text,
        candidates=tuple(candidates),
        token_ids=tuple(ids),
        image_positions=tuple(image_positions),
        inter_positions=tuple(inter_positions),
        hoi_positions=tuple(hoi_positions),
        image_embeds=image_embeds,
        inter_embeds=inter_embeds,
    )


def build_generation_prompt(
    tokenizer: Tokenizer,
    image_embeds: torch.Tensor,
    inter_embeds: torch.Tensor,
    candidates: Sequence[str],
    version: str = DEFAULT_TEMPLATE_VERSION,
) -> Prompt:
    """Question listing the candidates, followed by the answer cue.

    :param tokenizer: tokenizer of the backend
    :type tokenizer: Tokenizer
    :param image_embeds: image token span, (n_img, d_lm)
    :type image_embeds: torch.Tensor
    :param inter_embeds: interaction-feature span, (n_inter, d_lm)
    :type inter_embeds: torch.Tensor
    :param candidates: candidate phrases, in list order
    :type candidates: Sequence[str]
    :raises InvalidPromptError: no candidates or an empty feature span
    :return: assembled prompt
    :rtype: Prompt
    """
    _check_candidates(candidates, tokenizer)
    text = f"{render_question(', '.join(candidates), version)}\n{load_template('answer', version)}"
    return _assemble(GENERATION, text, candidates, tokenizer, image_embeds, inter_embeds)


def build_matching_prompt(
    tokenizer: Tokenizer,
    image_embeds: torch.Tensor,
    inter_embeds: torch.Tensor,
    candidates: Sequence[str],
    version: str = DEFAULT_TEMPLATE_VERSION,
) -> Prompt:
    """Question whose candidates are each followed by ``<|hoi|>``.

    The k-th entry of ``hoi_positions`` is the position of the token right after the last
    token of candidate k.

    :raises InvalidCandidateError: a candidate holds reserved token text or tokenizes to nothing
    """
    _check_candidates(candidates, tokenizer)
    listing = ", ".join(f"{c}{HOI_TOKEN}" for c in candidates)
    prompt = _assemble(MATCHING, render_question(listing, version), candidates, tokenizer, image_embeds, inter_embeds)
    if len(prompt.hoi_positions) != len(candidates):
        raise InvalidPromptError(
            f"Expected {len(candidates)} {HOI_TOKEN} tokens, the template produced {len(prompt.hoi_positions)}"
        )
    return prompt


def build_open_prompt(
    tokenizer: Tokenizer,
    image_embeds: torch.Tensor,
    inter_embeds: torch.Tensor,
    candidates: Sequence[str],
    style: str,
    version: str = DEFAULT_TEMPLATE_VERSION,
) -> Prompt:
    """Prompt for free-running answers.

    - ``open-simple``: plain question.
    - ``open-mcq``: candidates labeled ``A. ``, ``B. `` and so on.
    - ``open-incontext``: plain question after a fixed block of answered examples.

    :raises InvalidPromptError: unknown style, or more than 26 candidates for multiple choice
    """
    if style not in OPEN_STYLES:
        raise InvalidPromptError(f"Unknown open-ended style '{style}'. Must be one of: {','.join(OPEN_STYLES)}")
    _check_candidates(candidates, tokenizer)
    if style == OPEN_MCQ:
        if len(candidates) > len(MCQ_LETTERS):
            raise InvalidPromptError(f"Multiple choice supports at most {len(MCQ_LETTERS)} candidates")
        listing = ", ".join(f"{MCQ_LETTERS[i]}. {c}" for i, c in enumerate(candidates))
    else:
        listing = ", ".join(candidates)
    question = f"{render_question(listing, version)}\n{load_template('answer', version)}"
    if style == OPEN_INCONTEXT:
        question = load_template("incontext", version).replace("{question}", question)
    return _assemble(style, question, candidates, tokenizer, image_embeds, inter_embeds)
