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
Word-level tokenizer for the built-in language model.

Text is split into special tokens, words and single punctuation marks. The vocabulary is
closed: it is built from the prompt templates, the taxonomy phrases and the letters used
as multiple-choice labels.
"""

# standard
import re
import string
from collections.abc import Iterable, Sequence

# package
from da_hoi_tools.core.errors import ConfigError

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
IMAGE_PLACEHOLDER = "<f_img>"
INTER_PLACEHOLDER = "<f_inter>"
HOI_TOKEN = "<|hoi|>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, IMAGE_PLACEHOLDER, INTER_PLACEHOLDER, HOI_TOKEN)

TOKEN_PATTERN = re.compile(r"<\|hoi\|>|<[^>\s]+>|\w+|[^\w\s]")
_NO_SPACE_BEFORE = re.compile(r" ([,.:;?!])")


def split_words(text: str) -> list[str]:
    return TOKEN_PATTERN.findall(text)


class Tokenizer:
    """Closed-vocabulary tokenizer.

    :param tokens: vocabulary, special tokens first
    :type tokens: Sequence[str]
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ConfigError(f"Vocabulary must start with the special tokens {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("Vocabulary contains duplicate tokens")
        self.tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Tokenizer":
        """Vocabulary = special tokens, A-Z, then every word of ``texts`` in sorted order."""
        words = set(string.ascii_uppercase)
        for text in texts:
            words.update(split_words(text))
        words.difference_update(SPECIAL_TOKENS)
        return cls(SPECIAL_TOKENS + tuple(sorted(words)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def image_id(self) -> int:
        return self._ids[IMAGE_PLACEHOLDER]

    @property
    def inter_id(self) -> int:
        return self._ids[INTER_PLACEHOLDER]

    @property
    def hoi_id(self) -> int:
        return self._ids[HOI_TOKEN]

    def encode(self, text: str) -> list[int]:
        """Text to token ids, out-of-vocabulary words become ``<unk>``."""
        return [self.token_id(w) for w in split_words(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        """Token ids to text. Punctuation is attached to the preceding word."""
        skipped = {self.pad_id, self.bos_id, self.eos_id} if skip_special else set()
        words = [self.tokens[i] for i in ids if i not in skipped]
        return _NO_SPACE_BEFORE.sub(r"\1", " ".join(words))

    def to_list(self) -> list[str]:
        return list(self.tokens)
