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
Exceptions raised by the package.

Two families: :class:`HoiValidationError` for bad user input (exit code 1 on the command
line) and :class:`HoiRuntimeError` for failures while doing valid work (exit code 2).
"""


class HoiError(Exception):
    """Base class of every error raised by DA-HOI Tools."""


class HoiValidationError(HoiError, ValueError):
    """Invalid input, configuration or data."""


class HoiRuntimeError(HoiError, RuntimeError):
    """Failure while processing valid input."""


# -- validation --------------------------------------------------------------


class InvalidIdError(HoiValidationError):
    """Unknown verb, object or interaction id."""


class InvalidPromptError(HoiValidationError):
    """A prompt cannot be assembled from the given parts."""


class InvalidCandidateError(HoiValidationError):
    """A candidate phrase is empty after tokenization or contains a reserved token."""


class ShapeError(HoiValidationError):
    """Tensor or vector shapes do not agree."""


class HoiRangeError(HoiValidationError):
    """A requested count or value is outside its valid range."""


class ConfigError(HoiValidationError):
    """Invalid configuration file or value."""


class AnnotationParseError(HoiValidationError):
    """Interchange file does not follow its schema.

    :param message: what went wrong
    :type message: str
    :param path: location in the document, e.g. ``images[3].detections[0].bbox``
    :type path: str
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CategoryValidationError(HoiValidationError):
    """Detections or predictions reference categories missing from the taxonomy."""

    def __init__(self, message: str, offenders: list | None = None):
        self.offenders = sorted(set(offenders or []))
        if self.offenders:
            message = f"{message}: {', '.join(str(o) for o in self.offenders)}"
        super().__init__(message)


class ConsistencyError(HoiValidationError):
    """Ground truth and taxonomy disagree."""


class OutOfBoundsError(HoiValidationError):
    """A box lies entirely outside its image."""


class InvalidInputError(HoiValidationError):
    """Empty or malformed input to an operation."""


class InvalidBatchError(HoiValidationError):
    """Empty training batch."""


# -- runtime -----------------------------------------------------------------


class DependencyError(HoiRuntimeError):
    """A required artifact (e.g. the stage-1 checkpoint) is missing."""


class CompatibilityError(HoiRuntimeError):
    """Checkpoint and taxonomy (or checkpoint format) do not match."""


class UndefinedCosineError(HoiRuntimeError):
    """Cosine similarity requested for a zero-norm vector."""


class UndefinedRateError(HoiRuntimeError):
    """A rate was requested over an empty population."""


class GenerationError(HoiRuntimeError):
    """Synthetic scene placement failed after the allowed number of retries."""


class HoiIOError(HoiRuntimeError):
    """File could not be read or written."""
