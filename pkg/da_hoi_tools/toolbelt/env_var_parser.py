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

import os
from typing import TypeVar

T = TypeVar("T")

TRUE_VALUES = frozenset({"1", "true", "yes", "on"})
FALSE_VALUES = frozenset({"0", "false", "no", "off"})


class EnvVarParser:
    """Utility class to retrieve and convert environment variables."""

    @staticmethod
    def get_env_var(name: str, default: T) -> T:
        """Retrieves an environment variable and converts it based on the default value type.

        An unset or empty variable gives back the default.

        :param name: the environment variable name
        :type name: str
        :param default: the default value, used to infer the expected type
        :type default: T
        :return: the converted value, matching the type of ``default``
        :rtype: T
        """
        value = os.getenv(name)
        if value is None or value == "":
            return default
        return EnvVarParser._convert_single(value.strip(), type(default), default)

    @staticmethod
    def _convert_single(value: str, expected_type: type[T], default: T) -> T:
        """Converts a string into a single value of the expected type."""
        if expected_type is bool:
            return EnvVarParser._convert_bool(value, default)  # type: ignore[arg-type]
        if expected_type is str:
            return value  # type: ignore[return-value]
        if expected_type in (int, float):
            try:
                return expected_type(value)  # type: ignore[call-arg]
            except ValueError:
                return default

        raise TypeError(
            f"Unsupported type: {expected_type}. Value definition from environment variable is not possible."
        )

    @staticmethod
    def _convert_bool(value: str, default: bool) -> bool:
        """Converts a string into a boolean, unknown spellings give back the default."""
        value_lower = value.lower()
        if value_lower in TRUE_VALUES:
            return True
        if value_lower in FALSE_VALUES:
            return False
        return default
