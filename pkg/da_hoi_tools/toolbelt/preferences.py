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
Package settings and configuration files.
"""

# standard
import dataclasses
import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, TypeVar

# package
import da_hoi_tools.toolbelt.log_handler as log_hdlr
from da_hoi_tools.__about__ import __version__
from da_hoi_tools.core.errors import ConfigError
from da_hoi_tools.toolbelt.env_var_parser import EnvVarParser

# ############################################################################
# ########## Classes ###############
# ##################################

PREFIX_ENV_VARIABLE = "DA_HOI_"

T = TypeVar("T")


@dataclass
class PlgEnvVariableSettings:
    """Package settings from environnement variable.

    Only the feature cache location is read from the environment, every other knob flows
    through command-line flags or config files so that runs stay auditable.
    """

    cache_dir: str = f"{PREFIX_ENV_VARIABLE}CACHE"

    def env_variable_used(self, attribute: str, default_from_name: bool = False) -> str:
        """Get environnement variable used for environnement variable settings

        :param attribute: attribute to check
        :type attribute: str
        :param default_from_name: define default environnement value from attribute name PREFIX_ENV_VARIABLE_<upper case attribute>
        :type default_from_name: bool
        :return: environnement variable used, empty string if the attribute is not bound to one
        :rtype: str
        """
        settings_env_variable = asdict(self)
        env_variable = settings_env_variable.get(attribute, "")
        if not env_variable and default_from_name:
            env_variable = f"{PREFIX_ENV_VARIABLE}{attribute}".upper()
        return env_variable


@dataclass
class PlgSettingsStructure:
    """Package settings structure and defaults values."""

    # global
    debug_mode: bool = False
    verbosity: int = 0
    version: str = __version__

    # runtime
    cache_dir: str = ""
    jobs: int = 1
    seed: int = 0


# in-process settings store, filled by the CLI before any work starts
_SETTINGS_STORE: dict[str, Any] = {}


class PlgOptionsManager:
    @staticmethod
    def get_plg_settings() -> PlgSettingsStructure:
        """Load and return package settings. \
        Useful to get user preferences across package logic.

        :return: package settings
        :rtype: PlgSettingsStructure
        """
        settings_fields = fields(PlgSettingsStructure)
        env_variable_settings = PlgEnvVariableSettings()

        li_settings_values = []
        for i in settings_fields:
            value = _SETTINGS_STORE.get(i.name, i.default)
            # If environnement variable used, get value from environnement variable
            env_variable = env_variable_settings.env_variable_used(i.name)
            if env_variable and i.name not in _SETTINGS_STORE:
                value = EnvVarParser.get_env_var(env_variable, value)
            li_settings_values.append(value)

        return PlgSettingsStructure(*li_settings_values)

    @staticmethod
    def get_value_from_key(key: str, default=None):
        """Return a single settings value.

        :return: package settings value matching key
        """
        if not hasattr(PlgSettingsStructure, key):
            field_names = [field.name for field in fields(PlgSettingsStructure)]
            log_hdlr.PlgLogger.log(
                message="Bad settings key. Must be one of: {}".format(",".join(field_names)),
                log_level=1,
            )
            return None

        return getattr(PlgOptionsManager.get_plg_settings(), key, default)

    @classmethod
    def set_value_from_key(cls, key: str, value) -> bool:
        """Set package settings value using the key.

        :param key: settings key
        :type key: str
        :param value: value to set
        :type value: depending on the settings
        :return: operation status
        :rtype: bool
        """
        if not hasattr(PlgSettingsStructure, key):
            field_names = [field.name for field in fields(PlgSettingsStructure)]
            log_hdlr.PlgLogger.log(
                message="Bad settings key. Must be one of: {}".format(",".join(field_names)),
                log_level=2,
            )
            return False

        _SETTINGS_STORE[key] = value
        return True

    @classmethod
    def save_from_object(cls, settings_obj: PlgSettingsStructure):
        """Store every field of a settings object."""
        for k, v in asdict(settings_obj).items():
            cls.set_value_from_key(k, v)

    @staticmethod
    def reset() -> None:
        """Forget every stored value, back to defaults and environment."""
        _SETTINGS_STORE.clear()

    @staticmethod
    def get_cache_dir() -> Path | None:
        """Get the derived-feature cache directory, if one is configured.

        :return: cache directory or None when caching is disabled
        :rtype: Path | None
        """
        cache_dir = PlgOptionsManager.get_plg_settings().cache_dir
        return Path(cache_dir) if cache_dir else None


def load_dataclass(cls: type[T], source: Mapping[str, Any] | str | Path, aliases: Mapping[str, str] | None = None) -> T:
    """Build a config dataclass from a JSON file or a mapping.

    Unknown keys are rejected. JSON lists are turned into tuples when the field default is
    a tuple.

    :param cls: dataclass type to build
    :param source: mapping or path to a JSON file
    :param aliases: external key -> field name (e.g. ``{"lambda": "lambda_"}``)
    :raises ConfigError: unreadable file, unknown key or invalid value
    """
    if isinstance(source, (str, Path)):
        try:
            mapping = json.loads(Path(source).read_text(encoding="UTF-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"Cannot read config file {source}: {err}") from err
    else:
        mapping = dict(source)
    if not isinstance(mapping, dict):
        raise ConfigError(f"Config for {cls.__name__} must be a JSON object")

    aliases = dict(aliases or {})
    cls_fields = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        name = aliases.get(key, key)
        if name not in cls_fields:
            accepted = sorted(set(cls_fields) - set(aliases.values()) | set(aliases))
            raise ConfigError("Bad settings key '{}'. Must be one of: {}".format(key, ",".join(accepted)))
        default = cls_fields[name].default
        if isinstance(value, list) and isinstance(default, tuple):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"Invalid {cls.__name__}: {err}") from err


def dump_dataclass(obj: Any, aliases: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Inverse of :func:`load_dataclass`, for config echoes in checkpoints."""
    reverse = {v: k for k, v in (aliases or {}).items()}
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[reverse.get(f.name, f.name)] = value
    return out
