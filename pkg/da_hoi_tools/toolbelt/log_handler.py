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

import logging
import sys
from typing import Literal

import da_hoi_tools.toolbelt.preferences as plg_prefs_hdlr
from da_hoi_tools.__about__ import __title__, __title_clean__

LOGGER_NAME = "da_hoi_tools"

# legacy integer levels, same convention used across the package
LEVEL_INFO = 0
LEVEL_WARNING = 1
LEVEL_CRITICAL = 2
LEVEL_SUCCESS = 3
LEVEL_TRACE = 4

_PY_LEVELS: dict[int, int] = {
    LEVEL_INFO: logging.INFO,
    LEVEL_WARNING: logging.WARNING,
    LEVEL_CRITICAL: logging.ERROR,
    LEVEL_SUCCESS: logging.INFO,
    LEVEL_TRACE: logging.DEBUG,
}


def _package_logger() -> logging.Logger:
    """Return the package logger, attaching a stderr handler on first use."""
    logger = logging.getLogger(LOGGER_NAME)
    if not any(isinstance(h, PlgLogger) for h in logger.handlers):
        handler = PlgLogger()
        handler.setFormatter(logging.Formatter(f"[{__title_clean__}] %(levelname)s: %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)
        logger.propagate = False
    return logger


class PlgLogger(logging.Handler):
    """Python logging handler writing package messages to the standard error stream."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            stream = sys.stderr
            stream.write(self.format(record) + "\n")
            stream.flush()
        except Exception:
            self.handleError(record)

    @staticmethod
    def log(
        message: str,
        application: str = __title__,
        log_level: Literal[0, 1, 2, 3, 4] = LEVEL_INFO,
        push: bool = False,
    ):
        """Send messages to the package logger. If debug mode is disabled, only \
        warnings (1) and errors (2) or messages with push are sent.

        :param message: message to display
        :type message: str
        :param application: name of the application sending the message. \
        Defaults to __about__.__title__
        :type application: str, optional
        :param log_level: message level. 0 (info), 1 (warning), 2 (critical), \
            3 (success), 4 (trace). Defaults to 0 (info)
        :type log_level: Literal[0, 1, 2, 3, 4], optional
        :param push: user-facing message, always emitted whatever the debug mode, \
        defaults to False
        :type push: bool, optional

        :Example:

        .. code-block:: python

            log(message="Checkpoint loaded - INFO", log_level=0, push=False)
            log(message="Empty candidate list for object 12", log_level=1)
            log(message="Training failed - CRITICAL", log_level=2, push=True)
            log(message="Epoch 3/30 done - SUCCESS", log_level=3)
            log(message="roi_align box (12.0, 4.5, 30.0, 22.0)", log_level=4)
        """
        settings = plg_prefs_hdlr.PlgOptionsManager.get_plg_settings()
        # if not debug mode and not push, let's ignore INFO, SUCCESS and TRACE
        if not settings.debug_mode and not push and log_level not in (LEVEL_WARNING, LEVEL_CRITICAL):
            return
        # trace messages need the extra verbosity level
        if log_level == LEVEL_TRACE and settings.verbosity < 2 and not push:
            return

        # ensure message is a string
        if not isinstance(message, str):
            try:
                message = str(message)
            except Exception as err:
                message = f"Log message must be a string, not: {type(message)}. Trace: {err}"
                log_level = LEVEL_CRITICAL

        if application != __title__:
            message = f"{application}: {message}"
        if log_level == LEVEL_SUCCESS:
            message = f"OK {message}"

        _package_logger().log(_PY_LEVELS.get(int(log_level), logging.INFO), message)
