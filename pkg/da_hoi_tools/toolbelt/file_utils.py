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
File helpers: atomic writes and JSON reading.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any

from da_hoi_tools.core.errors import AnnotationParseError, HoiIOError


def write_atomic_bytes(path: str | Path, data: bytes) -> Path:
    """Write bytes to ``path`` through a temporary file and a rename.

    :param path: destination file
    :type path: str | Path
    :param data: file content
    :type data: bytes
    :raises HoiIOError: destination directory missing or not writable
    :return: destination path
    :rtype: Path
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as err:
        raise HoiIOError(f"Cannot write to {path.parent}: {err}") from err
    try:
        with os.fdopen(fd, "wb") as tmp:
            tmp.write(data)
        os.replace(tmp_name, path)
    except OSError as err:
        Path(tmp_name).unlink(missing_ok=True)
        raise HoiIOError(f"Cannot write {path}: {err}") from err
    return path


def write_atomic_text(path: str | Path, text: str) -> Path:
    return write_atomic_bytes(path, text.encode("UTF-8"))


def dumps_json(obj: Any) -> str:
    """Serialize with a stable layout so that repeated runs are byte-identical."""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic_json(path: str | Path, obj: Any) -> Path:
    return write_atomic_text(path, dumps_json(obj))


def read_json(path: str | Path) -> Any:
    """Read a JSON document.

    :raises AnnotationParseError: missing file or malformed JSON
    """
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="UTF-8"))
    except FileNotFoundError as err:
        raise AnnotationParseError(f"{path}: file not found") from err
    except json.JSONDecodeError as err:
        raise AnnotationParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from err
