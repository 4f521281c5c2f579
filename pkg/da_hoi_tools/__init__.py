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

"""Detector-agnostic human-object interaction toolkit."""

from .__about__ import __version__  # noqa: F401
