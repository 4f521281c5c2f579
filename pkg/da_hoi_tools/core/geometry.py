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
Box geometry: center-form boxes, corner conversion and intersection over union.
"""

# standard
import math
from collections.abc import Sequence
from dataclasses import dataclass

# package
from da_hoi_tools.core.errors import AnnotationParseError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in absolute pixels, stored in center form.

    :param cx: center x
    :param cy: center y
    :param w: width, strictly positive
    :param h: height, strictly positive
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise AnnotationParseError(f"Box has non-finite coordinates: {values}")
        if self.w <= 0 or self.h <= 0:
            raise AnnotationParseError(f"Box must have positive width and height, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        """Build a box from corner coordinates.

        :raises AnnotationParseError: x2 <= x1 or y2 <= y1
        """
        if x2 <= x1 or y2 <= y1:
            raise AnnotationParseError(f"Box corners [{x1}, {y1}, {x2}, {y2}] have zero or negative size")
        return cls(cx=(x1 + x2) / 2, cy=(y1 + y2) / 2, w=x2 - x1, h=y2 - y1)

    @classmethod
    def from_list(cls, corners: Sequence[float]) -> "BBox":
        if len(corners) != 4:
            raise AnnotationParseError(f"Box must have 4 coordinates, got {len(corners)}")
        return cls.from_corners(*(float(v) for v in corners))

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2)"""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_list(self) -> list[float]:
        return list(self.corners)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def scale(self, s: float) -> "BBox":
        """Scale the box and its position about the origin."""
        return BBox(self.cx * s, self.cy * s, self.w * s, self.h * s)

    def contains_point(self, x: float, y: float) -> bool:
        x1, y1, x2, y2 = self.corners
        return x1 <= x <= x2 and y1 <= y <= y2

    def intersects_image(self, width: float, height: float) -> bool:
        """True when the box interior overlaps the image rectangle."""
        x1, y1, x2, y2 = self.corners
        return x2 > 0 and y2 > 0 and x1 < width and y1 < height


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    :param a: first box
    :type a: BBox
    :param b: second box
    :type b: BBox
    :return: IoU in [0, 1]
    :rtype: float
    """
    if a == b:
        return 1.0
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    inter_w = min(ax2, bx2) - max(ax1, bx1)
    inter_h = min(ay2, by2) - max(ay1, by1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def pair_iou(human_a: BBox, object_a: BBox, human_b: BBox, object_b: BBox) -> tuple[float, float]:
    """IoU of the human boxes and of the object boxes of two pairs."""
    return iou(human_a, human_b), iou(object_a, object_b)
