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
Interchange files: detections.json, gt.json and predictions.json.

Files carry corner-form boxes ``[x1, y1, x2, y2]`` in absolute pixels. Boxes are converted to
center form on ingestion and back to corner form on output.
"""

# standard
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# package
from da_hoi_tools.core.errors import AnnotationParseError, CategoryValidationError
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.taxonomy import Taxonomy
from da_hoi_tools.toolbelt.file_utils import read_json, write_atomic_json
from da_hoi_tools.toolbelt.log_handler import PlgLogger


@dataclass(frozen=True)
class Detection:
    """A scored, labeled box from any detector."""

    box: BBox
    category: int
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise AnnotationParseError(f"Detection score must be in [0, 1], got {self.score}")

    def to_dict(self) -> dict[str, Any]:
        return {"bbox": self.box.to_list(), "category_id": self.category, "score": self.score}


@dataclass(frozen=True)
class GroundTruthTriplet:
    human_box: BBox
    object_box: BBox
    object_id: int
    verb_id: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "human_bbox": self.human_box.to_list(),
            "object_bbox": self.object_box.to_list(),
            "object_id": self.object_id,
            "verb_id": self.verb_id,
        }


@dataclass(frozen=True)
class TripletPrediction:
    """One predicted (human, verb, object) triplet with its fused confidence."""

    human_box: BBox
    object_box: BBox
    object_id: int
    verb_id: int
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "human_bbox": self.human_box.to_list(),
            "object_bbox": self.object_box.to_list(),
            "object_id": self.object_id,
            "verb_id": self.verb_id,
            "score": self.score,
        }


@dataclass(frozen=True)
class ImageRecord:
    """Everything known about one image in an interchange file."""

    id: str
    width: int
    height: int
    detections: tuple[Detection, ...] = ()
    triplets: tuple[GroundTruthTriplet, ...] = ()
    predictions: tuple[TripletPrediction, ...] = field(default=(), compare=False)


# -- parsing ------------------------------------------------------------------


def _parse_box(raw: Any, path: str) -> BBox:
    if not isinstance(raw, list | tuple) or len(raw) != 4:
        raise AnnotationParseError("bbox must be a list of 4 numbers", path=path)
    try:
        return BBox.from_list([float(v) for v in raw])
    except (TypeError, ValueError) as err:
        raise AnnotationParseError(f"invalid bbox {raw}: {err}", path=path) from err


def _require(mapping: Any, key: str, path: str) -> Any:
    if not isinstance(mapping, Mapping):
        raise AnnotationParseError("expected an object", path=path)
    if key not in mapping:
        raise AnnotationParseError(f"missing field '{key}'", path=path)
    return mapping[key]


def _image_path(index: int, image_id: Any) -> str:
    return f"images[{index}](id={image_id})"


def _parse_images(data: Any, taxonomy: Taxonomy | None, source: str) -> list[ImageRecord]:
    images = _require(data, "images", source)
    if not isinstance(images, list):
        raise AnnotationParseError("'images' must be a list", path=source)

    records = []
    unknown_categories: set[int] = set()
    invalid_interactions: set[tuple[int, int]] = set()
    for i, raw_image in enumerate(images):
        image_id = str(_require(raw_image, "id", f"{source}.images[{i}]"))
        img_path = f"{source}.{_image_path(i, image_id)}"
        try:
            width = int(_require(raw_image, "width", img_path))
            height = int(_require(raw_image, "height", img_path))
        except (TypeError, ValueError) as err:
            raise AnnotationParseError(f"invalid image size: {err}", path=img_path) from err

        detections = []
        for j, raw_det in enumerate(raw_image.get("detections", [])):
            det_path = f"{img_path}.detections[{j}]"
            box = _parse_box(_require(raw_det, "bbox", det_path), f"{det_path}.bbox")
            try:
                category = int(_require(raw_det, "category_id", det_path))
                score = float(raw_det.get("score", 1.0))
            except (TypeError, ValueError) as err:
                raise AnnotationParseError(str(err), path=det_path) from err
            if not 0.0 <= score <= 1.0:
                raise AnnotationParseError(f"score {score} outside [0, 1]", path=f"{det_path}.score")
            if taxonomy is not None and not taxonomy.has_object(category):
                unknown_categories.add(category)
            detections.append(Detection(box=box, category=category, score=score))

        triplets = []
        for j, raw_t in enumerate(raw_image.get("triplets", [])):
            t_path = f"{img_path}.triplets[{j}]"
            human = _parse_box(_require(raw_t, "human_bbox", t_path), f"{t_path}.human_bbox")
            obj = _parse_box(_require(raw_t, "object_bbox", t_path), f"{t_path}.object_bbox")
            try:
                object_id = int(_require(raw_t, "object_id", t_path))
                verb_id = int(_require(raw_t, "verb_id", t_path))
            except (TypeError, ValueError) as err:
                raise AnnotationParseError(str(err), path=t_path) from err
            if taxonomy is not None and not taxonomy.is_valid(verb_id, object_id):
                invalid_interactions.add((verb_id, object_id))
            triplets.append(GroundTruthTriplet(human, obj, object_id, verb_id))

        records.append(
            ImageRecord(
                id=image_id,
                width=width,
                height=height,
                detections=tuple(detections),
                triplets=tuple(triplets),
            )
        )

    if unknown_categories:
        raise CategoryValidationError(f"{source}: categories not in taxonomy", sorted(unknown_categories))
    if invalid_interactions:
        raise CategoryValidationError(
            f"{source}: (verb, object) pairs not in taxonomy",
            [f"({v}, {o})" for v, o in sorted(invalid_interactions)],
        )
    return records


def ingest_detections(source: str | Path | Mapping[str, Any], taxonomy: Taxonomy | None = None) -> list[ImageRecord]:
    """Read a detections.json file into per-image detection lists.

    :param source: path to the file or its already-decoded content
    :type source: str | Path | Mapping[str, Any]
    :param taxonomy: when given, detection categories are checked against it
    :type taxonomy: Taxonomy | None
    :raises AnnotationParseError: schema violation, the message names the offending path
    :raises CategoryValidationError: categories missing from the taxonomy
    :return: one record per image, in file order
    :rtype: list[ImageRecord]
    """
    label = str(source) if isinstance(source, str | Path) else "detections"
    data = read_json(source) if isinstance(source, str | Path) else source
    records = _parse_images(data, taxonomy, label)
    PlgLogger.log(
        message=f"Ingested {sum(len(r.detections) for r in records)} detections over {len(records)} images",
        log_level=4,
    )
    return records


def load_ground_truth(source: str | Path | Mapping[str, Any], taxonomy: Taxonomy | None = None) -> list[ImageRecord]:
    """Read a gt.json file. Same schema as detections.json plus ``triplets``."""
    label = str(source) if isinstance(source, str | Path) else "ground truth"
    data = read_json(source) if isinstance(source, str | Path) else source
    return _parse_images(data, taxonomy, label)


def load_predictions(source: str | Path | Mapping[str, Any]) -> dict[str, list[TripletPrediction]]:
    """Read a predictions.json file into image id -> predictions."""
    label = str(source) if isinstance(source, str | Path) else "predictions"
    data = read_json(source) if isinstance(source, str | Path) else source
    images = _require(data, "images", label)
    out: dict[str, list[TripletPrediction]] = {}
    for i, raw_image in enumerate(images):
        image_id = str(_require(raw_image, "id", f"{label}.images[{i}]"))
        img_path = f"{label}.{_image_path(i, image_id)}"
        preds = []
        for j, raw in enumerate(raw_image.get("triplets", [])):
            p_path = f"{img_path}.triplets[{j}]"
            try:
                preds.append(
                    TripletPrediction(
                        human_box=_parse_box(_require(raw, "human_bbox", p_path), f"{p_path}.human_bbox"),
                        object_box=_parse_box(_require(raw, "object_bbox", p_path), f"{p_path}.object_bbox"),
                        object_id=int(_require(raw, "object_id", p_path)),
                        verb_id=int(_require(raw, "verb_id", p_path)),
                        score=float(_require(raw, "score", p_path)),
                    )
                )
            except (TypeError, ValueError) as err:
                if isinstance(err, AnnotationParseError):
                    raise
                raise AnnotationParseError(str(err), path=p_path) from err
        out[image_id] = preds
    return out


# -- writing ------------------------------------------------------------------


def _image_header(record: ImageRecord) -> dict[str, Any]:
    return {"id": record.id, "width": record.width, "height": record.height}


def detections_to_dict(records: Iterable[ImageRecord]) -> dict[str, Any]:
    return {"images": [{**_image_header(r), "detections": [d.to_dict() for d in r.detections]} for r in records]}


def ground_truth_to_dict(records: Iterable[ImageRecord]) -> dict[str, Any]:
    return {
        "images": [
            {
                **_image_header(r),
                "detections": [d.to_dict() for d in r.detections],
                "triplets": [t.to_dict() for t in r.triplets],
            }
            for r in records
        ]
    }


def predictions_to_dict(predictions: Iterable[tuple[str, Iterable[TripletPrediction]]]) -> dict[str, Any]:
    return {"images": [{"id": image_id, "triplets": [p.to_dict() for p in preds]} for image_id, preds in predictions]}


def write_detections(path: str | Path, records: Iterable[ImageRecord]) -> Path:
    return write_atomic_json(path, detections_to_dict(records))


def write_ground_truth(path: str | Path, records: Iterable[ImageRecord]) -> Path:
    return write_atomic_json(path, ground_truth_to_dict(records))


def write_predictions(path: str | Path, predictions: Iterable[tuple[str, Iterable[TripletPrediction]]]) -> Path:
    return write_atomic_json(path, predictions_to_dict(predictions))
