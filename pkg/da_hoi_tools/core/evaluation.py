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
Triplet mAP evaluation and text-output metrics.

A prediction is a true positive when its interaction matches a ground-truth triplet whose
human and object boxes both overlap it with IoU >= 0.5, each ground truth being matched at
most once. Average precision is computed per interaction and averaged over the Full,
Seen, Unseen, Rare and Non-Rare interaction sets.
"""

# standard
import csv
import io
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any

# 3rd party
import numpy as np

# package
from da_hoi_tools.core.annotations import GroundTruthTriplet, ImageRecord, TripletPrediction
from da_hoi_tools.core.errors import CategoryValidationError, ConfigError, UndefinedRateError
from da_hoi_tools.core.geometry import pair_iou
from da_hoi_tools.core.scorer import ParsedAnswer
from da_hoi_tools.core.taxonomy import FULL_SPLIT, SplitSpec, Taxonomy
from da_hoi_tools.toolbelt.file_utils import write_atomic_json, write_atomic_text
from da_hoi_tools.toolbelt.log_handler import PlgLogger

DEFAULT_IOU_MIN = 0.5
DEFAULT_RARE_THRESHOLD = 10
INTERPOLATIONS = ("all_point", "11_point", "101_point")
AGGREGATE_KEYS = ("full", "seen", "unseen", "rare", "non_rare")

Predictions = Mapping[str, Sequence[TripletPrediction]] | Iterable[tuple[str, Sequence[TripletPrediction]]]


def match_triplets(
    predictions: Sequence[TripletPrediction],
    ground_truth: Sequence[GroundTruthTriplet],
    iou_min: float = DEFAULT_IOU_MIN,
) -> list[bool]:
    """Greedy true-positive flags for the predictions of one image.

    Predictions are visited in the given order, which must be descending score. Each one
    takes the unmatched ground truth of its interaction maximising ``min(IoU_h, IoU_o)``
    with both IoUs at least ``iou_min``; ties go to the lower ground-truth index.

    :param predictions: one image's predictions, descending score
    :type predictions: Sequence[TripletPrediction]
    :param ground_truth: the same image's ground-truth triplets
    :type ground_truth: Sequence[GroundTruthTriplet]
    :param iou_min: box overlap threshold
    :type iou_min: float
    :return: True for each true positive, aligned with ``predictions``
    :rtype: list[bool]
    """
    matched = [False] * len(ground_truth)
    flags = []
    for pred in predictions:
        best, best_overlap = -1, -1.0
        for j, gt in enumerate(ground_truth):
            if matched[j] or gt.object_id != pred.object_id or gt.verb_id != pred.verb_id:
                continue
            iou_h, iou_o = pair_iou(pred.human_box, pred.object_box, gt.human_box, gt.object_box)
            overlap = min(iou_h, iou_o)
            if overlap >= iou_min and overlap > best_overlap:
                best, best_overlap = j, overlap
        if best >= 0:
            matched[best] = True
        flags.append(best >= 0)
    return flags


def _precision_recall(flags: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return recall, precision


def average_precision(flags: Sequence[bool], n_gt: int, interpolation: str = "all_point") -> float | None:
    """Area under the precision-recall curve of a ranked list of TP/FP flags.

    ``all_point`` is the exact area under the interpolated (monotone envelope) step curve;
    ``11_point`` and ``101_point`` average the envelope at evenly spaced recall levels.

    :param flags: true-positive flags in descending score order
    :type flags: Sequence[bool]
    :param n_gt: number of ground truths of the class
    :type n_gt: int
    :param interpolation: one of ``all_point``, ``11_point``, ``101_point``
    :type interpolation: str
    :raises ConfigError: unknown interpolation
    :return: AP in [0, 1], None when there is no ground truth
    :rtype: float | None
    """
    if interpolation not in INTERPOLATIONS:
        raise ConfigError(f"Unknown interpolation '{interpolation}'. Must be one of: {','.join(INTERPOLATIONS)}")
    if n_gt <= 0:
        return None
    if not flags:
        return 0.0
    recall, precision = _precision_recall(flags, n_gt)

    if interpolation == "all_point":
        mrec = np.concatenate(([0.0], recall, [1.0]))
        mpre = np.concatenate(([0.0], precision, [0.0]))
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.where(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))

    levels = np.linspace(0.0, 1.0, 11 if interpolation == "11_point" else 101)
    sampled = [float(precision[recall >= t].max()) if np.any(recall >= t) else 0.0 for t in levels]
    return float(np.mean(sampled))


@dataclass
class EvalReport:
    """Per-interaction AP and aggregate mAPs. Aggregates over empty sets are None."""

    per_interaction_ap: dict[int, float]
    gt_counts: dict[int, int]
    full: float | None = None
    seen: float | None = None
    unseen: float | None = None
    rare: float | None = None
    non_rare: float | None = None
    rare_threshold: int = DEFAULT_RARE_THRESHOLD
    iou_min: float = DEFAULT_IOU_MIN
    interpolation: str = "all_point"
    split_setting: str = "full"
    notes: list[str] = field(default_factory=list)

    def aggregates(self) -> dict[str, float | None]:
        return {key: getattr(self, key) for key in AGGREGATE_KEYS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "aggregates": {k: v for k, v in self.aggregates().items() if v is not None},
            "per_interaction": [
                {"interaction_id": i, "ap": self.per_interaction_ap[i], "n_gt": self.gt_counts[i]}
                for i in sorted(self.per_interaction_ap)
            ],
            "protocol": {
                "iou_min": self.iou_min,
                "interpolation": self.interpolation,
                "rare_threshold": self.rare_threshold,
                "split_setting": self.split_setting,
            },
            "notes": list(self.notes),
        }

    def to_json(self, path: str | Path) -> Path:
        return write_atomic_json(path, self.to_dict())

    def to_csv(self, path: str | Path, taxonomy: Taxonomy | None = None) -> Path:
        """Per-interaction AP as CSV, with phrases when a taxonomy is given."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["interaction_id", "phrase", "n_gt", "ap"])
        phrases = taxonomy.phrases() if taxonomy is not None else None
        for i in sorted(self.per_interaction_ap):
            phrase = phrases[i] if phrases is not None else ""
            writer.writerow([i, phrase, self.gt_counts[i], f"{self.per_interaction_ap[i]:.6f}"])
        return write_atomic_text(path, buffer.getvalue())

    def summary(self) -> str:
        parts = [f"{k}={v * 100:.2f}" for k, v in self.aggregates().items() if v is not None]
        return " ".join(parts) if parts else "no ground truth"


def _as_mapping(predictions: Predictions) -> dict[str, list[TripletPrediction]]:
    if isinstance(predictions, Mapping):
        items = predictions.items()
    else:
        items = predictions
    merged: dict[str, list[TripletPrediction]] = defaultdict(list)
    for image_id, preds in items:
        merged[image_id].extend(preds)
    return dict(merged)


def _mean(values: list[float]) -> float | None:
    return fmean(values) if values else None


def map_report(
    predictions: Predictions,
    ground_truth: Sequence[ImageRecord],
    taxonomy: Taxonomy,
    split: SplitSpec = FULL_SPLIT,
    iou_min: float = DEFAULT_IOU_MIN,
    rare_threshold: int = DEFAULT_RARE_THRESHOLD,
    interpolation: str = "all_point",
    jobs: int = 1,
) -> EvalReport:
    """Evaluate predictions against ground truth.

    :param predictions: image id to predictions, as a mapping or (id, list) pairs
    :type predictions: Predictions
    :param ground_truth: records with ground-truth triplets
    :type ground_truth: Sequence[ImageRecord]
    :param taxonomy: interaction vocabulary
    :type taxonomy: Taxonomy
    :param split: zero-shot split used for the Seen and Unseen aggregates
    :type split: SplitSpec
    :param rare_threshold: interactions with fewer training instances are rare
    :type rare_threshold: int
    :param jobs: worker threads for the per-interaction AP
    :type jobs: int
    :raises CategoryValidationError: a prediction or ground truth names an unknown interaction
    :return: evaluation report
    :rtype: EvalReport
    """
    log = PlgLogger().log
    by_image = _as_mapping(predictions)

    offenders = sorted(
        {
            f"({t.verb_id}, {t.object_id})"
            for records in (by_image.values(), [r.triplets for r in ground_truth])
            for triplets in records
            for t in triplets
            if not taxonomy.is_valid(t.verb_id, t.object_id)
        }
    )
    if offenders:
        raise CategoryValidationError("Triplets reference interactions outside the taxonomy", offenders)

    gt_ids = {r.id for r in ground_truth}
    ignored = sorted(set(by_image) - gt_ids)
    if ignored:
        log(message=f"Ignoring predictions for {len(ignored)} image(s) without ground truth", log_level=1)

    gt_counts: dict[int, int] = defaultdict(int)
    scored: dict[int, list[tuple[float, bool]]] = defaultdict(list)
    for record in ground_truth:
        for t in record.triplets:
            gt_counts[taxonomy.interaction(t.verb_id, t.object_id).id] += 1
        preds = sorted(by_image.get(record.id, []), key=lambda p: -p.score)
        for pred, flag in zip(preds, match_triplets(preds, record.triplets, iou_min), strict=True):
            scored[taxonomy.interaction(pred.verb_id, pred.object_id).id].append((pred.score, flag))

    def class_ap(interaction_id: int) -> float | None:
        ranked = sorted(scored.get(interaction_id, []), key=lambda item: -item[0])
        return average_precision([flag for _, flag in ranked], gt_counts[interaction_id], interpolation)

    class_ids = sorted(gt_counts)
    if jobs > 1 and len(class_ids) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            aps = list(pool.map(class_ap, class_ids))
    else:
        aps = [class_ap(i) for i in class_ids]
    per_ap = {i: ap for i, ap in zip(class_ids, aps, strict=True) if ap is not None}

    rare_ids = taxonomy.rare_interaction_ids(rare_threshold)
    report = EvalReport(
        per_interaction_ap=per_ap,
        gt_counts={i: gt_counts[i] for i in per_ap},
        full=_mean(list(per_ap.values())),
        seen=_mean([ap for i, ap in per_ap.items() if not split.is_unseen(i)]),
        unseen=_mean([ap for i, ap in per_ap.items() if split.is_unseen(i)]),
        rare=_mean([ap for i, ap in per_ap.items() if i in rare_ids]),
        non_rare=_mean([ap for i, ap in per_ap.items() if i not in rare_ids]),
        rare_threshold=rare_threshold,
        iou_min=iou_min,
        interpolation=interpolation,
        split_setting=split.setting,
        notes=[f"rare means fewer than {rare_threshold} training instances"],
    )
    log(message=f"mAP over {len(per_ap)} interactions: {report.summary()}", log_level=0)
    return report


@dataclass(frozen=True)
class TextOutputMetrics:
    """Rates over free-form answers. ``single_output_rate`` is None when every answer is an error."""

    n_answers: int
    format_error_rate: float
    single_output_rate: float | None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"n_answers": self.n_answers, "format_error_rate": self.format_error_rate}
        if self.single_output_rate is not None:
            data["single_output_rate"] = self.single_output_rate
        return data


def text_output_metrics(answers: Sequence[ParsedAnswer]) -> TextOutputMetrics:
    """Format error rate and single output rate of parsed answers.

    :raises UndefinedRateError: no answers
    """
    if not answers:
        raise UndefinedRateError("Text-output rates are undefined without answers")
    valid = [a for a in answers if not a.format_error]
    errors = len(answers) - len(valid)
    single = sum(1 for a in valid if len(a.indices) == 1)
    return TextOutputMetrics(
        n_answers=len(answers),
        format_error_rate=errors / len(answers),
        single_output_rate=single / len(valid) if valid else None,
    )
