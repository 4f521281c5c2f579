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
Human-object pair association, label assignment and zero-shot split construction.
"""

# standard
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace

# 3rd party
import numpy as np

# package
from da_hoi_tools.core.annotations import Detection, GroundTruthTriplet
from da_hoi_tools.core.errors import ConsistencyError, HoiRangeError, InvalidIdError
from da_hoi_tools.core.geometry import iou
from da_hoi_tools.core.taxonomy import FULL_SPLIT, Interaction, SplitSpec, Taxonomy, candidate_list
from da_hoi_tools.toolbelt.log_handler import PlgLogger

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class HOPair:
    """Ordered human-object candidate pair.

    ``human_index`` and ``object_index`` point into the detection list the pair was built
    from. Labels are filled in by the assignment functions and stay ``None`` at inference.
    """

    human: Detection
    object: Detection
    human_index: int
    object_index: int
    candidates: tuple[Interaction, ...] = ()
    interactiveness_label: int | None = None
    interaction_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.interaction_labels is not None and len(self.interaction_labels) != len(self.candidates):
            raise ConsistencyError(
                f"Label vector has {len(self.interaction_labels)} entries for {len(self.candidates)} candidates"
            )

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)


def associate_pairs(
    detections: Sequence[Detection],
    taxonomy: Taxonomy,
    split: SplitSpec = FULL_SPLIT,
    include_unseen: bool = True,
) -> list[HOPair]:
    """Pair every human detection with every other detection.

    The object side may itself be a human. Order is human index ascending, then object
    index ascending.

    :param detections: detections of one image
    :type detections: Sequence[Detection]
    :param taxonomy: taxonomy giving the human category and candidate lists
    :type taxonomy: Taxonomy
    :param split: zero-shot split applied to candidate lists
    :type split: SplitSpec
    :param include_unseen: keep unseen interactions in candidate lists
    :type include_unseen: bool
    :return: (#humans) x (len(detections) - 1) pairs
    :rtype: list[HOPair]
    """
    human_id = taxonomy.human_object_id
    pairs = []
    for j, human in enumerate(detections):
        if human.category != human_id:
            continue
        for k, obj in enumerate(detections):
            if k == j:
                continue
            pairs.append(
                HOPair(
                    human=human,
                    object=obj,
                    human_index=j,
                    object_index=k,
                    candidates=candidate_list(obj.category, taxonomy, split, include_unseen),
                )
            )
    return pairs


def matched_triplets(
    pair: HOPair, ground_truth: Iterable[GroundTruthTriplet], iou_threshold: float = DEFAULT_IOU_THRESHOLD
) -> list[GroundTruthTriplet]:
    """Ground-truth triplets overlapping the pair on both boxes (strictly above the threshold)."""
    return [
        gt
        for gt in ground_truth
        if pair.object.category == gt.object_id
        and iou(pair.human.box, gt.human_box) > iou_threshold
        and iou(pair.object.box, gt.object_box) > iou_threshold
    ]


def assign_interactiveness_labels(
    pairs: Sequence[HOPair],
    ground_truth: Sequence[GroundTruthTriplet],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[int]:
    """Binary interactiveness label per pair.

    :param pairs: pairs of one image
    :type pairs: Sequence[HOPair]
    :param ground_truth: triplets of the same image
    :type ground_truth: Sequence[GroundTruthTriplet]
    :param iou_threshold: minimum IoU (exclusive) on both boxes, in (0, 1)
    :type iou_threshold: float
    :raises HoiRangeError: threshold outside (0, 1)
    :return: 1 when some triplet of the same object category overlaps both boxes, else 0
    :rtype: list[int]
    """
    if not 0.0 < iou_threshold < 1.0:
        raise HoiRangeError(f"IoU threshold must be in (0, 1), got {iou_threshold}")
    return [int(bool(matched_triplets(p, ground_truth, iou_threshold))) for p in pairs]


def assign_interaction_labels(pair: HOPair, matched: Iterable[GroundTruthTriplet]) -> tuple[int, ...]:
    """Multi-hot label vector aligned with the pair's candidate list.

    :raises ConsistencyError: a matched verb is not among the candidates
    """
    verbs = {gt.verb_id for gt in matched}
    candidate_verbs = {c.verb_id for c in pair.candidates}
    missing = sorted(verbs - candidate_verbs)
    if missing:
        raise ConsistencyError(
            f"Ground-truth verbs {missing} are not in the candidate list of object {pair.object.category}"
        )
    return tuple(int(c.verb_id in verbs) for c in pair.candidates)


def label_pairs(
    pairs: Sequence[HOPair],
    ground_truth: Sequence[GroundTruthTriplet],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[HOPair]:
    """Return copies of the pairs carrying both labels."""
    labels = assign_interactiveness_labels(pairs, ground_truth, iou_threshold)
    out = []
    for pair, label in zip(pairs, labels, strict=True):
        matched = matched_triplets(pair, ground_truth, iou_threshold) if label else []
        out.append(
            replace(pair, interactiveness_label=label, interaction_labels=assign_interaction_labels(pair, matched))
        )
    return out


def sample_negatives(pairs: Sequence[HOPair], ratio: float, rng: np.random.Generator) -> list[HOPair]:
    """Keep every positive pair and at most ``ratio`` negatives per positive.

    A pair is positive when its interaction label vector has a 1. Input order is kept.
    """
    positives = [i for i, p in enumerate(pairs) if p.interaction_labels and any(p.interaction_labels)]
    kept = set(positives)
    negatives = [i for i in range(len(pairs)) if i not in kept]
    n_keep = min(len(negatives), int(round(ratio * len(positives))))
    if n_keep:
        kept.update(int(i) for i in rng.choice(negatives, size=n_keep, replace=False))
    return [p for i, p in enumerate(pairs) if i in kept]


def _take_by_count(ids_with_counts: list[tuple[int, int]], count: int, lowest: bool) -> list[int]:
    # ties always resolve towards the lower id
    ordered = sorted(ids_with_counts, key=lambda t: (t[1] if lowest else -t[1], t[0]))
    return [i for i, _ in ordered[:count]]


def build_zero_shot_split(
    taxonomy: Taxonomy,
    setting: str,
    hold_out_count: int | None = None,
    hold_out_ids: Iterable[int] | None = None,
) -> SplitSpec:
    """Build a zero-shot split.

    - ``RF-UC``: the ``hold_out_count`` interactions with the lowest training counts are unseen.
    - ``NF-UC``: same with the highest counts.
    - ``UO``: every interaction of the held-out objects is unseen.
    - ``UV``: every interaction of the held-out verbs is unseen.
    - ``full``: nothing is unseen.

    For RF-UC / NF-UC, ``hold_out_ids`` names interactions directly. For UO / UV it names
    objects / verbs; with only a count, the objects (verbs) with the fewest training
    occurrences are held out, the human category excluded.

    :raises HoiRangeError: more items requested than exist
    :raises InvalidIdError: unknown id
    :return: split validated against the taxonomy
    :rtype: SplitSpec
    """
    ids = None if hold_out_ids is None else sorted({int(i) for i in hold_out_ids})
    if setting == "full":
        return SplitSpec()
    if hold_out_count is not None and hold_out_count < 0:
        raise HoiRangeError(f"Hold-out count must be >= 0, got {hold_out_count}")
    if ids is None and hold_out_count is None:
        raise HoiRangeError(f"Setting {setting} needs a hold-out count or a list of ids")

    if setting in ("RF-UC", "NF-UC"):
        if ids is None:
            if hold_out_count > len(taxonomy.interactions):
                raise HoiRangeError(
                    f"Cannot hold out {hold_out_count} of {len(taxonomy.interactions)} interactions"
                )
            ids = _take_by_count(
                [(i.id, i.train_count) for i in taxonomy.interactions], hold_out_count, lowest=setting == "RF-UC"
            )
        unseen = frozenset(ids)
        split = SplitSpec(setting=setting, unseen_interaction_ids=unseen)
    elif setting == "UO":
        if ids is None:
            totals = {o.id: 0 for o in taxonomy.objects if o.id != taxonomy.human_object_id}
            for inter in taxonomy.interactions:
                if inter.object_id in totals:
                    totals[inter.object_id] += inter.train_count
            if hold_out_count > len(totals):
                raise HoiRangeError(f"Cannot hold out {hold_out_count} of {len(totals)} objects")
            ids = _take_by_count(list(totals.items()), hold_out_count, lowest=True)
        for object_id in ids:
            taxonomy.get_object(object_id)
        unseen = frozenset(i.id for i in taxonomy.interactions if i.object_id in ids)
        split = SplitSpec(setting=setting, unseen_interaction_ids=unseen, unseen_object_ids=frozenset(ids))
    elif setting == "UV":
        if ids is None:
            totals = {v.id: 0 for v in taxonomy.verbs}
            for inter in taxonomy.interactions:
                totals[inter.verb_id] += inter.train_count
            if hold_out_count > len(totals):
                raise HoiRangeError(f"Cannot hold out {hold_out_count} of {len(totals)} verbs")
            ids = _take_by_count(list(totals.items()), hold_out_count, lowest=True)
        for verb_id in ids:
            taxonomy.get_verb(verb_id)
        unseen = frozenset(i.id for i in taxonomy.interactions if i.verb_id in ids)
        split = SplitSpec(setting=setting, unseen_interaction_ids=unseen, unseen_verb_ids=frozenset(ids))
    else:
        raise InvalidIdError(f"Unknown split setting '{setting}'")

    PlgLogger.log(
        message=f"Split {setting}: {len(split.unseen_interaction_ids)} of {len(taxonomy.interactions)} interactions unseen",
        log_level=4,
    )
    return split.validate(taxonomy)
