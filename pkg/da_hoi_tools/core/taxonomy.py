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
Interaction taxonomy: objects, verbs, valid verb-object interactions and zero-shot splits.
"""

# standard
import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# package
from da_hoi_tools.core.errors import AnnotationParseError, ConsistencyError, InvalidIdError
from da_hoi_tools.toolbelt.file_utils import dumps_json, read_json, write_atomic_json

SPLIT_SETTINGS = ("RF-UC", "NF-UC", "UO", "UV", "full")


@dataclass(frozen=True)
class ObjectCategory:
    id: int
    name: str
    article: str = "a"


@dataclass(frozen=True)
class Verb:
    id: int
    gerund: str


@dataclass(frozen=True)
class Interaction:
    """A valid verb-object combination. ``id`` is its position in the taxonomy file."""

    id: int
    verb_id: int
    object_id: int
    train_count: int = 0


@dataclass(frozen=True)
class Taxonomy:
    """Objects, verbs and valid interactions.

    The candidate map (object id -> interactions) is derived once at construction and
    ordered by ascending interaction id.
    """

    human_object_id: int
    objects: tuple[ObjectCategory, ...]
    verbs: tuple[Verb, ...]
    interactions: tuple[Interaction, ...]
    _objects_by_id: dict = field(init=False, repr=False, compare=False)
    _verbs_by_id: dict = field(init=False, repr=False, compare=False)
    _by_pair: dict = field(init=False, repr=False, compare=False)
    _candidates: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        objects_by_id = {o.id: o for o in self.objects}
        verbs_by_id = {v.id: v for v in self.verbs}
        if len(objects_by_id) != len(self.objects):
            raise ConsistencyError("Duplicate object ids in taxonomy")
        if len(verbs_by_id) != len(self.verbs):
            raise ConsistencyError("Duplicate verb ids in taxonomy")
        if self.human_object_id not in objects_by_id:
            raise ConsistencyError(f"Human category {self.human_object_id} is not a taxonomy object")

        by_pair: dict[tuple[int, int], Interaction] = {}
        candidates: dict[int, list[Interaction]] = {}
        for position, inter in enumerate(self.interactions):
            if inter.id != position:
                raise ConsistencyError(f"Interaction ids must follow file order, got {inter.id} at {position}")
            if inter.verb_id not in verbs_by_id:
                raise InvalidIdError(f"Interaction {inter.id} references unknown verb {inter.verb_id}")
            if inter.object_id not in objects_by_id:
                raise InvalidIdError(f"Interaction {inter.id} references unknown object {inter.object_id}")
            key = (inter.verb_id, inter.object_id)
            if key in by_pair:
                raise ConsistencyError(f"Interaction (verb {key[0]}, object {key[1]}) is listed twice")
            by_pair[key] = inter
            candidates.setdefault(inter.object_id, []).append(inter)

        object.__setattr__(self, "_objects_by_id", objects_by_id)
        object.__setattr__(self, "_verbs_by_id", verbs_by_id)
        object.__setattr__(self, "_by_pair", by_pair)
        object.__setattr__(self, "_candidates", {k: tuple(v) for k, v in candidates.items()})

    # -- lookups -------------------------------------------------------------

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_verbs(self) -> int:
        return len(self.verbs)

    def get_object(self, object_id: int) -> ObjectCategory:
        try:
            return self._objects_by_id[object_id]
        except KeyError as err:
            raise InvalidIdError(f"Unknown object id {object_id}") from err

    def get_verb(self, verb_id: int) -> Verb:
        try:
            return self._verbs_by_id[verb_id]
        except KeyError as err:
            raise InvalidIdError(f"Unknown verb id {verb_id}") from err

    def has_object(self, object_id: int) -> bool:
        return object_id in self._objects_by_id

    def interaction(self, verb_id: int, object_id: int) -> Interaction:
        """Get the interaction for a (verb, object) pair.

        :raises InvalidIdError: unknown ids or the combination is not valid
        """
        self.get_verb(verb_id)
        self.get_object(object_id)
        try:
            return self._by_pair[(verb_id, object_id)]
        except KeyError as err:
            raise InvalidIdError(f"(verb {verb_id}, object {object_id}) is not a valid interaction") from err

    def is_valid(self, verb_id: int, object_id: int) -> bool:
        return (verb_id, object_id) in self._by_pair

    def interactions_of_object(self, object_id: int) -> tuple[Interaction, ...]:
        """Full candidate list of an object, empty when it takes part in no interaction."""
        self.get_object(object_id)
        return self._candidates.get(object_id, ())

    def rare_interaction_ids(self, rare_threshold: int = 10) -> frozenset[int]:
        return frozenset(i.id for i in self.interactions if i.train_count < rare_threshold)

    def phrases(self) -> list[str]:
        return [render_phrase(i.verb_id, i.object_id, self) for i in self.interactions]

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form, used to detect checkpoint/taxonomy mismatches."""
        return hashlib.sha256(dumps_json(self.to_dict()).encode("UTF-8")).hexdigest()

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "human_object_id": self.human_object_id,
            "objects": [{"id": o.id, "name": o.name, "article": o.article} for o in self.objects],
            "verbs": [{"id": v.id, "gerund": v.gerund} for v in self.verbs],
            "interactions": [
                {"verb_id": i.verb_id, "object_id": i.object_id, "train_count": i.train_count}
                for i in self.interactions
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Taxonomy":
        """Build a taxonomy from the taxonomy.json mapping.

        :raises AnnotationParseError: missing or mistyped fields
        """
        try:
            objects = tuple(
                ObjectCategory(int(o["id"]), str(o["name"]), str(o.get("article", "a"))) for o in data["objects"]
            )
            verbs = tuple(Verb(int(v["id"]), str(v["gerund"])) for v in data["verbs"])
            interactions = tuple(
                Interaction(idx, int(i["verb_id"]), int(i["object_id"]), int(i.get("train_count", 0)))
                for idx, i in enumerate(data["interactions"])
            )
            human = int(data["human_object_id"])
        except KeyError as err:
            raise AnnotationParseError(f"missing field {err}", path="taxonomy") from err
        except (TypeError, ValueError) as err:
            raise AnnotationParseError(str(err), path="taxonomy") from err
        return cls(human_object_id=human, objects=objects, verbs=verbs, interactions=interactions)

    @classmethod
    def load(cls, path: str | Path) -> "Taxonomy":
        return cls.from_dict(read_json(path))

    def save(self, path: str | Path) -> Path:
        return write_atomic_json(path, self.to_dict())


@dataclass(frozen=True)
class SplitSpec:
    """Zero-shot split: which interactions, objects and verbs are unseen during training."""

    setting: str = "full"
    unseen_interaction_ids: frozenset[int] = frozenset()
    unseen_object_ids: frozenset[int] = frozenset()
    unseen_verb_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.setting not in SPLIT_SETTINGS:
            raise ConsistencyError(f"Unknown split setting '{self.setting}'. Must be one of: {','.join(SPLIT_SETTINGS)}")
        for name in ("unseen_interaction_ids", "unseen_object_ids", "unseen_verb_ids"):
            object.__setattr__(self, name, frozenset(int(v) for v in getattr(self, name)))

    def is_unseen(self, interaction_id: int) -> bool:
        return interaction_id in self.unseen_interaction_ids

    def seen_ids(self, taxonomy: Taxonomy) -> frozenset[int]:
        return frozenset(i.id for i in taxonomy.interactions) - self.unseen_interaction_ids

    def validate(self, taxonomy: Taxonomy) -> "SplitSpec":
        """Check the split against a taxonomy.

        Every unseen object (verb) must bring all of its interactions into the unseen set.

        :raises InvalidIdError: unknown ids
        :raises ConsistencyError: an unseen object or verb still has seen interactions
        """
        known = {i.id for i in taxonomy.interactions}
        unknown = sorted(self.unseen_interaction_ids - known)
        if unknown:
            raise InvalidIdError(f"Split references unknown interaction ids: {unknown}")
        for object_id in self.unseen_object_ids:
            taxonomy.get_object(object_id)
        for verb_id in self.unseen_verb_ids:
            taxonomy.get_verb(verb_id)
        for inter in taxonomy.interactions:
            hidden_by_part = inter.object_id in self.unseen_object_ids or inter.verb_id in self.unseen_verb_ids
            if hidden_by_part and inter.id not in self.unseen_interaction_ids:
                raise ConsistencyError(
                    f"Interaction {inter.id} belongs to an unseen object or verb but is marked seen"
                )
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "setting": self.setting,
            "unseen_interaction_ids": sorted(self.unseen_interaction_ids),
            "unseen_object_ids": sorted(self.unseen_object_ids),
            "unseen_verb_ids": sorted(self.unseen_verb_ids),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SplitSpec":
        try:
            return cls(
                setting=str(data.get("setting", "full")),
                unseen_interaction_ids=frozenset(data.get("unseen_interaction_ids", [])),
                unseen_object_ids=frozenset(data.get("unseen_object_ids", [])),
                unseen_verb_ids=frozenset(data.get("unseen_verb_ids", [])),
            )
        except (TypeError, ValueError) as err:
            raise AnnotationParseError(str(err), path="split") from err

    @classmethod
    def load(cls, path: str | Path) -> "SplitSpec":
        return cls.from_dict(read_json(path))

    def save(self, path: str | Path) -> Path:
        return write_atomic_json(path, self.to_dict())


FULL_SPLIT = SplitSpec()


def render_phrase(verb_id: int, object_id: int, taxonomy: Taxonomy) -> str:
    """Render an interaction as ``"<gerund> <article> <object name>"``.

    :param verb_id: verb id
    :type verb_id: int
    :param object_id: object id
    :type object_id: int
    :param taxonomy: taxonomy holding both
    :type taxonomy: Taxonomy
    :raises InvalidIdError: unknown id or invalid combination
    :return: phrase such as "holding an umbrella"
    :rtype: str
    """
    taxonomy.interaction(verb_id, object_id)
    obj = taxonomy.get_object(object_id)
    return f"{taxonomy.get_verb(verb_id).gerund} {obj.article} {obj.name}"


def candidate_list(
    object_id: int,
    taxonomy: Taxonomy,
    split: SplitSpec = FULL_SPLIT,
    include_unseen: bool = True,
) -> tuple[Interaction, ...]:
    """Ordered candidate interactions of an object category.

    :param object_id: object category id
    :type object_id: int
    :param taxonomy: taxonomy
    :type taxonomy: Taxonomy
    :param split: zero-shot split
    :type split: SplitSpec
    :param include_unseen: keep unseen interactions (evaluation) or drop them (training)
    :type include_unseen: bool
    :return: interactions by ascending id, possibly empty
    :rtype: tuple[Interaction, ...]
    """
    candidates = taxonomy.interactions_of_object(object_id)
    if include_unseen:
        return candidates
    return tuple(c for c in candidates if not split.is_unseen(c.id))


def interaction_phrases(interactions: Iterable[Interaction], taxonomy: Taxonomy) -> list[str]:
    return [render_phrase(i.verb_id, i.object_id, taxonomy) for i in interactions]
