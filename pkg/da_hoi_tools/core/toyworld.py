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
Toy world: procedurally rendered scenes with exact interaction ground truth.

Humans are coloured upright rectangles with a white head marker on the side they face.
Objects are small shapes placed relative to a human. Interactions are decided by rules
over the placed geometry and colours, so labels can always be recomputed from a scene:

- holding: object center strictly inside the human box
- riding: object spans the human center line with its top edge in the human foot band
- kicking: object beside the human's feet, at most a few pixels away
- flying: object above the human's head, horizontally close
- painting: object has the human's colour (appearance only)
- watching: the human faces the object, which is within reach and not held
"""

# standard
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

# 3rd party
import numpy as np
from PIL import Image

# package
from da_hoi_tools.core.annotations import (
    Detection,
    GroundTruthTriplet,
    ImageRecord,
    write_detections,
    write_ground_truth,
)
from da_hoi_tools.core.errors import ConfigError, GenerationError
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.taxonomy import Interaction, ObjectCategory, SplitSpec, Taxonomy, Verb
from da_hoi_tools.toolbelt.log_handler import PlgLogger

Corners = tuple[int, int, int, int]

BACKGROUND = (24, 24, 24)
HEAD_COLOR = (255, 255, 255)
HUMAN_COLORS = ((220, 40, 40), (40, 200, 60), (50, 80, 230), (230, 210, 40))
OBJECT_COLORS = ((150, 150, 150), (140, 90, 40), (120, 0, 160))

# band widths, in pixels, used by the spatial rules
FOOT_BAND = 4
KICK_GAP = 4
SKY_GAP = 2
SKY_REACH = 24
WATCH_REACH = 40

# object category name -> (width, height, relations the generator may place it in)
OBJECT_SHAPES: dict[str, tuple[int, int, tuple[str, ...]]] = {
    "ball": (8, 8, ("hold", "kick", "free")),
    "kite": (10, 10, ("hold", "fly", "free")),
    "horse": (24, 12, ("ride", "free")),
    "cup": (6, 8, ("hold", "free")),
}


def default_toy_taxonomy() -> Taxonomy:
    """Six verbs and four objects (plus the human) with twelve interactions."""
    objects = (
        ObjectCategory(0, "person", "a"),
        ObjectCategory(1, "ball", "a"),
        ObjectCategory(2, "kite", "a"),
        ObjectCategory(3, "horse", "a"),
        ObjectCategory(4, "cup", "a"),
    )
    verbs = tuple(
        Verb(i, gerund) for i, gerund in enumerate(("holding", "riding", "kicking", "flying", "painting", "watching"))
    )
    pairs = [(0, 1), (2, 1), (4, 1), (5, 1), (0, 2), (3, 2), (5, 2), (1, 3), (4, 3), (5, 3), (0, 4), (4, 4)]
    interactions = tuple(Interaction(i, verb, obj) for i, (verb, obj) in enumerate(pairs))
    return Taxonomy(human_object_id=0, objects=objects, verbs=verbs, interactions=interactions)


@dataclass(frozen=True)
class ToyEntity:
    """A rendered entity: integer corner box, category, colour and facing (humans only)."""

    box: Corners
    category: int
    color: tuple[int, int, int]
    facing: int = 1

    @property
    def cx(self) -> float:
        return (self.box[0] + self.box[2]) / 2

    @property
    def cy(self) -> float:
        return (self.box[1] + self.box[3]) / 2

    @property
    def bbox(self) -> BBox:
        return BBox.from_corners(*self.box)


@dataclass
class ToyScene:
    id: str
    width: int
    height: int
    humans: list[ToyEntity]
    objects: list[ToyEntity]


@dataclass
class ToySceneSpec:
    """Generation settings. Every scene is reproducible from ``seed`` and its index.

    With ``paint_prob`` 0 and ``facing_right_prob`` 1 every label is a function of the boxes
    alone, see :meth:`geometric`.
    """

    width: int = 96
    height: int = 96
    min_humans: int = 1
    max_humans: int = 2
    min_objects_per_human: int = 1
    max_objects_per_human: int = 2
    human_size: tuple[int, int] = (16, 32)
    paint_prob: float = 0.3
    facing_right_prob: float = 0.5
    jitter_px: float = 0.0
    max_retries: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"Canvas must be positive, got {self.width}x{self.height}")
        if not 1 <= self.min_humans <= self.max_humans:
            raise ConfigError("Need 1 <= min_humans <= max_humans")
        if not 0 <= self.min_objects_per_human <= self.max_objects_per_human:
            raise ConfigError("Need 0 <= min_objects_per_human <= max_objects_per_human")
        w, h = self.human_size
        if w <= 0 or h <= 0 or w > self.width or h > self.height:
            raise ConfigError(f"Human size {self.human_size} does not fit a {self.width}x{self.height} canvas")
        if not 0.0 <= self.paint_prob <= 1.0:
            raise ConfigError(f"paint_prob must be in [0, 1], got {self.paint_prob}")
        if not 0.0 <= self.facing_right_prob <= 1.0:
            raise ConfigError(f"facing_right_prob must be in [0, 1], got {self.facing_right_prob}")
        if self.jitter_px < 0:
            raise ConfigError(f"jitter_px must be non-negative, got {self.jitter_px}")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be at least 1")

    @classmethod
    def geometric(cls, **overrides) -> "ToySceneSpec":
        """Scenes whose verbs follow from box geometry: no painted objects, every human faces right."""
        return cls(**{"paint_prob": 0.0, "facing_right_prob": 1.0, **overrides})


# -- interaction rules ------------------------------------------------------------


def _holding(human: ToyEntity, obj: ToyEntity) -> bool:
    x1, y1, x2, y2 = human.box
    return x1 < obj.cx < x2 and y1 < obj.cy < y2


def _riding(human: ToyEntity, obj: ToyEntity) -> bool:
    return obj.box[0] <= human.cx <= obj.box[2] and human.box[3] - FOOT_BAND <= obj.box[1] <= human.box[3]


def _kicking(human: ToyEntity, obj: ToyEntity) -> bool:
    gap = max(obj.box[0] - human.box[2], human.box[0] - obj.box[2])
    return 0 <= gap <= KICK_GAP and human.box[3] - FOOT_BAND <= obj.box[3] <= human.box[3]


def _flying(human: ToyEntity, obj: ToyEntity) -> bool:
    gap = human.box[1] - obj.box[3]
    width = human.box[2] - human.box[0]
    return SKY_GAP <= gap <= SKY_REACH and abs(obj.cx - human.cx) <= width


def _painting(human: ToyEntity, obj: ToyEntity) -> bool:
    return obj.color == human.color


def _watching(human: ToyEntity, obj: ToyEntity) -> bool:
    offset = obj.cx - human.cx
    return offset * human.facing > 0 and abs(offset) <= WATCH_REACH and not _holding(human, obj)


RULES: dict[str, Callable[[ToyEntity, ToyEntity], bool]] = {
    "holding": _holding,
    "riding": _riding,
    "kicking": _kicking,
    "flying": _flying,
    "painting": _painting,
    "watching": _watching,
}


def scene_labels(scene: ToyScene, taxonomy: Taxonomy) -> list[GroundTruthTriplet]:
    """Apply the rules to every (human, object) pair of a scene.

    Verbs without a rule never fire. Triplets are ordered by human, object, then interaction id.
    """
    triplets = []
    for human in scene.humans:
        for obj in scene.objects:
            for inter in taxonomy.interactions_of_object(obj.category):
                rule = RULES.get(taxonomy.get_verb(inter.verb_id).gerund)
                if rule is not None and rule(human, obj):
                    triplets.append(GroundTruthTriplet(human.bbox, obj.bbox, obj.category, inter.verb_id))
    return triplets


# -- placement ----------------------------------------------------------------------


def _overlaps(a: Corners, b: Corners, margin: int = 0) -> bool:
    return a[0] < b[2] + margin and b[0] < a[2] + margin and a[1] < b[3] + margin and b[1] < a[3] + margin


def _inside(box: Corners, width: int, height: int) -> bool:
    return box[0] >= 0 and box[1] >= 0 and box[2] <= width and box[3] <= height


def _propose(relation: str, human: Corners, size: tuple[int, int], spec: ToySceneSpec, rng: np.random.Generator) -> Corners:
    w, h = size
    hx1, hy1, hx2, hy2 = human
    if relation == "hold":
        cx = rng.integers(hx1 + w // 2 + 1, max(hx1 + w // 2 + 2, hx2 - w // 2))
        cy = rng.integers(hy1 + h // 2 + 1, max(hy1 + h // 2 + 2, hy2 - h // 2))
        x1, y1 = int(cx) - w // 2, int(cy) - h // 2
    elif relation == "ride":
        x1 = int(rng.integers(hx1 + (hx2 - hx1) // 2 - w + 1, hx1 + (hx2 - hx1) // 2))
        y1 = hy2 - int(rng.integers(0, FOOT_BAND))
    elif relation == "kick":
        gap = int(rng.integers(0, KICK_GAP + 1))
        x1 = hx2 + gap if rng.random() < 0.5 else hx1 - gap - w
        y1 = hy2 - h - int(rng.integers(0, FOOT_BAND))
    elif relation == "fly":
        x1 = int(rng.integers(hx1 - w // 2, hx2 - w // 2 + 1))
        y1 = hy1 - h - int(rng.integers(SKY_GAP, SKY_REACH + 1))
    else:
        x1 = int(rng.integers(0, max(1, spec.width - w + 1)))
        y1 = int(rng.integers(0, max(1, spec.height - h + 1)))
    return (x1, y1, x1 + w, y1 + h)


def _place_humans(spec: ToySceneSpec, rng: np.random.Generator, count: int) -> list[ToyEntity]:
    w, h = spec.human_size
    colors = rng.permutation(len(HUMAN_COLORS))
    humans: list[ToyEntity] = []
    for index in range(count):
        for _ in range(spec.max_retries):
            x1 = int(rng.integers(0, spec.width - w + 1))
            y1 = int(rng.integers(0, spec.height - h + 1))
            box = (x1, y1, x1 + w, y1 + h)
            if not any(_overlaps(box, other.box, margin=KICK_GAP + 8) for other in humans):
                break
        else:
            raise GenerationError(f"Could not place human {index + 1} of {count} after {spec.max_retries} attempts")
        facing = 1 if rng.random() < spec.facing_right_prob else -1
        humans.append(ToyEntity(box, 0, HUMAN_COLORS[int(colors[index % len(HUMAN_COLORS)])], facing))
    return humans


def _place_object(
    spec: ToySceneSpec,
    rng: np.random.Generator,
    taxonomy: Taxonomy,
    owner: ToyEntity,
    humans: list[ToyEntity],
    objects: list[ToyEntity],
) -> ToyEntity | None:
    names = [name for name in OBJECT_SHAPES if any(o.name == name for o in taxonomy.objects)]
    if not names:
        return None
    name = names[int(rng.integers(0, len(names)))]
    category = next(o.id for o in taxonomy.objects if o.name == name)
    w, h, relations = OBJECT_SHAPES[name]
    relation = relations[int(rng.integers(0, len(relations)))]
    painted = rng.random() < spec.paint_prob
    color = owner.color if painted else OBJECT_COLORS[int(rng.integers(0, len(OBJECT_COLORS)))]
    for _ in range(spec.max_retries):
        box = _propose(relation, owner.box, (w, h), spec, rng)
        if not _inside(box, spec.width, spec.height):
            continue
        if any(_overlaps(box, other.box, margin=1) for other in objects):
            continue
        blocked = [hm for hm in humans if relation not in ("hold", "ride") or hm is not owner]
        if any(_overlaps(box, hm.box) for hm in blocked):
            continue
        return ToyEntity(box, category, color)
    return None


def build_scene(spec: ToySceneSpec, taxonomy: Taxonomy, index: int) -> ToyScene:
    """Lay out scene ``index`` for ``spec``.

    Objects whose relation cannot be satisfied are dropped, humans must always fit.

    :raises GenerationError: humans cannot be placed within the retry budget
    """
    rng = np.random.default_rng([spec.seed, index, 0])
    count = int(rng.integers(spec.min_humans, spec.max_humans + 1))
    humans = _place_humans(spec, rng, count)
    objects: list[ToyEntity] = []
    for owner in humans:
        for _ in range(int(rng.integers(spec.min_objects_per_human, spec.max_objects_per_human + 1))):
            placed = _place_object(spec, rng, taxonomy, owner, humans, objects)
            if placed is not None:
                objects.append(placed)
    return ToyScene(id=f"toy_{index:05d}", width=spec.width, height=spec.height, humans=humans, objects=objects)


# -- rendering ------------------------------------------------------------------------


def _shape_mask(name: str, box: Corners, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = box
    inside = (xx >= x1) & (xx < x2) & (yy >= y1) & (yy < y2)
    cx, cy = (x1 + x2 - 1) / 2, (y1 + y2 - 1) / 2
    rx, ry = (x2 - x1) / 2, (y2 - y1) / 2
    if name == "ball":
        return inside & (((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0)
    if name == "kite":
        return inside & (np.abs(xx - cx) / rx + np.abs(yy - cy) / ry <= 1.0)
    if name == "horse":
        body = inside & (yy < y1 + (y2 - y1) * 2 // 3)
        legs = inside & ((xx - x1) % 6 < 2)
        return body | legs
    if name == "cup":
        return inside & ~((yy < y1 + 2) & (xx > x1) & (xx < x2 - 1))
    return inside


def render_scene(scene: ToyScene, taxonomy: Taxonomy) -> np.ndarray:
    """Draw a scene as an (H, W, 3) uint8 array, humans first and objects on top."""
    pixels = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    pixels[:] = BACKGROUND
    yy, xx = np.mgrid[0 : scene.height, 0 : scene.width]
    for human in scene.humans:
        x1, y1, x2, y2 = human.box
        pixels[y1:y2, x1:x2] = human.color
        head = 4
        hx = x2 - head if human.facing > 0 else x1
        pixels[y1 : y1 + head, hx : hx + head] = HEAD_COLOR
    for obj in scene.objects:
        name = taxonomy.get_object(obj.category).name
        pixels[_shape_mask(name, obj.box, yy, xx)] = obj.color
    return pixels


# -- detections ---------------------------------------------------------------------


def jitter_detections(
    detections: Sequence[Detection], jitter_px: float, rng: np.random.Generator, width: int, height: int
) -> list[Detection]:
    """Imperfect-detector emulation: Gaussian noise on every box corner, clipped to the image.

    Noise is drawn even when ``jitter_px`` is 0 so that one generator state yields boxes
    whose error grows linearly with ``jitter_px``.
    """
    out = []
    for det in detections:
        noise = rng.standard_normal(4) * jitter_px
        if jitter_px <= 0:
            out.append(det)
            continue
        x1, y1, x2, y2 = (c + float(n) for c, n in zip(det.box.corners, noise, strict=True))
        x1, x2 = sorted((min(max(x1, 0.0), width - 1.0), min(max(x2, 1.0), float(width))))
        y1, y2 = sorted((min(max(y1, 0.0), height - 1.0), min(max(y2, 1.0), float(height))))
        x2, y2 = max(x2, x1 + 1.0), max(y2, y1 + 1.0)
        out.append(Detection(BBox.from_corners(x1, y1, x2, y2), det.category, det.score))
    return out


def scene_detections(scene: ToyScene) -> list[Detection]:
    return [Detection(e.bbox, e.category, 1.0) for e in (*scene.humans, *scene.objects)]


# -- generation ---------------------------------------------------------------------


@dataclass
class ToyDataset:
    """Generated scenes. ``ground_truth`` carries exact boxes, ``detections`` the jittered ones."""

    taxonomy: Taxonomy
    scenes: list[ToyScene]
    ground_truth: list[ImageRecord]
    detections: list[ImageRecord]
    images: dict[str, np.ndarray] = field(default_factory=dict)

    def load_image(self, image_id: str) -> np.ndarray:
        return self.images[image_id]


def with_train_counts(taxonomy: Taxonomy, records: Sequence[ImageRecord]) -> Taxonomy:
    """Copy of ``taxonomy`` whose train counts are the triplet counts of ``records``."""
    counts = [0] * len(taxonomy.interactions)
    for record in records:
        for t in record.triplets:
            counts[taxonomy.interaction(t.verb_id, t.object_id).id] += 1
    return replace(taxonomy, interactions=tuple(replace(i, train_count=counts[i.id]) for i in taxonomy.interactions))


def _generate_one(spec: ToySceneSpec, taxonomy: Taxonomy, index: int) -> tuple[ToyScene, ImageRecord, ImageRecord, np.ndarray]:
    scene = build_scene(spec, taxonomy, index)
    exact = scene_detections(scene)
    rng = np.random.default_rng([spec.seed, index, 1])
    noisy = jitter_detections(exact, spec.jitter_px, rng, scene.width, scene.height)
    gt = ImageRecord(scene.id, scene.width, scene.height, tuple(exact), tuple(scene_labels(scene, taxonomy)))
    det = ImageRecord(scene.id, scene.width, scene.height, tuple(noisy))
    return scene, gt, det, render_scene(scene, taxonomy)


def generate(spec: ToySceneSpec, n_images: int, taxonomy: Taxonomy | None = None, jobs: int = 1) -> ToyDataset:
    """Generate ``n_images`` scenes.

    :param spec: generation settings
    :type spec: ToySceneSpec
    :param n_images: number of scenes, may be 0
    :type n_images: int
    :param taxonomy: object and verb vocabulary, the default toy taxonomy when None
    :type taxonomy: Taxonomy | None
    :param jobs: worker threads, scenes are independent
    :type jobs: int
    :raises GenerationError: a scene cannot be laid out
    :return: scenes, annotations and pixels; the taxonomy carries the generated train counts
    :rtype: ToyDataset
    """
    if n_images < 0:
        raise ConfigError(f"n_images must be non-negative, got {n_images}")
    taxonomy = taxonomy or default_toy_taxonomy()
    if jobs > 1 and n_images > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda i: _generate_one(spec, taxonomy, i), range(n_images)))
    else:
        results = [_generate_one(spec, taxonomy, i) for i in range(n_images)]
    ground_truth = [r[1] for r in results]
    PlgLogger.log(message=f"Generated {n_images} toy scenes (jitter {spec.jitter_px} px)", log_level=4)
    return ToyDataset(
        taxonomy=with_train_counts(taxonomy, ground_truth),
        scenes=[r[0] for r in results],
        ground_truth=ground_truth,
        detections=[r[2] for r in results],
        images={r[0].id: r[3] for r in results},
    )


def write_dataset(dataset: ToyDataset, directory: str | Path, split: SplitSpec | None = None) -> Path:
    """Write ``images/*.png``, ``detections.json``, ``gt.json``, ``taxonomy.json`` and optionally ``split.json``."""
    directory = Path(directory)
    image_dir = directory / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    for image_id, pixels in dataset.images.items():
        Image.fromarray(pixels).save(image_dir / f"{image_id}.png", format="PNG")
    write_detections(directory / "detections.json", dataset.detections)
    write_ground_truth(directory / "gt.json", dataset.ground_truth)
    dataset.taxonomy.save(directory / "taxonomy.json")
    if split is not None:
        split.save(directory / "split.json")
    PlgLogger.log(message=f"Toy dataset written to {directory}", log_level=0)
    return directory
