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
Unit tests for toyworld module.
"""

import numpy as np
import pytest

from da_hoi_tools.core import toyworld
from da_hoi_tools.core.errors import ConfigError, GenerationError

RED = (220, 40, 40)
GRAY = (150, 150, 150)
HUMAN = toyworld.ToyEntity((10, 40, 26, 72), 0, RED, facing=1)


def thing(box, category=1, color=GRAY) -> toyworld.ToyEntity:
    return toyworld.ToyEntity(box, category, color)


@pytest.mark.unit
class TestRules:
    """Test the geometric interaction rules."""

    @pytest.mark.parametrize(
        "verb,box,expected",
        [
            ("holding", (14, 50, 20, 58), True),
            ("holding", (30, 50, 36, 58), False),
            ("riding", (6, 70, 30, 82), True),
            ("riding", (20, 70, 44, 82), False),
            ("riding", (6, 60, 30, 72), False),
            ("kicking", (28, 64, 36, 72), True),
            ("kicking", (2, 64, 10, 72), True),
            ("kicking", (40, 64, 48, 72), False),
            ("kicking", (28, 50, 36, 58), False),
            ("flying", (13, 20, 23, 30), True),
            ("flying", (13, 0, 23, 10), False),
            ("flying", (50, 20, 60, 30), False),
            ("watching", (40, 50, 48, 58), True),
            ("watching", (0, 50, 8, 58), False),
            ("watching", (70, 50, 78, 58), False),
            ("watching", (14, 50, 20, 58), False),
        ],
    )
    def test_rule(self, verb, box, expected):
        """Test each rule on hand-placed objects."""
        assert toyworld.RULES[verb](HUMAN, thing(box)) is expected

    def test_facing(self):
        """Test watching follows the facing direction."""
        left = toyworld.ToyEntity(HUMAN.box, 0, RED, facing=-1)
        assert toyworld.RULES["watching"](left, thing((0, 50, 8, 58)))
        assert not toyworld.RULES["watching"](left, thing((40, 50, 48, 58)))

    def test_painting(self):
        """Test painting needs the human's colour."""
        assert toyworld.RULES["painting"](HUMAN, thing((80, 0, 88, 8), color=RED))
        assert not toyworld.RULES["painting"](HUMAN, thing((80, 0, 88, 8)))

    def test_scene_labels(self, toy_taxonomy):
        """Test a held cup of the same colour is held and painted."""
        scene = toyworld.ToyScene("s", 96, 96, [HUMAN], [thing((14, 50, 20, 58), category=4, color=RED)])
        labels = toyworld.scene_labels(scene, toy_taxonomy)
        assert [(t.verb_id, t.object_id) for t in labels] == [(0, 4), (4, 4)]
        assert labels[0].human_box == HUMAN.bbox


@pytest.mark.unit
class TestToySceneSpec:
    """Test generation settings validation."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 0},
            {"min_humans": 0},
            {"min_humans": 3, "max_humans": 2},
            {"min_objects_per_human": 2, "max_objects_per_human": 1},
            {"human_size": (16, 200)},
            {"paint_prob": 1.5},
            {"facing_right_prob": -0.1},
            {"jitter_px": -1.0},
            {"max_retries": 0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test invalid settings are rejected."""
        with pytest.raises(ConfigError):
            toyworld.ToySceneSpec(**kwargs)


@pytest.mark.unit
class TestGenerate:
    """Test dataset generation."""

    def test_deterministic(self):
        """Test one seed gives identical scenes and pixels."""
        spec = toyworld.ToySceneSpec(seed=11)
        first, second = toyworld.generate(spec, 3), toyworld.generate(spec, 3)
        assert first.ground_truth == second.ground_truth
        for image_id in first.images:
            assert np.array_equal(first.images[image_id], second.images[image_id])

    def test_geometric(self):
        """Test the geometric preset paints nothing and turns every human right, layouts unchanged."""
        plain = toyworld.generate(toyworld.ToySceneSpec(seed=3), 8)
        geometric = toyworld.generate(toyworld.ToySceneSpec.geometric(seed=3), 8)
        for a, b in zip(plain.scenes, geometric.scenes, strict=True):
            assert [h.box for h in a.humans] == [h.box for h in b.humans]
            assert [o.box for o in a.objects] == [o.box for o in b.objects]
            assert all(h.facing == 1 for h in b.humans)
        painting = geometric.taxonomy.verbs[4].id
        assert not any(t.verb_id == painting for r in geometric.ground_truth for t in r.triplets)

    def test_threads(self):
        """Test threaded generation equals the sequential one."""
        spec = toyworld.ToySceneSpec(seed=4)
        assert toyworld.generate(spec, 4, jobs=3).ground_truth == toyworld.generate(spec, 4).ground_truth

    def test_labels_follow_rules(self):
        """Test ground truth is exactly the rule output."""
        dataset = toyworld.generate(toyworld.ToySceneSpec(seed=2), 5)
        for scene, record in zip(dataset.scenes, dataset.ground_truth):
            assert list(record.triplets) == toyworld.scene_labels(scene, dataset.taxonomy)
            assert scene.id == record.id

    def test_images(self):
        """Test image shape and identifiers."""
        dataset = toyworld.generate(toyworld.ToySceneSpec(width=80, height=64, seed=1), 2)
        assert [r.id for r in dataset.ground_truth] == ["toy_00000", "toy_00001"]
        image = dataset.load_image("toy_00001")
        assert image.shape == (64, 80, 3)
        assert image.dtype == np.uint8

    def test_train_counts(self):
        """Test the returned taxonomy counts the generated triplets."""
        dataset = toyworld.generate(toyworld.ToySceneSpec(seed=3), 6)
        total = sum(len(r.triplets) for r in dataset.ground_truth)
        assert sum(i.train_count for i in dataset.taxonomy.interactions) == total

    def test_no_jitter(self):
        """Test detections equal the exact boxes without jitter."""
        dataset = toyworld.generate(toyworld.ToySceneSpec(seed=5), 3)
        for det, gt in zip(dataset.detections, dataset.ground_truth):
            assert det.detections == gt.detections
            assert det.triplets == ()

    def test_jitter(self):
        """Test jitter moves boxes but keeps them in the image."""
        spec = toyworld.ToySceneSpec(seed=5, jitter_px=3.0)
        dataset = toyworld.generate(spec, 3)
        moved = 0
        for det, gt in zip(dataset.detections, dataset.ground_truth):
            assert [d.category for d in det.detections] == [d.category for d in gt.detections]
            for noisy, exact in zip(det.detections, gt.detections):
                x1, y1, x2, y2 = noisy.box.corners
                assert 0 <= x1 < x2 <= spec.width
                assert 0 <= y1 < y2 <= spec.height
                moved += noisy.box != exact.box
        assert moved > 0

    def test_empty(self):
        """Test zero scenes is allowed and negative counts are not."""
        assert toyworld.generate(toyworld.ToySceneSpec(), 0).ground_truth == []
        with pytest.raises(ConfigError):
            toyworld.generate(toyworld.ToySceneSpec(), -1)

    def test_unplaceable_humans(self):
        """Test a canvas too small for the humans fails."""
        spec = toyworld.ToySceneSpec(width=16, height=32, min_humans=2, max_humans=2, max_retries=3)
        with pytest.raises(GenerationError):
            toyworld.generate(spec, 1)


@pytest.mark.unit
class TestRender:
    """Test scene rendering."""

    def test_human(self, toy_taxonomy):
        """Test body, head and background pixels."""
        human = toyworld.ToyEntity((4, 8, 20, 40), 0, RED, facing=1)
        pixels = toyworld.render_scene(toyworld.ToyScene("s", 32, 48, [human], []), toy_taxonomy)
        assert tuple(pixels[0, 0]) == toyworld.BACKGROUND
        assert tuple(pixels[30, 10]) == RED
        assert tuple(pixels[8, 19]) == toyworld.HEAD_COLOR
        assert tuple(pixels[8, 4]) == RED
