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
Integration tests for toy dataset files.
"""

import numpy as np

from da_hoi_tools.core.annotations import ingest_detections, load_ground_truth
from da_hoi_tools.core.backbone import read_image
from da_hoi_tools.core.taxonomy import SplitSpec, Taxonomy
from da_hoi_tools.core.toyworld import write_dataset
from da_hoi_tools.core.training import HoiDataset


class TestWriteDataset:
    """Generated scenes written to and read back from disk."""

    def test_layout(self, toy_world, tmp_path):
        """Test every file is written, the split only when given."""
        directory = write_dataset(toy_world, tmp_path / "plain")
        assert {p.name for p in directory.iterdir()} == {"images", "detections.json", "gt.json", "taxonomy.json"}
        assert len(list((directory / "images").glob("*.png"))) == len(toy_world.scenes)

        split = SplitSpec(setting="UO", unseen_interaction_ids=frozenset({4, 5, 6}), unseen_object_ids=frozenset({2}))
        directory = write_dataset(toy_world, tmp_path / "split", split)
        assert SplitSpec.load(directory / "split.json") == split

    def test_read_back(self, toy_world, tmp_path):
        """Test pixels, annotations and taxonomy read back unchanged."""
        directory = write_dataset(toy_world, tmp_path / "data")
        taxonomy = Taxonomy.load(directory / "taxonomy.json")
        assert taxonomy == toy_world.taxonomy
        assert load_ground_truth(directory / "gt.json", taxonomy) == toy_world.ground_truth
        assert ingest_detections(directory / "detections.json", taxonomy) == toy_world.detections
        for image_id, pixels in toy_world.images.items():
            assert np.array_equal(read_image(directory / "images" / f"{image_id}.png"), pixels)

    def test_training_dataset(self, toy_world, tmp_path):
        """Test a training dataset built from the files finds its images."""
        directory = write_dataset(toy_world, tmp_path / "data")
        dataset = HoiDataset.from_files(directory / "gt.json", toy_world.taxonomy)
        assert len(dataset) == len(toy_world.scenes)
        first = toy_world.ground_truth[0].id
        assert np.array_equal(dataset.image(first), toy_world.images[first])
