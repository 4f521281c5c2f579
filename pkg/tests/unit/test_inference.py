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
Unit tests for the pure steps of inference module.
"""

import numpy as np
import pytest
import torch
from PIL import Image

from da_hoi_tools.core import inference
from da_hoi_tools.core.backbone import FeatureMap
from da_hoi_tools.core.errors import ConfigError
from da_hoi_tools.core.geometry import BBox


@pytest.mark.unit
class TestFilterPairs:
    """Test the interactiveness gate."""

    def test_threshold(self):
        """Test pairs at or above lambda are kept in order."""
        assert inference.filter_pairs([0.2, 0.5, 0.9], 0.5) == [1, 2]

    def test_extremes(self):
        """Test lambda 0 keeps all pairs and lambda 1 keeps only certain ones."""
        scores = [0.0, 0.3, 0.99]
        assert inference.filter_pairs(scores, 0.0) == [0, 1, 2]
        assert inference.filter_pairs(scores, 1.0) == []

    def test_monotone(self):
        """Test raising lambda never adds pairs."""
        scores = list(np.random.default_rng(1).random(30))
        kept = [set(inference.filter_pairs(scores, lam)) for lam in np.linspace(0, 1, 11)]
        for looser, tighter in zip(kept, kept[1:]):
            assert tighter <= looser


@pytest.mark.unit
class TestFuseScores:
    """Test the fused triplet confidence."""

    def test_product(self):
        """Test the four factors multiply."""
        assert inference.fuse_scores(0.8, 0.9, 0.7, 0.5) == pytest.approx(0.252)

    def test_monotone(self):
        """Test the fused score grows with each factor."""
        base = inference.fuse_scores(0.5, 0.5, 0.5, 0.5)
        for k in range(4):
            factors = [0.5] * 4
            factors[k] = 0.6
            assert inference.fuse_scores(*factors) > base

    def test_zero(self):
        """Test any zero factor zeroes the result."""
        assert inference.fuse_scores(0.0, 1.0, 1.0, 1.0) == 0.0


@pytest.mark.unit
class TestCandidateOrder:
    """Test candidate list shuffling."""

    def test_identity(self):
        """Test no seed keeps the taxonomy order."""
        assert inference.candidate_order(5, None, "img", 0) == [0, 1, 2, 3, 4]
        assert inference.candidate_order(1, 3, "img", 0) == [0]

    def test_permutation(self):
        """Test a seed yields a reproducible permutation."""
        first = inference.candidate_order(8, 3, "img", 2)
        assert sorted(first) == list(range(8))
        assert inference.candidate_order(8, 3, "img", 2) == first

    def test_depends_on_pair(self):
        """Test different images or pairs get independent orders."""
        orders = {tuple(inference.candidate_order(10, 0, f"img{i}", j)) for i in range(3) for j in range(3)}
        assert len(orders) > 1


@pytest.mark.unit
class TestInferenceConfig:
    """Test inference settings validation."""

    def test_defaults(self):
        """Test the default thresholds."""
        config = inference.InferenceConfig()
        assert config.lambda_ == 0.15
        assert config.final_threshold == 0.15
        assert config.candidate_permutation_seed is None

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambda_": -0.1},
            {"lambda_": 1.5},
            {"final_threshold": 2.0},
            {"mode": "beam"},
            {"backend": "remote"},
            {"feature_source": "mask"},
        ],
    )
    def test_invalid(self, kwargs):
        """Test out-of-range or unknown values are rejected."""
        with pytest.raises(ConfigError):
            inference.InferenceConfig(**kwargs)

    def test_from_config_needs_checkpoint(self, toy_taxonomy):
        """Test a detector cannot be built without a checkpoint path."""
        with pytest.raises(ConfigError):
            inference.HoiDetector.from_config(inference.InferenceConfig(), toy_taxonomy)


@pytest.mark.unit
class TestRenderAttention:
    """Test attention map rendering."""

    def test_uniform(self):
        """Test uniform weights render as constant white."""
        pixels = inference.render_attention(torch.full((2, 3), 1 / 6), 4, (12, 8))
        assert pixels.shape == (8, 12)
        assert pixels.dtype == np.uint8
        assert (pixels == 255).all()

    def test_single_cell(self):
        """Test one attended cell becomes one bright stride block."""
        weights = torch.zeros(2, 2)
        weights[0, 1] = 0.7
        pixels = inference.render_attention(weights, 8, (16, 16))
        assert (pixels[:8, 8:] == 255).all()
        assert pixels[:8, :8].max() == 0
        assert pixels[8:].max() == 0

    def test_scaled_by_peak(self):
        """Test values scale linearly against the maximum."""
        pixels = inference.render_attention(torch.tensor([[0.5, 1.0]]), 1, (2, 1))
        assert pixels.tolist() == [[128, 255]]

    def test_cropped(self):
        """Test blocks beyond the image size are cropped."""
        pixels = inference.render_attention(torch.ones(2, 2), 8, (13, 11))
        assert pixels.shape == (11, 13)

    def test_zero_map(self):
        """Test an all-zero map renders black."""
        assert inference.render_attention(torch.zeros(2, 2), 2, (4, 4)).max() == 0

    def test_reference_pixels(self):
        """Test a hand-set map renders to pinned gray levels, half values rounded to even."""
        pixels = inference.render_attention(torch.tensor([[0.0, 1.0], [0.5, 0.25]]), 2, (4, 4))
        assert pixels[::2, ::2].tolist() == [[0, 255], [128, 64]]


@pytest.mark.unit
class TestDumpAttention:
    """Test the attention PNG files."""

    def uniform_checkpoint(self, checkpoint):
        with torch.no_grad():
            for param in checkpoint.model.sap.cross_attention.parameters():
                param.zero_()
        return checkpoint

    def test_uniform_map(self, checkpoint, tmp_path):
        """Test zeroed attention weights decode to a white image of the image size."""
        grid = torch.randn(3, 3, 8, generator=torch.Generator().manual_seed(0))
        fmap = FeatureMap(grid=grid, stride=8, image_size=(24, 20))
        path = inference.dump_attention(
            self.uniform_checkpoint(checkpoint), "img", 3, fmap, BBox.from_corners(0, 0, 8, 12), BBox.from_corners(12, 6, 18, 12), tmp_path
        )
        assert path == tmp_path / "img_3.png"
        with Image.open(path) as image:
            assert image.mode == "L"
            assert np.asarray(image).tolist() == np.full((20, 24), 255).tolist()

    def test_byte_identical(self, checkpoint, tmp_path):
        """Test two dumps of the same pair write the same bytes."""
        grid = torch.randn(3, 3, 8, generator=torch.Generator().manual_seed(1))
        fmap = FeatureMap(grid=grid, stride=8, image_size=(24, 24))
        pair = (BBox.from_corners(0, 0, 8, 12), BBox.from_corners(12, 6, 18, 12))
        first = inference.dump_attention(checkpoint, "a", 0, fmap, *pair, tmp_path / "one")
        second = inference.dump_attention(checkpoint, "a", 0, fmap, *pair, tmp_path / "two")
        assert first.read_bytes() == second.read_bytes()
