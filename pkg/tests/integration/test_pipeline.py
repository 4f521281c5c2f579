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
Integration tests for end-to-end inference on the toy world.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
import torch
from PIL import Image

from da_hoi_tools.core import inference
from da_hoi_tools.core.annotations import Detection
from da_hoi_tools.core.checkpoint import new_checkpoint
from da_hoi_tools.core.errors import CompatibilityError, InvalidInputError
from da_hoi_tools.core.evaluation import map_report
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.prompts import GENERATION, OPEN_MCQ
from da_hoi_tools.core.taxonomy import FULL_SPLIT
from da_hoi_tools.core.toyworld import ToySceneSpec, generate


class OracleScorer:
    """Scores 1 for candidates present in the ground truth of the pair, 0 otherwise."""

    def __init__(self, ground_truth):
        self.truth = {r.id: {(t.human_box, t.object_box, t.verb_id) for t in r.triplets} for r in ground_truth}

    def score(self, ctx: inference.PairContext) -> torch.Tensor:
        truth = self.truth[ctx.image_id]
        key = (ctx.pair.human.box, ctx.pair.object.box)
        return torch.tensor([float((*key, c.verb_id) in truth) for c in ctx.pair.candidates])


class DetectionIndexOracle:
    """Scores by detection index against the exact boxes, so jittered boxes keep their labels."""

    def __init__(self, ground_truth):
        self.truth = {}
        for record in ground_truth:
            index = {d.box: i for i, d in enumerate(record.detections)}
            self.truth[record.id] = {(index[t.human_box], index[t.object_box], t.verb_id) for t in record.triplets}

    def score(self, ctx: inference.PairContext) -> torch.Tensor:
        truth = self.truth[ctx.image_id]
        key = (ctx.pair.human_index, ctx.pair.object_index)
        return torch.tensor([float((*key, c.verb_id) in truth) for c in ctx.pair.candidates])


@pytest.fixture()
def world_checkpoint(toy_world, tiny_config):
    return new_checkpoint(toy_world.taxonomy, tiny_config)


def stub_detector(checkpoint, **kwargs) -> inference.HoiDetector:
    config = inference.InferenceConfig(**{"lambda_": 0.0, "final_threshold": 0.0, "backend": "stub", **kwargs})
    return inference.HoiDetector(checkpoint, config, checkpoint.taxonomy)


class TestDetect:
    """Single-image detection."""

    def test_matching_one_call_per_pair(self, toy_world, world_checkpoint):
        """Test matching runs the backend once per scored pair."""
        detector = stub_detector(world_checkpoint)
        for record in toy_world.detections:
            trace = inference.DetectionTrace()
            predictions = detector.detect(record.id, toy_world.load_image(record.id), record.detections, trace)
            scored = [p for p in detector.pairs(record.detections) if p.candidates]
            assert trace.backend_calls == len(scored)
            assert trace.n_retained == len(scored)
            assert len(predictions) == sum(p.n_candidates for p in scored)

    def test_generation_one_call_per_candidate(self, toy_world, world_checkpoint):
        """Test generation runs the backend once per candidate."""
        detector = stub_detector(world_checkpoint, mode=GENERATION)
        record = toy_world.detections[0]
        trace = inference.DetectionTrace()
        detector.detect(record.id, toy_world.load_image(record.id), record.detections, trace)
        assert trace.backend_calls == sum(p.n_candidates for p in detector.pairs(record.detections))

    def test_sorted_and_bounded(self, toy_world, world_checkpoint):
        """Test predictions are in descending score order inside [0, 1]."""
        detector = stub_detector(world_checkpoint)
        record = toy_world.detections[1]
        predictions = detector.detect(record.id, toy_world.load_image(record.id), record.detections)
        scores = [p.score for p in predictions]
        assert scores == sorted(scores, reverse=True)
        assert all(0.0 <= s <= 1.0 for s in scores)

    def test_no_humans(self, toy_world, world_checkpoint):
        """Test an image without humans yields nothing and no backend call."""
        detector = stub_detector(world_checkpoint)
        objects = [Detection(BBox.from_corners(2, 2, 10, 10), 1), Detection(BBox.from_corners(20, 20, 30, 30), 2)]
        trace = inference.DetectionTrace()
        assert detector.detect("empty", toy_world.load_image("toy_00000"), objects, trace) == []
        assert trace.backend_calls == 0

    def test_lambda_gate(self, toy_world, world_checkpoint):
        """Test lambda 1 drops every pair before scoring."""
        detector = stub_detector(world_checkpoint, lambda_=1.0)
        record = toy_world.detections[0]
        trace = inference.DetectionTrace()
        assert detector.detect(record.id, toy_world.load_image(record.id), record.detections, trace) == []
        assert trace.backend_calls == 0

    def test_roi_features(self, toy_world, world_checkpoint):
        """Test the training-free path scores every pair with interactiveness 1."""
        detector = stub_detector(world_checkpoint, feature_source="roi")
        record = toy_world.detections[0]
        predictions = detector.detect(record.id, toy_world.load_image(record.id), record.detections)
        assert len(predictions) == sum(p.n_candidates for p in detector.pairs(record.detections))

    def test_deterministic(self, toy_world, world_checkpoint):
        """Test repeated runs with the toy backend agree."""
        config = inference.InferenceConfig(lambda_=0.0, final_threshold=0.0)
        detector = inference.HoiDetector(world_checkpoint, config)
        record = toy_world.detections[2]
        image = toy_world.load_image(record.id)
        assert detector.detect(record.id, image, record.detections) == detector.detect(record.id, image, record.detections)

    def test_detect_hoi_checks_taxonomy(self, toy_world, world_checkpoint, toy_taxonomy):
        """Test the single-image wrapper refuses a taxonomy other than the checkpoint's."""
        record = toy_world.detections[0]
        config = inference.InferenceConfig(lambda_=0.0, final_threshold=0.0, backend="stub")
        image = toy_world.load_image(record.id)
        with pytest.raises(CompatibilityError):
            inference.detect_hoi(
                image, record.detections, FULL_SPLIT, config, world_checkpoint, record.id, taxonomy=toy_taxonomy
            )
        predictions = inference.detect_hoi(
            image, record.detections, FULL_SPLIT, config, world_checkpoint, record.id, taxonomy=toy_world.taxonomy
        )
        assert predictions == stub_detector(world_checkpoint).detect(record.id, image, record.detections)

    def test_attention_dump(self, toy_world, world_checkpoint, tmp_path):
        """Test one grayscale PNG of the image size per scored pair."""
        detector = stub_detector(world_checkpoint, attention_dir=str(tmp_path))
        record = toy_world.detections[0]
        trace = inference.DetectionTrace()
        detector.detect(record.id, toy_world.load_image(record.id), record.detections, trace)
        assert len(trace.attention_files) == trace.n_retained
        for path in trace.attention_files:
            with Image.open(path) as image:
                assert image.mode == "L"
                assert image.size == (record.width, record.height)


class TestPipeline:
    """Many images, evaluation and studies."""

    def test_oracle_scorer_is_perfect(self, toy_world, world_checkpoint):
        """Test a perfect scorer on exact boxes reaches mAP 1."""
        config = inference.InferenceConfig(lambda_=0.0, threshold_before_fusion=True, final_threshold=0.5)
        detector = inference.HoiDetector(world_checkpoint, config, scorer=OracleScorer(toy_world.ground_truth))
        predictions = inference.run_inference(detector, toy_world.detections, toy_world.load_image)
        report = map_report(predictions, toy_world.ground_truth, toy_world.taxonomy)
        assert report.full == pytest.approx(1.0)
        assert sum(len(p) for _, p in predictions) == sum(len(r.triplets) for r in toy_world.ground_truth)

    def test_oracle_scorer_on_fifty_images(self, tiny_config):
        """Test a perfect scorer stays perfect on a larger world with several humans per image."""
        world = generate(ToySceneSpec(seed=11), 50)
        checkpoint = new_checkpoint(world.taxonomy, tiny_config)
        config = inference.InferenceConfig(lambda_=0.0, threshold_before_fusion=True, final_threshold=0.5)
        detector = inference.HoiDetector(checkpoint, config, scorer=OracleScorer(world.ground_truth))
        predictions = inference.run_inference(detector, world.detections, world.load_image)
        assert map_report(predictions, world.ground_truth, world.taxonomy).full == pytest.approx(1.0)

    def test_map_falls_with_jitter(self, tiny_config):
        """Test one checkpoint scores lower as detector noise grows, never higher."""
        spec = ToySceneSpec(seed=5)
        worlds = [generate(replace(spec, jitter_px=jitter), 20) for jitter in (0.0, 1.0, 3.0, 5.0)]
        checkpoint = new_checkpoint(worlds[0].taxonomy, tiny_config)
        config = inference.InferenceConfig(
            lambda_=0.0, feature_source="roi", threshold_before_fusion=True, final_threshold=0.5
        )
        detector = inference.HoiDetector(checkpoint, config, scorer=DetectionIndexOracle(worlds[0].ground_truth))
        scores = []
        for world in worlds:
            predictions = inference.run_inference(detector, world.detections, world.load_image)
            scores.append(map_report(predictions, world.ground_truth, world.taxonomy).full)
        assert scores[0] == pytest.approx(1.0)
        assert all(noisier <= cleaner + 1e-9 for cleaner, noisier in zip(scores, scores[1:]))
        assert scores[-1] < scores[0]

    def test_threads(self, toy_world, world_checkpoint):
        """Test threaded inference keeps input order and results."""
        detector = stub_detector(world_checkpoint)
        serial = inference.run_inference(detector, toy_world.detections, toy_world.load_image)
        threaded = inference.run_inference(detector, toy_world.detections, toy_world.load_image, jobs=3)
        assert threaded == serial

    def test_traces_match_serial_under_threads(self, toy_world, world_checkpoint):
        """Test per-image call counts do not pick up calls made by other worker threads."""
        detector = stub_detector(world_checkpoint)
        records = list(toy_world.detections) * 3

        def calls(record):
            trace = inference.DetectionTrace()
            detector.detect(record.id, toy_world.load_image(record.id), record.detections, trace)
            return trace.backend_calls

        serial = [calls(r) for r in records]
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = list(pool.map(calls, records))
        assert threaded == serial
        assert serial == [sum(1 for p in detector.pairs(r.detections) if p.candidates) for r in records]

    def test_detector_swap(self, world_checkpoint):
        """Test noisy detections from another detector run on the same checkpoint."""
        spec = ToySceneSpec(width=64, height=64, min_humans=1, max_humans=1, seed=7, jitter_px=2.0)
        noisy = generate(spec, 3)
        before = world_checkpoint.blob_hashes()
        detector = stub_detector(world_checkpoint)
        for image_id, predictions in inference.run_inference(detector, noisy.detections, noisy.load_image):
            record = next(r for r in noisy.detections if r.id == image_id)
            boxes = {d.box for d in record.detections}
            assert all(p.human_box in boxes and p.object_box in boxes for p in predictions)
        assert world_checkpoint.blob_hashes() == before

    def test_candidate_order_study(self, toy_world, world_checkpoint):
        """Test the shuffling study reports one run per seed."""
        config = inference.InferenceConfig(lambda_=0.0, final_threshold=0.0, backend="stub")
        summary = inference.candidate_order_study(
            world_checkpoint, config, toy_world.detections[:2], toy_world.ground_truth[:2], toy_world.load_image, seeds=(0, 1)
        )
        assert [run["seed"] for run in summary["runs"]] == [0, 1]

    def test_latency(self, toy_world, world_checkpoint):
        """Test the latency report counts images and backend calls."""
        detector = stub_detector(world_checkpoint)
        sample = [(r.id, toy_world.load_image(r.id), r.detections) for r in toy_world.detections[:3]]
        report = inference.benchmark_latency(detector, sample, warmup=1)
        assert report.n_images == 3
        expected = sum(sum(1 for p in detector.pairs(d) if p.candidates) for _, _, d in sample)
        assert report.backend_calls == expected
        assert report.mean_ms >= 0.0
        with pytest.raises(InvalidInputError):
            inference.benchmark_latency(detector, [])

    def test_open_ended(self, toy_world, world_checkpoint):
        """Test free-form answers are parsed for every scored pair."""
        detector = stub_detector(world_checkpoint)
        records = toy_world.detections[:2]
        result = inference.run_open_ended_baseline(
            detector, records, toy_world.load_image, OPEN_MCQ, max_new_tokens=4, ground_truth=toy_world.ground_truth[:2]
        )
        expected = sum(sum(1 for p in detector.pairs(r.detections) if p.candidates) for r in records)
        assert result.metrics.n_answers == expected
        assert 0.0 <= result.metrics.format_error_rate <= 1.0
        assert result.report is not None
        with pytest.raises(InvalidInputError):
            inference.run_open_ended_baseline(detector, records, toy_world.load_image, "essay")

    def test_images_are_arrays(self, toy_world):
        """Test the loader used above hands out pixel arrays."""
        assert isinstance(toy_world.load_image("toy_00000"), np.ndarray)
