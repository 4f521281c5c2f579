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
Detection-to-triplets pipeline.

Pairs are built from detections, scored for interactiveness, filtered by lambda, scored
against their candidate lists, fused with the detector scores, thresholded and sorted.
"""

# standard
import io
import statistics
import time
import zlib
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

# 3rd party
import numpy as np
import torch
from PIL import Image

# package
from da_hoi_tools.core.annotations import Detection, ImageRecord, TripletPrediction
from da_hoi_tools.core.backbone import FeatureMap
from da_hoi_tools.core.backends import LMBackend, StubBackend
from da_hoi_tools.core.checkpoint import Checkpoint, load_checkpoint
from da_hoi_tools.core.errors import ConfigError, InvalidInputError
from da_hoi_tools.core.evaluation import EvalReport, TextOutputMetrics, map_report, text_output_metrics
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.pairing import HOPair, associate_pairs
from da_hoi_tools.core.prompts import (
    GENERATION,
    MATCHING,
    OPEN_STYLES,
    build_generation_prompt,
    build_matching_prompt,
    build_open_prompt,
)
from da_hoi_tools.core.sap import attention_map
from da_hoi_tools.core.scorer import (
    DEFAULT_ANSWER_BUDGET,
    ParsedAnswer,
    deterministic_generation_scores,
    likelihood_confidence,
    one_pass_matching_scores,
    open_ended_answer,
    parse_answer,
)
from da_hoi_tools.core.taxonomy import FULL_SPLIT, SplitSpec, Taxonomy, interaction_phrases
from da_hoi_tools.toolbelt.file_utils import write_atomic_bytes
from da_hoi_tools.toolbelt.log_handler import PlgLogger

SCORING_MODES = (GENERATION, MATCHING)
BACKENDS = ("toy", "stub")
FEATURE_SOURCES = ("sap", "roi")
INFERENCE_ALIASES = {"lambda": "lambda_"}


@dataclass
class InferenceConfig:
    """Inference settings. In JSON files ``lambda_`` is spelled ``lambda``."""

    lambda_: float = 0.15
    final_threshold: float = 0.15
    mode: str = MATCHING
    backend: str = "toy"
    checkpoint_path: str = ""
    attention_dir: str = ""
    feature_source: str = "sap"
    threshold_before_fusion: bool = False
    candidate_permutation_seed: int | None = None
    include_unseen: bool = True
    batch_pairs: bool = False
    length_normalize: bool = False
    include_eos: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lambda_}")
        if not 0.0 <= self.final_threshold <= 1.0:
            raise ConfigError(f"final_threshold must be in [0, 1], got {self.final_threshold}")
        if self.mode not in SCORING_MODES:
            raise ConfigError(f"mode must be one of: {','.join(SCORING_MODES)}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of: {','.join(BACKENDS)}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(f"feature_source must be one of: {','.join(FEATURE_SOURCES)}")


# -- pure steps -----------------------------------------------------------------


def filter_pairs(interactiveness: Sequence[float], lambda_: float) -> list[int]:
    """Indices of the pairs whose interactiveness is at least ``lambda_``, in order."""
    return [i for i, score in enumerate(interactiveness) if score >= lambda_]


def fuse_scores(s_v: float, s_interactiveness: float, s_h: float, s_o: float) -> float:
    """Final confidence: product of interaction, interactiveness and both detector scores."""
    return s_v * s_interactiveness * s_h * s_o


def candidate_order(n: int, seed: int | None, image_id: str, pair_index: int) -> list[int]:
    """Order in which candidates are shown to the scorer, identity without a seed."""
    if seed is None or n < 2:
        return list(range(n))
    rng = np.random.default_rng([seed, zlib.crc32(image_id.encode("UTF-8")), pair_index])
    return [int(i) for i in rng.permutation(n)]


# -- scorers --------------------------------------------------------------------


@dataclass
class PairContext:
    """Everything a scorer may look at for one retained pair."""

    image_id: str
    pair_index: int
    pair: HOPair
    phrases: list[str]
    image_embeds: torch.Tensor
    inter_embeds: torch.Tensor
    f_img: FeatureMap | None = None


class PairScorer(Protocol):
    def score(self, ctx: PairContext) -> torch.Tensor: ...


class GenerationScorer:
    """Deterministic generation, one backend pass per candidate."""

    def __init__(self, backend: LMBackend, length_normalize: bool = False, include_eos: bool = False):
        self.backend = backend
        self.length_normalize = length_normalize
        self.include_eos = include_eos

    def score(self, ctx: PairContext) -> torch.Tensor:
        prompt = build_generation_prompt(self.backend.tokenizer, ctx.image_embeds, ctx.inter_embeds, ctx.phrases)
        return deterministic_generation_scores(prompt, self.backend, self.length_normalize, self.include_eos)


class MatchingScorer:
    """One-pass matching, a single backend pass per pair."""

    def __init__(self, backend: LMBackend):
        self.backend = backend

    def score(self, ctx: PairContext) -> torch.Tensor:
        prompt = build_matching_prompt(self.backend.tokenizer, ctx.image_embeds, ctx.inter_embeds, ctx.phrases)
        return one_pass_matching_scores(prompt, self.backend)


@dataclass
class DetectionTrace:
    """Per-image counters filled by :meth:`HoiDetector.detect`."""

    n_pairs: int = 0
    n_retained: int = 0
    backend_calls: int = 0
    pairing_ms: float = 0.0
    sap_ms: float = 0.0
    scoring_ms: float = 0.0
    attention_files: list[Path] = field(default_factory=list)

    @property
    def total_ms(self) -> float:
        return self.pairing_ms + self.sap_ms + self.scoring_ms


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


class HoiDetector:
    """Inference over one frozen checkpoint.

    :param checkpoint: trained (or freshly initialized) model bundle
    :type checkpoint: Checkpoint
    :param config: inference settings
    :type config: InferenceConfig
    :param taxonomy: taxonomy of the detections, must match the checkpoint
    :type taxonomy: Taxonomy | None
    :param split: zero-shot split, only used when ``include_unseen`` is off
    :type split: SplitSpec
    :param scorer: overrides the scorer chosen by ``config.mode``
    :type scorer: PairScorer | None
    :raises CompatibilityError: taxonomy differs from the checkpoint's
    """

    def __init__(
        self,
        checkpoint: Checkpoint,
        config: InferenceConfig,
        taxonomy: Taxonomy | None = None,
        split: SplitSpec = FULL_SPLIT,
        scorer: PairScorer | None = None,
        backend: LMBackend | None = None,
    ):
        self.log = PlgLogger().log
        if taxonomy is not None:
            checkpoint.check_taxonomy(taxonomy)
        self.checkpoint = checkpoint
        self.model = checkpoint.model
        self.model.eval()
        self.config = config
        self.split = split
        self.backend = backend or self._make_backend()
        self.scorer = scorer or self._make_scorer()

    @classmethod
    def from_config(cls, config: InferenceConfig, taxonomy: Taxonomy, split: SplitSpec = FULL_SPLIT) -> "HoiDetector":
        if not config.checkpoint_path:
            raise ConfigError("checkpoint_path is required")
        return cls(load_checkpoint(config.checkpoint_path), config, taxonomy, split)

    @property
    def taxonomy(self) -> Taxonomy:
        return self.model.taxonomy

    def _make_backend(self) -> LMBackend:
        if self.config.backend == "stub":
            return StubBackend(self.model.tokenizer, dim=self.model.config.lm_dim, hidden_mode="segment")
        return self.model.backend()

    def _make_scorer(self) -> PairScorer:
        if self.config.mode == GENERATION:
            return GenerationScorer(self.backend, self.config.length_normalize, self.config.include_eos)
        return MatchingScorer(self.backend)

    def pairs(self, detections: Sequence[Detection]) -> list[HOPair]:
        return associate_pairs(detections, self.taxonomy, self.split, self.config.include_unseen)

    @torch.no_grad()
    def detect(
        self, image_id: str, image: np.ndarray, detections: Sequence[Detection], trace: DetectionTrace | None = None
    ) -> list[TripletPrediction]:
        """Predict the triplets of one image.

        :param image_id: image identifier, used for attention file names and candidate shuffling
        :type image_id: str
        :param image: (H, W, 3) pixels
        :type image: np.ndarray
        :param detections: detector output for this image
        :type detections: Sequence[Detection]
        :param trace: filled with counters and timings when given
        :type trace: DetectionTrace | None
        :return: predictions sorted by descending score, ties by pair then candidate index
        :rtype: list[TripletPrediction]
        """
        trace = trace if trace is not None else DetectionTrace()
        start = time.perf_counter()
        pairs = self.pairs(detections)
        trace.n_pairs = len(pairs)
        trace.pairing_ms = _elapsed_ms(start)
        if not pairs:
            return []

        start = time.perf_counter()
        f_img = self.model.encode(image)
        humans = [p.human.box for p in pairs]
        objects = [p.object.box for p in pairs]
        if self.config.feature_source == "sap":
            feats = self.model.pair_features(f_img, humans, objects)
            interactiveness = feats.interactiveness.tolist()
        else:
            feats = None
            interactiveness = [1.0] * len(pairs)
        retained = [i for i in filter_pairs(interactiveness, self.config.lambda_) if pairs[i].candidates]
        trace.n_retained = len(retained)
        image_embeds = self.model.image_tokens(f_img) if retained else None
        trace.sap_ms = _elapsed_ms(start)

        start = time.perf_counter()
        calls_before = self.backend.thread_calls
        ranked: list[tuple[float, int, int, TripletPrediction]] = []
        for i in retained:
            pair = pairs[i]
            order = candidate_order(len(pair.candidates), self.config.candidate_permutation_seed, image_id, i)
            shown = [pair.candidates[k] for k in order]
            if feats is not None:
                inter_embeds = self.model.inter_token(feats.f_inter[i])
            else:
                inter_embeds = self.model.roi_tokens(f_img, pair.human.box, pair.object.box)
            ctx = PairContext(
                image_id=image_id,
                pair_index=i,
                pair=pair,
                phrases=interaction_phrases(shown, self.taxonomy),
                image_embeds=image_embeds,
                inter_embeds=inter_embeds,
                f_img=f_img,
            )
            shown_scores = self.scorer.score(ctx).tolist()
            for position, k in enumerate(order):
                s_v = min(1.0, max(0.0, float(shown_scores[position])))
                fused = fuse_scores(s_v, interactiveness[i], pair.human.score, pair.object.score)
                gate = s_v if self.config.threshold_before_fusion else fused
                if gate < self.config.final_threshold:
                    continue
                prediction = TripletPrediction(
                    human_box=pair.human.box,
                    object_box=pair.object.box,
                    object_id=pair.object.category,
                    verb_id=pair.candidates[k].verb_id,
                    score=fused,
                )
                ranked.append((-fused, i, k, prediction))
            if self.config.attention_dir and feats is not None and self.model.config.use_cross_attention:
                trace.attention_files.append(
                    dump_attention(self.checkpoint, image_id, i, f_img, pair.human.box, pair.object.box, self.config.attention_dir)
                )
        trace.backend_calls = self.backend.thread_calls - calls_before
        trace.scoring_ms = _elapsed_ms(start)
        ranked.sort(key=lambda item: item[:3])
        self.log(
            message=f"{image_id}: {len(pairs)} pairs, {len(retained)} retained, {len(ranked)} predictions",
            log_level=4,
        )
        return [item[3] for item in ranked]


def detect_hoi(
    image: np.ndarray,
    detections: Sequence[Detection],
    split: SplitSpec,
    config: InferenceConfig,
    checkpoint: Checkpoint,
    image_id: str = "image",
    scorer: PairScorer | None = None,
    taxonomy: Taxonomy | None = None,
) -> list[TripletPrediction]:
    """Single-image convenience wrapper around :class:`HoiDetector`.

    :raises CompatibilityError: ``taxonomy`` is given and differs from the checkpoint's
    """
    return HoiDetector(checkpoint, config, taxonomy, split=split, scorer=scorer).detect(image_id, image, detections)


ImageLoader = Callable[[str], np.ndarray]


def run_inference(
    detector: HoiDetector, records: Sequence[ImageRecord], load_image: ImageLoader, jobs: int = 1
) -> list[tuple[str, list[TripletPrediction]]]:
    """Run the detector over many images, results in input order.

    :param jobs: worker threads, images are independent
    :type jobs: int
    """

    def one(record: ImageRecord) -> tuple[str, list[TripletPrediction]]:
        return record.id, detector.detect(record.id, load_image(record.id), record.detections)

    if jobs <= 1 or len(records) < 2:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, records))


# -- attention maps ---------------------------------------------------------------


def render_attention(weights: torch.Tensor, stride: int, image_size: tuple[int, int]) -> np.ndarray:
    """Scale a (H_f, W_f) map to 0..255 by its maximum and upscale each cell to a stride block.

    :return: (height, width) uint8 array cropped to the image size
    :rtype: np.ndarray
    """
    grid = weights.detach().cpu().to(torch.float64).numpy()
    peak = grid.max()
    scaled = np.zeros_like(grid) if peak <= 0 else grid / peak
    gray = np.rint(scaled * 255.0).astype(np.uint8)
    width, height = image_size
    return np.kron(gray, np.ones((stride, stride), dtype=np.uint8))[:height, :width]


def dump_attention(
    checkpoint: Checkpoint,
    image_id: str,
    pair_index: int,
    f_img: FeatureMap,
    human: BBox,
    obj: BBox,
    directory: str | Path,
) -> Path:
    """Write the cross-attention map of one pair as a grayscale PNG.

    :raises HoiIOError: directory cannot be written
    :return: ``{directory}/{image_id}_{pair_index}.png``
    :rtype: Path
    """
    weights = attention_map(checkpoint.model.sap, f_img, human, obj)
    pixels = render_attention(weights, f_img.stride, f_img.image_size)
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return write_atomic_bytes(Path(directory) / f"{image_id}_{pair_index}.png", buffer.getvalue())


# -- latency ------------------------------------------------------------------------


@dataclass
class LatencyReport:
    n_images: int
    mean_ms: float
    median_ms: float
    phase_mean_ms: dict[str, float]
    backend_calls: int
    retained_pairs: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_images": self.n_images,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "phase_mean_ms": self.phase_mean_ms,
            "backend_calls": self.backend_calls,
            "retained_pairs": self.retained_pairs,
        }


def benchmark_latency(
    detector: HoiDetector,
    sample: Sequence[tuple[str, np.ndarray, Sequence[Detection]]],
    warmup: int = 1,
) -> LatencyReport:
    """Wall-clock per image, split into pairing, SAP and scoring phases.

    :param sample: (image id, pixels, detections) triples
    :param warmup: images run once before timing starts
    :raises InvalidInputError: empty sample
    """
    if not sample:
        raise InvalidInputError("Latency benchmark needs at least one image")
    for image_id, image, detections in list(sample)[:warmup]:
        detector.detect(image_id, image, detections)
    traces = []
    for image_id, image, detections in sample:
        trace = DetectionTrace()
        detector.detect(image_id, image, detections, trace)
        traces.append(trace)
    totals = [t.total_ms for t in traces]
    return LatencyReport(
        n_images=len(traces),
        mean_ms=statistics.fmean(totals),
        median_ms=statistics.median(totals),
        phase_mean_ms={
            "pairing": statistics.fmean(t.pairing_ms for t in traces),
            "sap": statistics.fmean(t.sap_ms for t in traces),
            "scoring": statistics.fmean(t.scoring_ms for t in traces),
        },
        backend_calls=sum(t.backend_calls for t in traces),
        retained_pairs=sum(t.n_retained for t in traces),
    )


# -- studies ------------------------------------------------------------------------


def candidate_order_study(
    checkpoint: Checkpoint,
    config: InferenceConfig,
    records: Sequence[ImageRecord],
    ground_truth: Sequence[ImageRecord],
    load_image: ImageLoader,
    split: SplitSpec = FULL_SPLIT,
    seeds: Iterable[int] = (0, 1, 2),
) -> dict[str, Any]:
    """mAP under several shufflings of every candidate list.

    :return: per-seed aggregates plus their mean and standard deviation
    :rtype: dict[str, Any]
    """
    runs = []
    for seed in seeds:
        run_config = InferenceConfig(**{**config.__dict__, "candidate_permutation_seed": seed})
        detector = HoiDetector(checkpoint, run_config, split=split)
        predictions = run_inference(detector, records, load_image)
        report = map_report(predictions, ground_truth, checkpoint.taxonomy, split)
        runs.append({"seed": seed, **{k: v for k, v in report.aggregates().items() if v is not None}})
    summary: dict[str, Any] = {"runs": runs}
    for key in ("full", "seen", "unseen"):
        values = [r[key] for r in runs if key in r]
        if values:
            summary[f"{key}_mean"] = statistics.fmean(values)
            summary[f"{key}_std"] = statistics.pstdev(values)
    return summary


@dataclass
class OpenEndedResult:
    predictions: list[tuple[str, list[TripletPrediction]]]
    answers: list[ParsedAnswer]
    metrics: TextOutputMetrics
    report: EvalReport | None = None


def run_open_ended_baseline(
    detector: HoiDetector,
    records: Sequence[ImageRecord],
    load_image: ImageLoader,
    style: str,
    use_likelihood: bool = False,
    max_new_tokens: int = DEFAULT_ANSWER_BUDGET,
    ground_truth: Sequence[ImageRecord] | None = None,
) -> OpenEndedResult:
    """Free-form answers instead of candidate scoring.

    Every retained pair gets a greedy answer; each named candidate becomes a prediction whose
    confidence is 1.0, or the answer likelihood when ``use_likelihood`` is set, fused with the
    interactiveness and detector scores.

    :raises InvalidInputError: unknown style
    """
    if style not in OPEN_STYLES:
        raise InvalidInputError(f"Unknown open-ended style '{style}'. Must be one of: {','.join(OPEN_STYLES)}")
    model = detector.model
    backend = detector.backend
    all_predictions = []
    answers: list[ParsedAnswer] = []
    with torch.no_grad():
        for record in records:
            pairs = detector.pairs(record.detections)
            preds: list[TripletPrediction] = []
            if pairs:
                f_img = model.encode(load_image(record.id))
                feats = model.pair_features(f_img, [p.human.box for p in pairs], [p.object.box for p in pairs])
                interactiveness = feats.interactiveness.tolist()
                image_embeds = model.image_tokens(f_img)
                for i in filter_pairs(interactiveness, detector.config.lambda_):
                    pair = pairs[i]
                    if not pair.candidates:
                        continue
                    phrases = interaction_phrases(pair.candidates, model.taxonomy)
                    prompt = build_open_prompt(
                        model.tokenizer, image_embeds, model.inter_token(feats.f_inter[i]), phrases, style
                    )
                    text = open_ended_answer(prompt, backend, max_new_tokens)
                    parsed = parse_answer(text, phrases, style)
                    answers.append(parsed)
                    confidence = likelihood_confidence(text, prompt, backend) if use_likelihood else 1.0
                    for k in sorted(parsed.indices):
                        preds.append(
                            TripletPrediction(
                                human_box=pair.human.box,
                                object_box=pair.object.box,
                                object_id=pair.object.category,
                                verb_id=pair.candidates[k].verb_id,
                                score=fuse_scores(confidence, interactiveness[i], pair.human.score, pair.object.score),
                            )
                        )
            preds.sort(key=lambda p: -p.score)
            all_predictions.append((record.id, preds))
    metrics = text_output_metrics(answers)
    report = None
    if ground_truth is not None:
        report = map_report(all_predictions, ground_truth, model.taxonomy, detector.split)
    return OpenEndedResult(predictions=all_predictions, answers=answers, metrics=metrics, report=report)
