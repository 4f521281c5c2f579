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
Two-stage training.

Stage 1 trains spatial-aware pooling with the interactiveness focal loss. Stage 2 freezes it
and adapts the language model through its low-rank factors (plus the projection layer) with
the matching focal loss. The visual encoder never trains under the default regime.
"""

# standard
import copy
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

# 3rd party
import numpy as np
import torch

# package
from da_hoi_tools.core.annotations import Detection, GroundTruthTriplet, ImageRecord, load_ground_truth
from da_hoi_tools.core.backbone import FeatureMap, read_image
from da_hoi_tools.core.checkpoint import Checkpoint
from da_hoi_tools.core.errors import ConfigError, DependencyError, InvalidInputError
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.losses import stage1_loss, stage2_loss
from da_hoi_tools.core.model import HoiModel, ModelConfig
from da_hoi_tools.core.pairing import (
    DEFAULT_IOU_THRESHOLD,
    HOPair,
    associate_pairs,
    label_pairs,
    sample_negatives,
)
from da_hoi_tools.core.prompts import build_matching_prompt
from da_hoi_tools.core.scorer import one_pass_matching_scores
from da_hoi_tools.core.taxonomy import FULL_SPLIT, SplitSpec, Taxonomy, interaction_phrases
from da_hoi_tools.toolbelt.log_handler import PlgLogger
from da_hoi_tools.toolbelt.preferences import dump_dataclass

TUNING_REGIMES = {
    "lora_llm": ("lowrank", "projection"),
    "full_llm": ("lowrank", "projection", "lm_base"),
    "full_visual_llm": ("lowrank", "projection", "lm_base", "encoder"),
}

# named starting points, explicit settings override them. "reference" is the large-model
# setting (the TrainConfig defaults), "toy" suits the toy encoder and language model.
RECIPES: dict[str, dict[int, dict[str, Any]]] = {
    "reference": {1: {"epochs": 30}, 2: {"epochs": 16}},
    "toy": {
        1: {"epochs": 30, "learning_rate": 1e-3, "batch_size": 8, "focal_alpha": 0.5},
        2: {"epochs": 16, "learning_rate": 1e-3, "batch_size": 8, "focal_alpha": 0.5, "negative_ratio": 0.5},
    },
}


def recipe_values(name: str, stage: int) -> dict[str, Any]:
    """Settings of recipe ``name`` for ``stage``, the stage itself included.

    :raises ConfigError: unknown recipe or stage
    """
    if name not in RECIPES:
        raise ConfigError(f"Unknown training recipe '{name}', expected one of: {','.join(RECIPES)}")
    if stage not in (1, 2):
        raise ConfigError(f"Training stage must be 1 or 2, got {stage}")
    return {"stage": stage, **RECIPES[name][stage]}


@dataclass
class TrainConfig:
    """Optimization settings of one training stage."""

    stage: int = 1
    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 16
    weight_decay: float = 0.01
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    negative_ratio: float = 1.0
    lowrank_rank: int = 8
    lowrank_alpha: float = 16.0
    tuning: str = "lora_llm"
    freeze_projection: bool = False
    jitter_px: float = 0.0
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"TrainConfig.stage must be 1 or 2, got {self.stage}")
        if self.epochs < 0:
            raise ConfigError(f"TrainConfig.epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"TrainConfig.learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"TrainConfig.batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ConfigError(f"TrainConfig.focal_alpha must be in (0, 1], got {self.focal_alpha}")
        if self.focal_gamma < 0:
            raise ConfigError(f"TrainConfig.focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"TrainConfig.iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if self.negative_ratio < 0:
            raise ConfigError(f"TrainConfig.negative_ratio must be >= 0, got {self.negative_ratio}")
        if self.lowrank_rank < 1:
            raise ConfigError(f"TrainConfig.lowrank_rank must be >= 1, got {self.lowrank_rank}")
        if self.tuning not in TUNING_REGIMES:
            raise ConfigError(f"TrainConfig.tuning must be one of: {','.join(TUNING_REGIMES)}")
        if self.jitter_px < 0:
            raise ConfigError(f"TrainConfig.jitter_px must be >= 0, got {self.jitter_px}")

    @classmethod
    def from_recipe(cls, name: str, stage: int = 1, **overrides) -> "TrainConfig":
        """Config of a named recipe, ``overrides`` applied last."""
        return cls(**{**recipe_values(name, stage), **overrides})


@dataclass
class HoiDataset:
    """Annotated images.

    Images come from ``images`` when given, else from ``image_dir / "{id}.png"``.
    """

    taxonomy: Taxonomy
    records: list[ImageRecord]
    split: SplitSpec = FULL_SPLIT
    image_dir: Path | None = None
    images: Mapping[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_files(
        cls, gt_path: str | Path, taxonomy: Taxonomy, image_dir: str | Path | None = None, split: SplitSpec = FULL_SPLIT
    ) -> "HoiDataset":
        gt_path = Path(gt_path)
        records = load_ground_truth(gt_path, taxonomy)
        return cls(
            taxonomy=taxonomy,
            records=records,
            split=split,
            image_dir=Path(image_dir) if image_dir else gt_path.parent / "images",
        )

    def __len__(self) -> int:
        return len(self.records)

    def image(self, image_id: str) -> np.ndarray:
        if image_id in self.images:
            return self.images[image_id]
        if self.image_dir is None:
            raise InvalidInputError(f"No pixels for image {image_id}")
        return read_image(self.image_dir / f"{image_id}.png")

    def seen_triplets(self, record: ImageRecord) -> list[GroundTruthTriplet]:
        """Ground truth of an image without the unseen interactions of the split."""
        return [
            t
            for t in record.triplets
            if not self.split.is_unseen(self.taxonomy.interaction(t.verb_id, t.object_id).id)
        ]


def training_detections(record: ImageRecord, human_id: int) -> list[Detection]:
    """Ground-truth boxes used as detections.

    The record's own detection list is used when present (it also holds non-interacting
    entities), otherwise the distinct boxes of the triplets.
    """
    if record.detections:
        return list(record.detections)
    seen: dict[tuple[BBox, int], Detection] = {}
    for t in record.triplets:
        seen.setdefault((t.human_box, human_id), Detection(t.human_box, human_id, 1.0))
        seen.setdefault((t.object_box, t.object_id), Detection(t.object_box, t.object_id, 1.0))
    return list(seen.values())


def _jitter(detections: list[Detection], jitter_px: float, rng: np.random.Generator) -> list[Detection]:
    if jitter_px <= 0:
        return detections
    out = []
    for det in detections:
        dx, dy = rng.normal(0.0, jitter_px, size=2)
        out.append(Detection(det.box.translate(float(dx), float(dy)), det.category, det.score))
    return out


def _augment(
    image: np.ndarray, detections: list[Detection], triplets: list[GroundTruthTriplet], rng: np.random.Generator
) -> tuple[np.ndarray, list[Detection], list[GroundTruthTriplet]]:
    # horizontal flip half of the time, then a global brightness factor
    width = image.shape[1]
    if rng.random() < 0.5:
        image = image[:, ::-1]

        def flip(box: BBox) -> BBox:
            return BBox(width - box.cx, box.cy, box.w, box.h)

        detections = [Detection(flip(d.box), d.category, d.score) for d in detections]
        triplets = [GroundTruthTriplet(flip(t.human_box), flip(t.object_box), t.object_id, t.verb_id) for t in triplets]
    pixels = image.astype(np.float32) / (255.0 if image.dtype == np.uint8 else 1.0)
    pixels = np.clip(pixels * rng.uniform(0.8, 1.2), 0.0, 1.0)
    return np.ascontiguousarray(pixels), detections, triplets


@dataclass
class _ImageSample:
    image_id: str
    f_img: FeatureMap
    pairs: list[HOPair]


class _PairCollector:
    """Builds labeled pairs per image, re-encoding only when boxes or pixels change."""

    def __init__(self, model: HoiModel, dataset: HoiDataset, config: TrainConfig, rng: np.random.Generator):
        self.model = model
        self.dataset = dataset
        self.config = config
        self.rng = rng
        self._fmaps: dict[str, FeatureMap] = {}

    def static(self) -> bool:
        return self.config.jitter_px <= 0 and not self.config.augment and not self._encoder_trains()

    def _encoder_trains(self) -> bool:
        return any(p.requires_grad for p in self.model.encoder.parameters())

    def collect(self, include_unseen: bool) -> list[_ImageSample]:
        samples = []
        human_id = self.dataset.taxonomy.human_object_id
        for record in self.dataset.records:
            image = self.dataset.image(record.id)
            detections = training_detections(record, human_id)
            triplets = self.dataset.seen_triplets(record)
            if self.config.augment:
                image, detections, triplets = _augment(image, detections, triplets, self.rng)
            detections = _jitter(detections, self.config.jitter_px, self.rng)
            pairs = associate_pairs(detections, self.dataset.taxonomy, self.dataset.split, include_unseen)
            if not pairs:
                continue
            pairs = label_pairs(pairs, triplets, self.config.iou_threshold)
            if self.config.augment or self._encoder_trains() or record.id not in self._fmaps:
                f_img = self.model.encode(image)
                if not self.config.augment and not self._encoder_trains():
                    self._fmaps[record.id] = f_img
            else:
                f_img = self._fmaps[record.id]
            samples.append(_ImageSample(record.id, f_img, pairs))
        return samples


def _make_optimizer(params: list[torch.nn.Parameter], config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def _batches(n_items: int, batch_size: int, generator: torch.Generator) -> list[list[int]]:
    order = torch.randperm(n_items, generator=generator).tolist()
    return [order[i : i + batch_size] for i in range(0, n_items, batch_size)]


def _stage1_forward(
    model: HoiModel, samples: list[_ImageSample], items: list[tuple[int, int]]
) -> tuple[torch.Tensor, torch.Tensor]:
    """Interactiveness scores and labels of a batch of (sample index, pair index) items."""
    by_image: dict[int, list[int]] = {}
    for sample_idx, pair_idx in items:
        by_image.setdefault(sample_idx, []).append(pair_idx)
    scores, labels = [], []
    for sample_idx, pair_indices in by_image.items():
        sample = samples[sample_idx]
        pairs = [sample.pairs[i] for i in pair_indices]
        feats = model.pair_features(
            sample.f_img, [p.human.box for p in pairs], [p.object.box for p in pairs], grad=True
        )
        scores.append(feats.interactiveness)
        labels.append(torch.tensor([float(p.interactiveness_label) for p in pairs], dtype=feats.interactiveness.dtype))
    return torch.cat(scores), torch.cat(labels)


def _prepare_model(checkpoint: Checkpoint | None, taxonomy: Taxonomy, model_config: ModelConfig | None, config: TrainConfig) -> HoiModel:
    if checkpoint is not None:
        checkpoint.check_taxonomy(taxonomy)
        return copy.deepcopy(checkpoint.model)
    model_config = replace(
        model_config or ModelConfig(), lowrank_rank=config.lowrank_rank, lowrank_alpha=config.lowrank_alpha
    )
    return HoiModel(model_config, taxonomy)


def train_stage1(
    dataset: HoiDataset,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    init: Checkpoint | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Train spatial-aware pooling on interactiveness.

    :param dataset: annotated images
    :type dataset: HoiDataset
    :param config: stage-1 settings
    :type config: TrainConfig
    :param model_config: architecture of a fresh model
    :type model_config: ModelConfig | None
    :param init: start from this checkpoint instead of a fresh model (it is not modified)
    :type init: Checkpoint | None
    :param progress: called with (epoch, mean loss) after each epoch
    :raises ConfigError: ``config.stage`` is not 1
    :return: checkpoint whose "sap" blob is the only one that changed
    :rtype: Checkpoint
    """
    if config.stage != 1:
        raise ConfigError(f"train_stage1 needs a stage-1 config, got stage {config.stage}")
    log = PlgLogger().log
    model = _prepare_model(init, dataset.taxonomy, model_config, config)
    params = model.set_trainable(["sap"])
    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    optimizer = _make_optimizer(params, config)
    collector = _PairCollector(model, dataset, config, rng)
    samples = collector.collect(include_unseen=False) if config.epochs else []

    history = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        for epoch in range(config.epochs):
            if epoch and not collector.static():
                samples = collector.collect(include_unseen=False)
            items = [(s, p) for s, sample in enumerate(samples) for p in range(len(sample.pairs))]
            if not items:
                raise InvalidInputError("Stage-1 training found no human-object pairs")
            model.sap.train()
            batch_losses, correct = [], 0
            for batch in _batches(len(items), config.batch_size, generator):
                scores, labels = _stage1_forward(model, samples, [items[i] for i in batch])
                loss = stage1_loss(scores, labels, config.focal_alpha, config.focal_gamma)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                batch_losses.append(float(loss))
                correct += int(((scores.detach() >= 0.5).to(labels.dtype) == labels).sum())
            entry = {
                "epoch": epoch,
                "loss": float(np.mean(batch_losses)),
                "accuracy": correct / len(items),
                "batch_losses": batch_losses,
            }
            history.append(entry)
            log(message=f"stage 1 epoch {epoch}: loss={entry['loss']:.5f} accuracy={entry['accuracy']:.3f}", log_level=0)
            if progress:
                progress(epoch, entry["loss"])
    model.eval()
    model.freeze_all()
    previous = dict(init.history) if init else {}
    configs = dict(init.train_configs) if init else {}
    configs["stage1"] = dump_dataclass(config)
    return Checkpoint(model=model, history={**previous, "stage1": history}, train_configs=configs)


def _stage2_scores(model: HoiModel, sample: _ImageSample, pairs: list[HOPair]) -> list[torch.Tensor]:
    backend = model.backend()
    with torch.no_grad():
        feats = model.pair_features(sample.f_img, [p.human.box for p in pairs], [p.object.box for p in pairs])
    image_embeds = model.image_tokens(sample.f_img)
    out = []
    for pair, f_inter in zip(pairs, feats.f_inter, strict=True):
        phrases = interaction_phrases(pair.candidates, model.taxonomy)
        prompt = build_matching_prompt(model.tokenizer, image_embeds, model.inter_token(f_inter), phrases)
        out.append(one_pass_matching_scores(prompt, backend))
    return out


def train_stage2(
    dataset: HoiDataset,
    config: TrainConfig,
    stage1: Checkpoint | None,
    progress: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Adapt the language model with the matching loss, SAP frozen.

    :param dataset: annotated images
    :type dataset: HoiDataset
    :param config: stage-2 settings
    :type config: TrainConfig
    :param stage1: checkpoint produced by :func:`train_stage1` (not modified)
    :type stage1: Checkpoint | None
    :raises DependencyError: no stage-1 checkpoint
    :raises ConfigError: wrong stage, or low-rank settings differ from the checkpoint
    :return: checkpoint in which only "lm_lowrank" changed under the default regime
    :rtype: Checkpoint
    """
    if stage1 is None:
        raise DependencyError("Stage 2 needs a stage-1 checkpoint")
    if config.stage != 2:
        raise ConfigError(f"train_stage2 needs a stage-2 config, got stage {config.stage}")
    model_cfg = stage1.model.config
    if (config.lowrank_rank, config.lowrank_alpha) != (model_cfg.lowrank_rank, model_cfg.lowrank_alpha):
        raise ConfigError(
            f"Low-rank settings ({config.lowrank_rank}, {config.lowrank_alpha}) differ from the checkpoint "
            f"({model_cfg.lowrank_rank}, {model_cfg.lowrank_alpha})"
        )
    log = PlgLogger().log
    model = _prepare_model(stage1, dataset.taxonomy, None, config)
    params = model.set_trainable(TUNING_REGIMES[config.tuning], freeze_projection=config.freeze_projection)
    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    optimizer = _make_optimizer(params, config) if params else None
    collector = _PairCollector(model, dataset, config, rng)
    base_samples = collector.collect(include_unseen=False) if config.epochs else []

    history = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        for epoch in range(config.epochs):
            if epoch and not collector.static():
                base_samples = collector.collect(include_unseen=False)
            samples = [
                _ImageSample(s.image_id, s.f_img, [p for p in sample_negatives(s.pairs, config.negative_ratio, rng) if p.candidates])
                for s in base_samples
            ]
            items = [(s, p) for s, sample in enumerate(samples) for p in range(len(sample.pairs))]
            if not items:
                raise InvalidInputError("Stage-2 training found no labeled pairs")
            model.lm.train()
            batch_losses = []
            for batch in _batches(len(items), config.batch_size, generator):
                by_image: dict[int, list[int]] = {}
                for i in batch:
                    by_image.setdefault(items[i][0], []).append(items[i][1])
                scores, labels = [], []
                for sample_idx, pair_indices in by_image.items():
                    pairs = [samples[sample_idx].pairs[i] for i in pair_indices]
                    scores.extend(_stage2_scores(model, samples[sample_idx], pairs))
                    labels.extend(torch.tensor(p.interaction_labels, dtype=torch.float32) for p in pairs)
                loss = stage2_loss(scores, labels, config.focal_alpha, config.focal_gamma)
                if optimizer is not None and loss.requires_grad:
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                batch_losses.append(float(loss))
            entry = {"epoch": epoch, "loss": float(np.mean(batch_losses)), "batch_losses": batch_losses}
            history.append(entry)
            log(message=f"stage 2 epoch {epoch}: loss={entry['loss']:.5f}", log_level=0)
            if progress:
                progress(epoch, entry["loss"])
    model.eval()
    model.freeze_all()
    configs = dict(stage1.train_configs)
    configs["stage2"] = dump_dataclass(config)
    return Checkpoint(model=model, history={**stage1.history, "stage2": history}, train_configs=configs)


def interactiveness_accuracy(checkpoint: Checkpoint, dataset: HoiDataset, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> float:
    """Fraction of ground-truth-box pairs whose interactiveness (>= 0.5) matches the label."""
    model = checkpoint.model
    correct = total = 0
    for record in dataset.records:
        detections = training_detections(record, dataset.taxonomy.human_object_id)
        pairs = associate_pairs(detections, dataset.taxonomy, dataset.split)
        if not pairs:
            continue
        pairs = label_pairs(pairs, list(record.triplets), iou_threshold)
        f_img = model.encode(dataset.image(record.id))
        scores = model.pair_features(f_img, [p.human.box for p in pairs], [p.object.box for p in pairs]).interactiveness
        for pair, score in zip(pairs, scores.tolist(), strict=True):
            correct += int((score >= 0.5) == bool(pair.interactiveness_label))
            total += 1
    if not total:
        raise InvalidInputError("No pairs to measure accuracy on")
    return correct / total


def interaction_accuracy(
    checkpoint: Checkpoint,
    dataset: HoiDataset,
    include_unseen: bool = True,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> float:
    """Top-1 matching accuracy on interacting ground-truth pairs.

    A pair counts as correct when its highest-scoring candidate is one of its true verbs.
    """
    model = checkpoint.model
    correct = total = 0
    for record in dataset.records:
        detections = training_detections(record, dataset.taxonomy.human_object_id)
        pairs = associate_pairs(detections, dataset.taxonomy, dataset.split, include_unseen)
        if not pairs:
            continue
        triplets = list(record.triplets) if include_unseen else dataset.seen_triplets(record)
        pairs = [p for p in label_pairs(pairs, triplets, iou_threshold) if p.candidates and any(p.interaction_labels)]
        if not pairs:
            continue
        sample = _ImageSample(record.id, model.encode(dataset.image(record.id)), pairs)
        with torch.no_grad():
            for pair, scores in zip(pairs, _stage2_scores(model, sample, pairs), strict=True):
                correct += int(pair.interaction_labels[int(torch.argmax(scores))] == 1)
                total += 1
    if not total:
        raise InvalidInputError("No interacting pairs to measure accuracy on")
    return correct / total


def split_records(records: Sequence[ImageRecord], holdout_fraction: float, seed: int = 0) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Deterministic train / held-out split of image records."""
    order = np.random.default_rng(seed).permutation(len(records))
    n_holdout = int(round(holdout_fraction * len(records)))
    held = {int(i) for i in order[:n_holdout]}
    return [r for i, r in enumerate(records) if i not in held], [r for i, r in enumerate(records) if i in held]
