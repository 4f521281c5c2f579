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
Command-line entry point.

Exit codes: 0 on success, 1 on invalid input or usage, 2 on runtime failure.
"""

# standard
import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

# 3rd party
import numpy as np
import torch

# package
from da_hoi_tools.__about__ import __title__, __version__
from da_hoi_tools.core.annotations import Detection, ImageRecord, ingest_detections, load_ground_truth, load_predictions, write_predictions
from da_hoi_tools.core.backbone import read_image
from da_hoi_tools.core.checkpoint import load_checkpoint, save_checkpoint
from da_hoi_tools.core.errors import ConfigError, HoiError, HoiValidationError, InvalidCandidateError
from da_hoi_tools.core.evaluation import INTERPOLATIONS, map_report
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.core.inference import (
    INFERENCE_ALIASES,
    SCORING_MODES,
    HoiDetector,
    InferenceConfig,
    PairContext,
    benchmark_latency,
    dump_attention,
    fuse_scores,
    run_inference,
)
from da_hoi_tools.core.model import ModelConfig
from da_hoi_tools.core.pairing import build_zero_shot_split
from da_hoi_tools.core.taxonomy import FULL_SPLIT, SPLIT_SETTINGS, SplitSpec, Taxonomy, interaction_phrases
from da_hoi_tools.core.training import RECIPES, HoiDataset, TrainConfig, recipe_values, train_stage1, train_stage2
from da_hoi_tools.toolbelt import PlgLogger, PlgOptionsManager, load_dataclass, read_json, write_atomic_json

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Bad command line, reported with the usage text."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _box(text: str) -> BBox:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"box must be x1,y1,x2,y2, got '{text}'") from err
    if len(values) != 4:
        raise argparse.ArgumentTypeError(f"box must have 4 values, got '{text}'")
    try:
        return BBox.from_list(values)
    except HoiValidationError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def _id_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from err


# -- shared helpers ---------------------------------------------------------------


def _apply_runtime_settings(args: argparse.Namespace) -> None:
    PlgOptionsManager.set_value_from_key("debug_mode", args.verbose > 0)
    PlgOptionsManager.set_value_from_key("verbosity", args.verbose)
    PlgOptionsManager.set_value_from_key("jobs", max(1, args.jobs))
    PlgOptionsManager.set_value_from_key("seed", args.seed)
    torch.manual_seed(args.seed)


def _load_split(path: Path | None) -> SplitSpec:
    return SplitSpec.load(path) if path else FULL_SPLIT


def _image_loader(image_dir: Path):
    def load(image_id: str) -> np.ndarray:
        return read_image(image_dir / f"{image_id}.png")

    return load


def _inference_config(args: argparse.Namespace) -> InferenceConfig:
    config = load_dataclass(InferenceConfig, args.config, INFERENCE_ALIASES)
    overrides = {}
    if getattr(args, "checkpoint", None):
        overrides["checkpoint_path"] = str(args.checkpoint)
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if overrides:
        config = InferenceConfig(**{**config.__dict__, **overrides})
    return config


def _detector(args: argparse.Namespace, config: InferenceConfig) -> HoiDetector:
    split = _load_split(args.split)
    checkpoint = load_checkpoint(config.checkpoint_path) if config.checkpoint_path else None
    if checkpoint is None:
        raise HoiValidationError("Inference config needs a checkpoint_path (or pass --checkpoint)")
    taxonomy = Taxonomy.load(args.taxonomy) if args.taxonomy else None
    return HoiDetector(checkpoint, config, taxonomy, split)


def _detection_records(args: argparse.Namespace, detector: HoiDetector) -> list[ImageRecord]:
    return ingest_detections(args.detections, detector.taxonomy)


def _images_dir(args: argparse.Namespace) -> Path:
    return Path(args.images) if args.images else Path(args.detections).parent / "images"


# -- commands ---------------------------------------------------------------------


def cmd_build_splits(args: argparse.Namespace) -> int:
    taxonomy = Taxonomy.load(args.taxonomy)
    split = build_zero_shot_split(taxonomy, args.setting, args.hold_out_count, args.hold_out_ids)
    split.save(args.out)
    PlgLogger.log(
        message=f"{args.setting} split with {len(split.unseen_interaction_ids)} unseen interactions written to {args.out}",
        log_level=3,
        push=True,
    )
    return EXIT_OK


def _train_config(args: argparse.Namespace) -> TrainConfig:
    if not args.recipe:
        return load_dataclass(TrainConfig, args.config)
    given = read_json(args.config)
    if not isinstance(given, dict):
        raise ConfigError(f"Training config {args.config} must be a JSON object")
    return load_dataclass(TrainConfig, {**recipe_values(args.recipe, given.get("stage", 1)), **given})


def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args)
    if args.seed_given:
        config = TrainConfig(**{**config.__dict__, "seed": args.seed})
    if config.stage == 2 and not args.init:
        raise HoiValidationError("Stage 2 needs the stage-1 checkpoint (--init)")
    init = load_checkpoint(args.init) if args.init else None
    taxonomy = Taxonomy.load(args.taxonomy) if args.taxonomy else (init.taxonomy if init else None)
    if taxonomy is None:
        raise HoiValidationError("A taxonomy is needed (--taxonomy) when training from scratch")
    dataset = HoiDataset.from_files(args.gt, taxonomy, args.images, _load_split(args.split))

    def progress(epoch: int, loss: float) -> None:
        PlgLogger.log(message=f"Epoch {epoch + 1}/{config.epochs}: loss {loss:.5f}", log_level=0)

    if config.stage == 1:
        model_config = load_dataclass(ModelConfig, args.model_config) if args.model_config else None
        checkpoint = train_stage1(dataset, config, model_config, init, progress)
    else:
        checkpoint = train_stage2(dataset, config, init, progress)
    save_checkpoint(checkpoint, args.out)
    PlgLogger.log(message=f"Stage-{config.stage} checkpoint written to {args.out}", log_level=3, push=True)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    config = _inference_config(args)
    detector = _detector(args, config)
    records = _detection_records(args, detector)
    predictions = run_inference(detector, records, _image_loader(_images_dir(args)), jobs=args.jobs)
    write_predictions(args.out, predictions)
    total = sum(len(p) for _, p in predictions)
    PlgLogger.log(message=f"{total} predictions for {len(records)} images written to {args.out}", log_level=3, push=True)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    taxonomy_path = Path(args.taxonomy) if args.taxonomy else Path(args.gt).parent / "taxonomy.json"
    taxonomy = Taxonomy.load(taxonomy_path)
    split = _load_split(args.split)
    report = map_report(
        load_predictions(args.pred),
        load_ground_truth(args.gt, taxonomy),
        taxonomy,
        split,
        iou_min=args.iou_min,
        rare_threshold=args.rare_threshold,
        interpolation=args.interpolation,
        jobs=args.jobs,
    )
    if args.out:
        report.to_json(args.out)
    if args.csv:
        report.to_csv(args.csv, taxonomy)
    for key, value in report.aggregates().items():
        if value is not None:
            print(f"{key}: {value * 100:.4f}")
    return EXIT_OK


def cmd_score_pair(args: argparse.Namespace) -> int:
    config = _inference_config(args)
    detector = _detector(args, config)
    model = detector.model
    image = read_image(args.image)
    height, width = image.shape[:2]
    for box, name in ((args.human, "human"), (args.object, "object")):
        if not box.intersects_image(width, height):
            raise HoiValidationError(f"The {name} box lies outside the {width}x{height} image")
    human = Detection(args.human, model.taxonomy.human_object_id, args.human_score)
    obj = Detection(args.object, args.category, args.object_score)
    pair = detector.pairs([human, obj])[0]
    if not pair.candidates:
        raise InvalidCandidateError(f"Object category {args.category} has no candidate interactions")

    with torch.no_grad():
        f_img = model.encode(image)
        if config.feature_source == "sap":
            feats = model.pair_features(f_img, [human.box], [obj.box])
            interactiveness = float(feats.interactiveness[0])
            inter_embeds = model.inter_token(feats.f_inter[0])
        else:
            interactiveness = 1.0
            inter_embeds = model.roi_tokens(f_img, human.box, obj.box)
        phrases = interaction_phrases(pair.candidates, model.taxonomy)
        ctx = PairContext("pair", 0, pair, phrases, model.image_tokens(f_img), inter_embeds, f_img)
        scores = detector.scorer.score(ctx).tolist()

    print(f"interactiveness: {interactiveness:.6f}")
    print(f"{'verb_id':>7}  {'S_v':>8}  {'fused':>8}  phrase")
    for inter, phrase, s_v in zip(pair.candidates, phrases, scores, strict=True):
        fused = fuse_scores(s_v, interactiveness, human.score, obj.score)
        print(f"{inter.verb_id:>7}  {s_v:8.6f}  {fused:8.6f}  {phrase}")
    return EXIT_OK


def cmd_dump_attention(args: argparse.Namespace) -> int:
    config = _inference_config(args)
    detector = _detector(args, config)
    load_image = _image_loader(_images_dir(args))
    written = 0
    for record in _detection_records(args, detector):
        if args.image_id and record.id not in args.image_id:
            continue
        pairs = detector.pairs(record.detections)
        if not pairs:
            continue
        f_img = detector.model.encode(load_image(record.id))
        for index, pair in enumerate(pairs):
            dump_attention(detector.checkpoint, record.id, index, f_img, pair.human.box, pair.object.box, args.out)
            written += 1
    PlgLogger.log(message=f"{written} attention maps written to {args.out}", log_level=3, push=True)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = _inference_config(args)
    detector = _detector(args, config)
    load_image = _image_loader(_images_dir(args))
    records = _detection_records(args, detector)
    if args.limit:
        records = records[: args.limit]
    sample = [(r.id, load_image(r.id), r.detections) for r in records]
    report = benchmark_latency(detector, sample, warmup=args.warmup)
    if args.out:
        write_atomic_json(args.out, report.to_dict())
    print(
        f"images: {report.n_images}  mean: {report.mean_ms:.2f} ms  median: {report.median_ms:.2f} ms  "
        f"backend calls: {report.backend_calls}"
    )
    for phase, value in report.phase_mean_ms.items():
        print(f"  {phase}: {value:.2f} ms")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw (default 0)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info messages, -vv trace")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-image work")
    return common


def _inference_arguments(parser: argparse.ArgumentParser, needs_detections: bool = True) -> None:
    parser.add_argument("--config", required=True, type=Path, help="inference config JSON")
    parser.add_argument("--checkpoint", type=Path, help="overrides checkpoint_path of the config")
    parser.add_argument("--taxonomy", type=Path, help="taxonomy JSON checked against the checkpoint")
    parser.add_argument("--split", type=Path, help="zero-shot split JSON")
    parser.add_argument("--mode", choices=SCORING_MODES, help="overrides the scoring mode of the config")
    parser.add_argument("--backend", choices=("toy", "stub"), help="overrides the backend of the config")
    if needs_detections:
        parser.add_argument("--detections", required=True, type=Path, help="detections JSON")
        parser.add_argument("--images", type=Path, help="image directory (default: next to the detections)")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _Parser(prog="da-hoi", description=f"{__title__} {__version__}")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-splits", parents=[common], help="build a zero-shot split")
    p.add_argument("--taxonomy", required=True, type=Path, help="taxonomy JSON")
    p.add_argument("--setting", required=True, choices=[s for s in SPLIT_SETTINGS if s != "full"])
    p.add_argument("--hold-out-count", type=int, help="number of unseen interactions, objects or verbs")
    p.add_argument("--hold-out-ids", type=_id_list, help="explicit unseen object or verb ids (UO, UV)")
    p.add_argument("--out", required=True, type=Path, help="split JSON to write")
    p.set_defaults(func=cmd_build_splits)

    p = sub.add_parser("train", parents=[common], help="train stage 1 or stage 2")
    p.add_argument("--config", required=True, type=Path, help="training config JSON")
    p.add_argument("--recipe", choices=list(RECIPES), help="start from a named recipe, the config JSON overrides it")
    p.add_argument("--gt", required=True, type=Path, help="ground-truth JSON")
    p.add_argument("--taxonomy", type=Path, help="taxonomy JSON (default: the one of --init)")
    p.add_argument("--images", type=Path, help="image directory (default: next to the ground truth)")
    p.add_argument("--split", type=Path, help="zero-shot split JSON, unseen interactions are not trained on")
    p.add_argument("--init", type=Path, help="checkpoint to start from, required for stage 2")
    p.add_argument("--model-config", type=Path, help="model architecture JSON for a fresh stage 1")
    p.add_argument("--out", required=True, type=Path, help="checkpoint directory to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict triplets for a detections file")
    _inference_arguments(p)
    p.add_argument("--out", required=True, type=Path, help="predictions JSON to write")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="mAP of a predictions file")
    p.add_argument("--pred", required=True, type=Path, help="predictions JSON")
    p.add_argument("--gt", required=True, type=Path, help="ground-truth JSON")
    p.add_argument("--taxonomy", type=Path, help="taxonomy JSON (default: taxonomy.json next to the ground truth)")
    p.add_argument("--split", type=Path, help="zero-shot split JSON")
    p.add_argument("--iou-min", type=float, default=0.5, help="box IoU threshold")
    p.add_argument("--rare-threshold", type=int, default=10, help="rare interactions have fewer training instances")
    p.add_argument("--interpolation", choices=INTERPOLATIONS, default="all_point")
    p.add_argument("--out", type=Path, help="report JSON to write")
    p.add_argument("--csv", type=Path, help="per-interaction CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score-pair", parents=[common], help="score the candidates of one human-object pair")
    _inference_arguments(p, needs_detections=False)
    p.add_argument("--image", required=True, type=Path, help="image file")
    p.add_argument("--human", required=True, type=_box, help="human box x1,y1,x2,y2")
    p.add_argument("--object", required=True, type=_box, help="object box x1,y1,x2,y2")
    p.add_argument("--category", required=True, type=int, help="object category id")
    p.add_argument("--human-score", type=float, default=1.0, help="detector score of the human")
    p.add_argument("--object-score", type=float, default=1.0, help="detector score of the object")
    p.set_defaults(func=cmd_score_pair)

    p = sub.add_parser("dump-attention", parents=[common], help="write cross-attention maps as PNG files")
    _inference_arguments(p)
    p.add_argument("--image-id", action="append", help="restrict to these images (repeatable)")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("bench", parents=[common], help="per-image latency of the pipeline")
    _inference_arguments(p)
    p.add_argument("--limit", type=int, default=0, help="benchmark the first N images only")
    p.add_argument("--warmup", type=int, default=1, help="untimed images run first")
    p.add_argument("--out", type=Path, help="latency report JSON to write")
    p.set_defaults(func=cmd_bench)

    return parser


def run(argv: Sequence[str]) -> int:
    """Parse ``argv`` and run the command.

    :param argv: arguments without the program name
    :type argv: Sequence[str]
    :return: exit code
    :rtype: int
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as err:
        # --help and --version
        return int(err.code or 0)

    args.seed_given = args.seed is not None
    args.seed = args.seed if args.seed is not None else 0
    _apply_runtime_settings(args)
    try:
        return args.func(args)
    except HoiValidationError as err:
        PlgLogger.log(message=f"{args.command}: {err}", log_level=2, push=True)
        return EXIT_INVALID
    except (HoiError, OSError) as err:
        PlgLogger.log(message=f"{args.command}: {err}", log_level=2, push=True)
        return EXIT_RUNTIME
    finally:
        PlgOptionsManager.reset()


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
