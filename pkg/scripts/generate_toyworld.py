#! python3

"""Script to generate a toy-world dataset: rendered PNG scenes, exact ground truth, optionally
jittered detections, the taxonomy with generated train counts and optionally a zero-shot split.
Run it from the root of the project, for example:

    python scripts/generate_toyworld.py --out data/toy --n-images 200 --jitter 3 --split RF-UC --hold-out 3
"""

# -- Imports
import argparse
import sys
from pathlib import Path

from da_hoi_tools.core.errors import HoiError
from da_hoi_tools.core.pairing import build_zero_shot_split
from da_hoi_tools.core.toyworld import ToySceneSpec, generate, write_dataset
from da_hoi_tools.toolbelt import PlgOptionsManager, load_dataclass


# -- Functions
def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Generate a toy-world HOI dataset.")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--n-images", type=int, default=100)
    parser.add_argument("--spec", type=Path, help="ToySceneSpec JSON, defaults otherwise")
    parser.add_argument("--seed", type=int, help="overrides the seed of the spec")
    parser.add_argument("--jitter", type=float, help="detection noise in pixels, overrides the spec")
    parser.add_argument("--geometric", action="store_true", help="no painted objects, every human faces right")
    parser.add_argument("--split", choices=("RF-UC", "NF-UC", "UO", "UV"), help="also write split.json")
    parser.add_argument("--hold-out", type=int, help="hold-out count of the split")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser.parse_args(argv)


def main(argv: list[str]) -> int:
    args = parse_args(argv)
    PlgOptionsManager.set_value_from_key("debug_mode", args.verbose > 0)
    PlgOptionsManager.set_value_from_key("verbosity", args.verbose)
    try:
        spec = load_dataclass(ToySceneSpec, args.spec) if args.spec else ToySceneSpec()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.jitter is not None:
            overrides["jitter_px"] = args.jitter
        if args.geometric:
            overrides.update(paint_prob=0.0, facing_right_prob=1.0)
        if overrides:
            spec = ToySceneSpec(**{**spec.__dict__, **overrides})
        dataset = generate(spec, args.n_images, jobs=args.jobs)
        split = build_zero_shot_split(dataset.taxonomy, args.split, args.hold_out) if args.split else None
        write_dataset(dataset, args.out, split)
    except HoiError as err:
        print(f"generate_toyworld: {err}", file=sys.stderr)
        return 1
    return 0


# -- Run
if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
