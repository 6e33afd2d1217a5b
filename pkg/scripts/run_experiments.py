"""Run the named experiment presets against one trained model.

Each preset writes report.json and points.csv under <out-dir>/<preset>/.
The logging and classification sweeps need --model (see build_corpus.py);
the classification sweep additionally needs --data. Presets whose inputs
are missing are skipped with a note rather than failing the whole run.
"""

import argparse
import os
import time

from opeselect import PRESET_NAMES, ExperimentConfig, run_experiment_preset

NEEDS_MODEL = ("logging1", "logging2", "classification")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--presets", nargs="+", default=list(PRESET_NAMES), choices=PRESET_NAMES,
                        metavar="NAME", help=f"subset of: {', '.join(PRESET_NAMES)}")
    parser.add_argument("--model", default=None, help="trained model file")
    parser.add_argument("--meta", default=None, help="meta-dataset CSV for scaling and ablations")
    parser.add_argument("--data", default=None, help="labeled CSV for the classification sweep")
    parser.add_argument("--n-data", type=int, default=None, help="realizations per sweep point")
    parser.add_argument("--budget", type=int, default=None, help="search trials where training happens")
    parser.add_argument("--no-pasif", action="store_true", help="skip the importance-fitting baseline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    overrides = {}
    if args.n_data is not None:
        overrides["n_data"] = args.n_data
    if args.budget is not None:
        overrides["budget"] = args.budget

    for name in args.presets:
        if name in NEEDS_MODEL and args.model is None:
            print(f"{name}: skipped (needs --model)")
            continue
        if name == "classification" and args.data is None:
            print(f"{name}: skipped (needs --data)")
            continue
        config = ExperimentConfig(
            preset=name,
            out_dir=os.path.join(args.out_dir, name),
            seed=args.seed,
            workers=args.workers,
            model_path=args.model,
            meta_path=args.meta,
            data_path=args.data,
            include_pasif=not args.no_pasif,
            **overrides,
        )
        t0 = time.time()
        run_experiment_preset(config)
        print(f"{name}: done in {time.time() - t0:.0f}s -> {config.out_dir}/report.json")


if __name__ == "__main__":
    main()
