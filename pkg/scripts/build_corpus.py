"""Build a meta-dataset of candidate MSEs and train the selection model.

Produces <out-dir>/meta.csv and <out-dir>/model.bin, the two artifacts the
experiment presets reuse. The build is resumable: rerunning after an
interruption picks up at the first unfinished task.
"""

import argparse
import os
import time

from opeselect import (
    DEFAULT_SPACE,
    DESK_SPACE,
    build_meta_dataset,
    read_meta_dataset,
    save_meta_model,
    train_meta_model,
)

SPACES = {"desk": DESK_SPACE, "full": DEFAULT_SPACE}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="artifacts", help="where meta.csv and model.bin land")
    parser.add_argument("--n-tasks", type=int, default=600, help="task families to sample")
    parser.add_argument("--space", choices=sorted(SPACES), default="desk",
                        help="sampling ranges; 'full' is much slower per task")
    parser.add_argument("--budget", type=int, default=50, help="hyperparameter search trials")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    meta_path = os.path.join(args.out_dir, "meta.csv")
    model_path = os.path.join(args.out_dir, "model.bin")

    t0 = time.time()
    rows = build_meta_dataset(
        meta_path, n_tasks=args.n_tasks, seed=args.seed,
        space=SPACES[args.space], workers=args.workers,
    )
    print(f"{meta_path}: {rows} rows ({time.time() - t0:.0f}s)")

    t0 = time.time()
    X, y, task_ids, realization_ids, _ = read_meta_dataset(meta_path)
    model = train_meta_model(
        X, y, task_ids, realization_ids, budget=args.budget, seed=args.seed,
    )
    save_meta_model(model, model_path)
    print(f"{model_path}: trained on {model.n_training_rows} rows ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
