"""Small shared helpers: deterministic RNG streams, text formats, bootstrap CIs."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

# One float format used by every text artifact we write. 17 significant digits
# round-trip any IEEE double exactly.
FLOAT_FMT = "%.17g"


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for (seed, key).

    Streams with different keys are statistically independent, and the result
    depends only on the arguments, never on call order. This is the only way
    randomness is derived anywhere in the package.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def child_seed(seed: int, *key: int) -> int:
    """A derived integer seed on the same keyed-stream scheme as child_rng."""
    return int(child_rng(seed, *key).integers(np.iinfo(np.int64).max))


def format_float(x: float) -> str:
    return FLOAT_FMT % (x,)


def write_csv(path, header: list[str], rows, comment: str | None = None) -> None:
    """Write rows of floats/ints/strings as CSV with an optional leading comment line."""
    with open(path, "w", encoding="utf-8") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV written by :func:`write_csv`; comment lines are skipped."""
    header: list[str] | None = None
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None:
        header = []
    return header, rows


def bootstrap_ci(
    values: NDArray[np.float64],
    rng: np.random.Generator,
    n_resamples: int = 1000,
    level: float = 0.95,
) -> tuple[float, float, float]:
    """Mean with a percentile bootstrap confidence interval.

    Returns (mean, lo, hi). With a single value the interval collapses to it.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(values.mean()), float(lo), float(hi)
