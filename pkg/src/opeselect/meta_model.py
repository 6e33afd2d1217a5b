"""Meta-level regressor mapping (task, estimator) features to predicted MSE.

The pieces, in the order they run:

* a feature/target preprocessor (one-hot for the flag block, ceiling clip,
  log1p on skewed nonnegative columns, min-max scaling);
* a bagged regression forest on the transformed rows;
* uniform random hyperparameter search scored by selection regret on
  held-back validation tasks;
* impurity-based feature importances aggregated back to the 43 source
  features;
* generalization-bound calculators for subgaussian ERM with and without a
  chi-squared domain-shift term;
* a checksummed binary model format whose round trip preserves predictions
  bit-exactly.

Transforms are always fit on training rows only. The final model is refit on
train+validation after the search picks hyperparameters; the test split is
recorded untouched so downstream reports can use it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ModelFormatError, SchemaMismatchError
from .features import FEATURE_SCHEMA_VERSION, FLAG_COLUMNS, N_FEATURES, RATIO_CEILING
from .forest import ForestHyperparams, RegressionForest, Tree
from .util import child_rng

CLIP_CEILING = RATIO_CEILING
SKEW_THRESHOLD = 1.0


def _skewness(x: NDArray[np.float64]) -> float:
    """Population-moment skewness; 0 for a constant column."""
    m = x.mean()
    s2 = ((x - m) ** 2).mean()
    if s2 <= 0.0:
        return 0.0
    return float(((x - m) ** 3).mean() / s2**1.5)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessor:
    """Fitted column transforms: one-hot, clip, conditional log1p, scale.

    Fitting order matters and matches ``preprocess_fit``: categorical columns
    are expanded to one indicator per observed training value, every column is
    clipped to ``clip`` from above, log1p is applied to columns that are
    nonnegative on the training split with skewness strictly above 1 (computed
    after clipping), then each column is mapped affinely to (0, 1), or to
    (-1, 1) when its training minimum is negative. ``source`` maps each output
    column back to its input feature for importance aggregation. The target
    always gets log1p followed by the same scaling rule.
    """

    n_inputs: int
    categorical: tuple[int, ...]
    categories: tuple[tuple[float, ...], ...]
    clip: float
    log_mask: NDArray[np.bool_]
    shift: NDArray[np.float64]
    scale: NDArray[np.float64]
    low: NDArray[np.float64]
    source: NDArray[np.int64]
    target_shift: float
    target_scale: float
    target_low: float

    @property
    def n_outputs(self) -> int:
        return self.source.size

    def _expand(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        cols = []
        cat_pos = {c: i for i, c in enumerate(self.categorical)}
        for j in range(self.n_inputs):
            if j in cat_pos:
                values = self.categories[cat_pos[j]]
                for v in values:
                    cols.append((X[:, j] == v).astype(np.float64))
            else:
                cols.append(X[:, j].astype(np.float64))
        return np.column_stack(cols)

    def transform(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_inputs:
            raise SchemaMismatchError(
                f"expected {self.n_inputs} input features, got {X.shape[1]}"
            )
        Z = self._expand(X)
        np.minimum(Z, self.clip, out=Z)
        lm = self.log_mask
        if lm.any():
            Z[:, lm] = np.log1p(Z[:, lm])
        return self.low + (Z - self.shift) * self.scale

    def transform_target(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        z = np.log1p(np.asarray(y, dtype=np.float64))
        if self.target_scale == 0.0:
            return np.full_like(z, self.target_low)
        return self.target_low + (z - self.target_shift) * self.target_scale

    def inverse_target(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        if self.target_scale == 0.0:
            return np.full_like(t, np.expm1(self.target_shift))
        return np.expm1(self.target_shift + (t - self.target_low) / self.target_scale)


def preprocess_fit(
    X: NDArray[np.float64],
    y: NDArray[np.float64],
    categorical_columns: tuple[int, ...] = (),
) -> Preprocessor:
    """Fit the four-step column pipeline and the target transform on (X, y)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("preprocessing needs at least two rows")
    if y.shape != (n,):
        raise ValueError("y must have one entry per row of X")
    if np.any(y <= -1.0):
        raise ValueError("targets must exceed -1 for the log1p transform")
    categorical = tuple(sorted(categorical_columns))
    if any(c < 0 or c >= d for c in categorical):
        raise ValueError("categorical column index out of range")

    categories = []
    source = []
    for j in range(d):
        if j in categorical:
            vals = np.unique(X[:, j])
            categories.append(tuple(float(v) for v in vals))
            source.extend([j] * vals.size)
        else:
            source.append(j)
    cat_pos = {c: i for i, c in enumerate(categorical)}

    cols = []
    for j in range(d):
        if j in cat_pos:
            for v in categories[cat_pos[j]]:
                cols.append((X[:, j] == v).astype(np.float64))
        else:
            cols.append(X[:, j])
    Z = np.column_stack(cols)
    np.minimum(Z, CLIP_CEILING, out=Z)

    n_out = Z.shape[1]
    log_mask = np.zeros(n_out, dtype=bool)
    for c in range(n_out):
        col = Z[:, c]
        if col.min() >= 0.0 and _skewness(col) > SKEW_THRESHOLD:
            log_mask[c] = True
            Z[:, c] = np.log1p(col)

    shift = Z.min(axis=0)
    span = Z.max(axis=0) - shift
    scale = np.zeros(n_out)
    low = np.where(shift < 0.0, -1.0, 0.0)
    width = np.where(shift < 0.0, 2.0, 1.0)
    nz = span > 0.0
    scale[nz] = width[nz] / span[nz]

    zy = np.log1p(y)
    t_shift = float(zy.min())
    t_span = float(zy.max()) - t_shift
    t_low = -1.0 if t_shift < 0.0 else 0.0
    t_scale = (2.0 if t_shift < 0.0 else 1.0) / t_span if t_span > 0.0 else 0.0
    return Preprocessor(
        n_inputs=d,
        categorical=categorical,
        categories=tuple(categories),
        clip=CLIP_CEILING,
        log_mask=log_mask,
        shift=shift,
        scale=scale,
        low=low,
        source=np.asarray(source, dtype=np.int64),
        target_shift=t_shift,
        target_scale=t_scale,
        target_low=t_low,
    )


# ---------------------------------------------------------------------------
# hyperparameter search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperparamSpace:
    """Sampling ranges for the forest search; integers inclusive, floats (lo, hi]."""

    n_estimators: tuple[int, int] = (50, 500)
    max_depth: tuple[int, int] = (1, 100)
    min_samples_split: tuple[int, int] = (2, 50)
    min_samples_leaf: tuple[int, int] = (1, 50)
    max_samples: tuple[float, float] = (0.01, 1.0)
    max_features: tuple[float, float] = (0.1, 1.0)

    def sample(self, rng: np.random.Generator) -> ForestHyperparams:
        def draw_int(lo_hi):
            lo, hi = lo_hi
            return int(rng.integers(lo, hi + 1))

        def draw_frac(lo_hi):
            lo, hi = lo_hi
            return float(hi - rng.random() * (hi - lo))

        return ForestHyperparams(
            n_estimators=draw_int(self.n_estimators),
            max_depth=draw_int(self.max_depth),
            min_samples_split=draw_int(self.min_samples_split),
            min_samples_leaf=draw_int(self.min_samples_leaf),
            max_samples=draw_frac(self.max_samples),
            max_features=draw_frac(self.max_features),
        )

    def contains(self, hp: ForestHyperparams) -> bool:
        return (
            self.n_estimators[0] <= hp.n_estimators <= self.n_estimators[1]
            and self.max_depth[0] <= hp.max_depth <= self.max_depth[1]
            and self.min_samples_split[0] <= hp.min_samples_split <= self.min_samples_split[1]
            and self.min_samples_leaf[0] <= hp.min_samples_leaf <= self.min_samples_leaf[1]
            and self.max_samples[0] < hp.max_samples <= self.max_samples[1]
            and self.max_features[0] < hp.max_features <= self.max_features[1]
        )


# A slimmer space for end-to-end runs on one core; every range sits inside the
# default space, trimming only the depth/size corners that dominate fit time.
DESK_SEARCH_SPACE = HyperparamSpace(
    n_estimators=(50, 150),
    max_depth=(1, 20),
    min_samples_split=(2, 50),
    min_samples_leaf=(5, 50),
    max_samples=(0.01, 1.0),
    max_features=(0.1, 0.6),
)


@dataclass(frozen=True)
class ValidationGroup:
    """One held-back (task, realization): candidate features and true MSEs."""

    features: NDArray[np.float64]
    true_mse: NDArray[np.float64]

    def __post_init__(self):
        if self.features.shape[0] != self.true_mse.shape[0]:
            raise ValueError("one MSE per candidate row is required")
        if self.features.shape[0] == 0:
            raise ValueError("a validation group cannot be empty")


@dataclass(frozen=True)
class SearchTrial:
    hyperparams: ForestHyperparams
    mean_regret: float


def _selection_regret(pred_mse: NDArray[np.float64], true_mse: NDArray[np.float64]) -> float:
    pick = int(np.argmin(pred_mse))
    return float(true_mse[pick] - true_mse.min())


def hyperparam_search(
    train_X: NDArray[np.float64],
    train_y: NDArray[np.float64],
    val_groups: list[ValidationGroup],
    budget: int = 50,
    seed: int = 0,
    space: HyperparamSpace = HyperparamSpace(),
    categorical_columns: tuple[int, ...] = FLAG_COLUMNS,
) -> tuple[ForestHyperparams, tuple[SearchTrial, ...]]:
    """Uniform random search minimizing mean validation selection regret.

    Each trial fits a forest on the training rows and, per validation group,
    picks the candidate with the lowest predicted MSE; the trial's score is
    the mean of ``true_mse[pick] - min(true_mse)`` over groups. Ties keep the
    earliest sampled configuration. Trials draw from per-iteration streams of
    ``seed``, so the record is independent of evaluation order.
    """
    if budget < 1:
        raise ValueError("search budget must be at least 1")
    if not val_groups:
        raise ValueError("hyperparameter search needs a non-empty validation set")
    pre = preprocess_fit(train_X, train_y, categorical_columns)
    Zt = pre.transform(train_X)
    yt = pre.transform_target(train_y)
    val_Z = [pre.transform(g.features) for g in val_groups]

    best_hp = None
    best_score = np.inf
    record = []
    for i in range(budget):
        hp = space.sample(child_rng(seed, i, 0))
        fit_seed = int(child_rng(seed, i, 1).integers(np.iinfo(np.int64).max))
        forest = RegressionForest(hp, seed=fit_seed).fit(Zt, yt)
        regrets = [
            _selection_regret(forest.predict(Z), g.true_mse)
            for Z, g in zip(val_Z, val_groups)
        ]
        score = float(np.mean(regrets))
        record.append(SearchTrial(hp, score))
        if score < best_score:
            best_score = score
            best_hp = hp
    return best_hp, tuple(record)


# ---------------------------------------------------------------------------
# the trained model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainedMetaModel:
    """Preprocessor + forest + provenance, ready for zero-shot selection."""

    preprocessor: Preprocessor
    forest: RegressionForest
    schema_version: int
    n_training_rows: int
    seed: int
    search_record: tuple[SearchTrial, ...]
    split_tasks: dict[str, tuple[int, ...]]

    def predict(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        return predict_mse(self, features)


def predict_mse(model: TrainedMetaModel, features: NDArray[np.float64]) -> NDArray[np.float64]:
    """Predicted MSE on the original target scale; accepts one row or many."""
    arr = np.asarray(features, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.preprocessor.n_inputs:
        raise SchemaMismatchError(
            f"feature vector has {arr.shape[1]} entries, model expects "
            f"{model.preprocessor.n_inputs}"
        )
    out = model.preprocessor.inverse_target(model.forest.predict(model.preprocessor.transform(arr)))
    return out[0] if single else out


def train_meta_model(
    features: NDArray[np.float64],
    targets: NDArray[np.float64],
    task_ids: NDArray[np.int64],
    realization_ids: NDArray[np.int64],
    budget: int = 50,
    seed: int = 0,
    space: HyperparamSpace = HyperparamSpace(),
) -> TrainedMetaModel:
    """Grouped 60/20/20 split, random search, then a refit on train+validation.

    Rows are grouped by ``task_ids`` so all realizations of a task land in the
    same split. Validation regret groups are the (task, realization) row sets;
    their true MSEs are the stored targets. The returned model's forest is fit
    on the union of the training and validation rows with the winning
    hyperparameters, and the untouched test task ids are recorded alongside
    the split so callers can evaluate on them.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    task_ids = np.asarray(task_ids, dtype=np.int64)
    realization_ids = np.asarray(realization_ids, dtype=np.int64)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise SchemaMismatchError(
            f"meta-dataset rows must have {N_FEATURES} features, got {X.shape[1] if X.ndim == 2 else 'non-matrix input'}"
        )
    if not (y.shape == task_ids.shape == realization_ids.shape == (n,)):
        raise ValueError("targets, task_ids and realization_ids must match the row count")

    tasks = np.unique(task_ids)
    if tasks.size < 3:
        raise ValueError("need at least three distinct tasks for a 60/20/20 split")
    order = tasks[child_rng(seed, 0).permutation(tasks.size)]
    n_train = max(1, int(round(0.6 * tasks.size)))
    n_val = max(1, int(round(0.2 * tasks.size)))
    if n_train + n_val >= tasks.size:
        n_train = tasks.size - n_val - 1
    if n_train < 1:
        raise ValueError("too few tasks to populate all three splits")
    train_tasks = order[:n_train]
    val_tasks = order[n_train : n_train + n_val]
    test_tasks = order[n_train + n_val :]

    train_mask = np.isin(task_ids, train_tasks)
    val_mask = np.isin(task_ids, val_tasks)

    groups = []
    val_rows = np.flatnonzero(val_mask)
    keys = task_ids[val_rows] * (realization_ids.max() + 1) + realization_ids[val_rows]
    for key in np.unique(keys):
        rows = val_rows[keys == key]
        groups.append(ValidationGroup(X[rows], y[rows]))

    best_hp, record = hyperparam_search(
        X[train_mask], y[train_mask], groups, budget=budget, seed=seed, space=space
    )

    fit_mask = train_mask | val_mask
    pre = preprocess_fit(X[fit_mask], y[fit_mask], FLAG_COLUMNS)
    fit_seed = int(child_rng(seed, 2).integers(np.iinfo(np.int64).max))
    forest = RegressionForest(best_hp, seed=fit_seed).fit(
        pre.transform(X[fit_mask]), pre.transform_target(y[fit_mask])
    )
    return TrainedMetaModel(
        preprocessor=pre,
        forest=forest,
        schema_version=FEATURE_SCHEMA_VERSION,
        n_training_rows=int(fit_mask.sum()),
        seed=seed,
        search_record=record,
        split_tasks={
            "train": tuple(int(t) for t in np.sort(train_tasks)),
            "val": tuple(int(t) for t in np.sort(val_tasks)),
            "test": tuple(int(t) for t in np.sort(test_tasks)),
        },
    )


def mdi_importance(model: TrainedMetaModel) -> NDArray[np.float64]:
    """Impurity-decrease importances aggregated to the original features.

    One-hot expansions contribute to their source feature. If no tree ever
    split (constant targets), there is no evidence to rank features and the
    mass is spread uniformly.
    """
    per_output = model.forest.feature_importances_
    out = np.zeros(model.preprocessor.n_inputs)
    np.add.at(out, model.preprocessor.source, per_output)
    total = out.sum()
    if total <= 0.0:
        return np.full(out.size, 1.0 / out.size)
    return out / total


# ---------------------------------------------------------------------------
# generalization bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the subgaussian ERM bound and its domain-shift extension."""

    sigma2: float
    hyp_class_size: int
    delta: float
    n_samples: int
    K: float = 0.0
    chi2_divergence: float = 0.0

    def __post_init__(self):
        if self.sigma2 <= 0.0:
            raise ValueError("sigma2 must be positive")
        if self.hyp_class_size < 1:
            raise ValueError("the hypothesis class must contain at least one element")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie strictly between 0 and 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.K < 0.0:
            raise ValueError("K must be nonnegative")
        if self.chi2_divergence < 0.0:
            raise ValueError("chi2_divergence must be nonnegative")


def erm_bound(inputs: BoundInputs) -> float:
    """High-probability excess-risk bound sqrt(8 sigma^2 log(2|F|/delta) / N)."""
    return float(
        np.sqrt(8.0 * inputs.sigma2 * np.log(2.0 * inputs.hyp_class_size / inputs.delta) / inputs.n_samples)
    )


def domain_shift_bound(inputs: BoundInputs) -> float:
    """ERM bound plus the shift penalty K * sqrt(chi-squared divergence)."""
    return erm_bound(inputs) + inputs.K * float(np.sqrt(inputs.chi2_divergence))


def chi_squared_divergence(p: NDArray[np.float64], q: NDArray[np.float64]) -> float:
    """E_p[((q-p)/p)^2] over a shared finite support; p must be positive."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share one support")
    if np.any(p <= 0.0):
        raise ValueError("the source distribution must be strictly positive everywhere")
    if np.any(q < 0.0):
        raise ValueError("the target distribution cannot have negative mass")
    return float(np.sum(p * ((q - p) / p) ** 2))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_MAGIC = b"OPSM"
MODEL_FORMAT_VERSION = 1
_FIXED = struct.Struct("<4sIIQ32s")


def _forest_arrays(forest: RegressionForest) -> tuple[dict, dict[str, NDArray]]:
    offsets = np.zeros(len(forest.trees_) + 1, dtype=np.int64)
    for i, t in enumerate(forest.trees_):
        offsets[i + 1] = offsets[i] + t.feature.size
    arrays = {
        "tree_offsets": offsets,
        "tree_feature": np.concatenate([t.feature for t in forest.trees_]),
        "tree_threshold": np.concatenate([t.threshold for t in forest.trees_]),
        "tree_left": np.concatenate([t.left for t in forest.trees_]),
        "tree_right": np.concatenate([t.right for t in forest.trees_]),
        "tree_value": np.concatenate([t.value for t in forest.trees_]),
        "tree_n_node": np.concatenate([t.n_node for t in forest.trees_]),
        "forest_importances": forest.feature_importances_,
    }
    meta = {
        "hyperparams": asdict(forest.params),
        "seed": forest.seed,
        "n_features": forest.n_features_,
        "oob_score": forest.oob_score_,
    }
    return meta, arrays


def serialize(model: TrainedMetaModel) -> bytes:
    """Versioned, checksummed byte encoding of a trained model."""
    if not model.forest.trees_:
        raise ValueError("cannot serialize an unfitted model")
    pre = model.preprocessor
    cat_values = np.concatenate([np.asarray(c, dtype=np.float64) for c in pre.categories]) if pre.categories else np.zeros(0)
    cat_offsets = np.zeros(len(pre.categories) + 1, dtype=np.int64)
    for i, c in enumerate(pre.categories):
        cat_offsets[i + 1] = cat_offsets[i] + len(c)
    forest_meta, arrays = _forest_arrays(model.forest)
    arrays.update(
        pre_log_mask=pre.log_mask.astype(np.uint8),
        pre_shift=pre.shift,
        pre_scale=pre.scale,
        pre_low=pre.low,
        pre_source=pre.source,
        pre_categorical=np.asarray(pre.categorical, dtype=np.int64),
        pre_cat_values=cat_values,
        pre_cat_offsets=cat_offsets,
    )
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "schema_version": model.schema_version,
        "n_inputs": pre.n_inputs,
        "clip": pre.clip,
        "target_shift": pre.target_shift,
        "target_scale": pre.target_scale,
        "target_low": pre.target_low,
        "forest": forest_meta,
        "n_training_rows": model.n_training_rows,
        "seed": model.seed,
        "search_record": [
            {"hyperparams": asdict(t.hyperparams), "mean_regret": t.mean_regret}
            for t in model.search_record
        ],
        "split_tasks": {k: list(v) for k, v in model.split_tasks.items()},
        "arrays": [
            {"name": k, "dtype": str(v.dtype), "shape": list(v.shape)}
            for k, v in arrays.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = struct.pack("<Q", len(header_bytes)) + header_bytes
    payload += b"".join(np.ascontiguousarray(arrays[s["name"]]).tobytes() for s in header["arrays"])
    digest = hashlib.sha256(payload).digest()
    return _FIXED.pack(_MAGIC, MODEL_FORMAT_VERSION, model.schema_version, len(payload), digest) + payload


def deserialize(blob: bytes) -> TrainedMetaModel:
    """Inverse of :func:`serialize`; rejects foreign, stale, or damaged input."""
    if len(blob) < _FIXED.size:
        raise ModelFormatError("model stream is shorter than the fixed header")
    magic, fmt, schema, length, digest = _FIXED.unpack_from(blob)
    if magic != _MAGIC:
        raise ModelFormatError("not a meta-model stream (bad magic bytes)")
    if fmt != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {fmt} is not readable by this build (expects {MODEL_FORMAT_VERSION})"
        )
    if schema != FEATURE_SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"model was built against feature schema {schema}, this build uses {FEATURE_SCHEMA_VERSION}"
        )
    payload = blob[_FIXED.size :]
    if len(payload) != length:
        raise ModelFormatError("model stream is truncated or padded")
    if hashlib.sha256(payload).digest() != digest:
        raise ModelFormatError("model stream failed its checksum")

    (header_len,) = struct.unpack_from("<Q", payload)
    header = json.loads(payload[8 : 8 + header_len].decode())
    arrays = {}
    pos = 8 + header_len
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dt.itemsize * count
        arrays[spec["name"]] = np.frombuffer(payload[pos : pos + nbytes], dtype=dt).reshape(spec["shape"]).copy()
        pos += nbytes

    cat_offsets = arrays["pre_cat_offsets"]
    cat_values = arrays["pre_cat_values"]
    categories = tuple(
        tuple(float(v) for v in cat_values[cat_offsets[i] : cat_offsets[i + 1]])
        for i in range(cat_offsets.size - 1)
    )
    pre = Preprocessor(
        n_inputs=int(header["n_inputs"]),
        categorical=tuple(int(c) for c in arrays["pre_categorical"]),
        categories=categories,
        clip=float(header["clip"]),
        log_mask=arrays["pre_log_mask"].astype(bool),
        shift=arrays["pre_shift"],
        scale=arrays["pre_scale"],
        low=arrays["pre_low"],
        source=arrays["pre_source"],
        target_shift=float(header["target_shift"]),
        target_scale=float(header["target_scale"]),
        target_low=float(header["target_low"]),
    )

    fmeta = header["forest"]
    forest = RegressionForest(ForestHyperparams(**fmeta["hyperparams"]), seed=int(fmeta["seed"]))
    off = arrays["tree_offsets"]
    forest.trees_ = [
        Tree(
            arrays["tree_feature"][off[i] : off[i + 1]],
            arrays["tree_threshold"][off[i] : off[i + 1]],
            arrays["tree_left"][off[i] : off[i + 1]],
            arrays["tree_right"][off[i] : off[i + 1]],
            arrays["tree_value"][off[i] : off[i + 1]],
            arrays["tree_n_node"][off[i] : off[i + 1]],
        )
        for i in range(off.size - 1)
    ]
    forest.n_features_ = int(fmeta["n_features"])
    forest.oob_score_ = None if fmeta["oob_score"] is None else float(fmeta["oob_score"])
    forest.feature_importances_ = arrays["forest_importances"]

    record = tuple(
        SearchTrial(ForestHyperparams(**t["hyperparams"]), float(t["mean_regret"]))
        for t in header["search_record"]
    )
    return TrainedMetaModel(
        preprocessor=pre,
        forest=forest,
        schema_version=int(header["schema_version"]),
        n_training_rows=int(header["n_training_rows"]),
        seed=int(header["seed"]),
        search_record=record,
        split_tasks={k: tuple(int(t) for t in v) for k, v in header["split_tasks"].items()},
    )


def save_meta_model(model: TrainedMetaModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_meta_model(path) -> TrainedMetaModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
