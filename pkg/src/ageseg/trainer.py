"""A tiny voxel-wise multinomial logistic segmenter trained with SGD.

Each voxel is classified from seven features: a bias, the windowed
intensity, its 3x3x3 box mean, the three grid coordinates normalized to
[0, 1] by the volume extent, and the normalized distance from the volume
center.  The coordinate features make the model deliberately sensitive to
where anatomy sits relative to the volume, so a model fit on adult-sized
bodies degrades on small ones; that is the behavior the rehearsal and
upscaling experiments measure.

Training is plain mini-batch SGD on softmax cross-entropy, iterating cases
exactly as materialized in a :class:`~ageseg.cohort.TrainingPlan`, with a
per-case voxel sample that is class-balanced by default (background would
otherwise drown the organs).  Everything is bitwise deterministic given the
plan and config.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import CaseRecord, TrainingPlan, records_by_id
from .errors import ParameterError
from .volume import LabelVolume, ScalarVolume, read_volume

__all__ = [
    "DEFAULT_INTENSITY_WINDOW",
    "FEATURE_COUNT",
    "ModelParams",
    "TrainConfig",
    "TrainResult",
    "extract_features",
    "loss_and_grad",
    "train",
    "predict",
    "fixed_window_predictor",
    "save_model",
    "load_model",
]

# Soft-tissue window: organ contrasts land on an O(1) feature scale so the
# classifier can actually lean on intensity; air saturates below at -2.
DEFAULT_INTENSITY_WINDOW = (0.0, 700.0)
FEATURE_COUNT = 7

# normalization so the center-to-corner distance is exactly 1
_CORNER_DIST = math.sqrt(3.0) / 2.0


def _box_mean(field: np.ndarray) -> np.ndarray:
    """3x3x3 box mean with edge replication (three separable passes)."""
    out = field
    for axis in range(3):
        padded = np.pad(out, [(1, 1) if a == axis else (0, 0) for a in range(3)], mode="edge")
        lo = np.take(padded, range(0, out.shape[axis]), axis=axis)
        mid = np.take(padded, range(1, out.shape[axis] + 1), axis=axis)
        hi = np.take(padded, range(2, out.shape[axis] + 2), axis=axis)
        out = (lo + mid + hi) / 3.0
    return out


def extract_features(
    image: ScalarVolume, window: tuple[float, float] = DEFAULT_INTENSITY_WINDOW
) -> np.ndarray:
    """Per-voxel feature field of shape ``dims + (7,)``.

    Intensity is mapped affinely so ``window`` spans [0, 1] (no clipping);
    coordinates span [0, 1] per axis with single-sample axes at 0.
    """
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ParameterError(f"bad intensity window {window}")
    nx, ny, nz = image.dims
    norm = (image.data.astype(np.float64) - lo) / (hi - lo)
    feats = np.empty((nx, ny, nz, FEATURE_COUNT), dtype=np.float64)
    feats[..., 0] = 1.0
    feats[..., 1] = norm
    feats[..., 2] = _box_mean(norm)

    def axis_coords(n):
        return np.arange(n, dtype=np.float64) / (n - 1) if n > 1 else np.zeros(n)

    cx = axis_coords(nx).reshape(-1, 1, 1)
    cy = axis_coords(ny).reshape(1, -1, 1)
    cz = axis_coords(nz).reshape(1, 1, -1)
    feats[..., 3] = np.broadcast_to(cx, (nx, ny, nz))
    feats[..., 4] = np.broadcast_to(cy, (nx, ny, nz))
    feats[..., 5] = np.broadcast_to(cz, (nx, ny, nz))
    feats[..., 6] = (
        np.sqrt((cx - 0.5) ** 2 + (cy - 0.5) ** 2 + (cz - 0.5) ** 2) / _CORNER_DIST
    )
    return feats


@dataclass(frozen=True)
class ModelParams:
    """Weights of the voxel classifier: one row per class (background first)."""

    weights: np.ndarray  # (num_classes + 1, FEATURE_COUNT)
    num_classes: int
    intensity_window: tuple[float, float] = DEFAULT_INTENSITY_WINDOW
    train_dims: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (self.num_classes + 1, FEATURE_COUNT):
            raise ParameterError(
                f"weights must be ({self.num_classes + 1}, {FEATURE_COUNT}), "
                f"got {weights.shape}"
            )
        if not np.isfinite(weights).all():
            raise ParameterError("model weights must be finite")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @classmethod
    def zeros(cls, num_classes: int, **kwargs) -> "ModelParams":
        return cls(np.zeros((num_classes + 1, FEATURE_COUNT)), num_classes, **kwargs)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    batch_size: int = 256
    voxels_per_case: int = 4096
    seed: int = 0
    class_balanced: bool = True
    intensity_window: tuple[float, float] = DEFAULT_INTENSITY_WINDOW

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.voxels_per_case < 1:
            raise ParameterError("learning_rate, batch_size, voxels_per_case must be positive")


@dataclass
class TrainResult:
    stage_params: list[ModelParams]
    epoch_losses: list[float]  # mean sampled-voxel loss per epoch, all stages

    @property
    def final_params(self) -> ModelParams:
        return self.stage_params[-1]


def loss_and_grad(weights: np.ndarray, features: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. the weights.

    ``features`` is (B, F), ``labels`` (B,) with values in [0, C].  Uses the
    log-sum-exp trick; with zero weights the loss is exactly ``ln(C + 1)``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != weights.shape[1]:
        raise ParameterError(
            f"features must be (B, {weights.shape[1]}), got {features.shape}"
        )
    if not np.isfinite(features).all():
        raise ValueError("non-finite feature in batch")
    n_classes = weights.shape[0]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ParameterError(f"labels must lie in [0, {n_classes - 1}]")
    batch = features.shape[0]
    logits = features @ weights.T
    peak = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - peak)
    denom = shifted.sum(axis=1, keepdims=True)
    log_z = peak[:, 0] + np.log(denom[:, 0])
    rows = np.arange(batch)
    loss = float(np.mean(log_z - logits[rows, labels]))
    delta = shifted / denom
    delta[rows, labels] -= 1.0
    grad = delta.T @ features / batch
    return loss, grad


def _dilate6(mask: np.ndarray, iterations: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(iterations):
        grown = out.copy()
        grown[1:, :, :] |= out[:-1, :, :]
        grown[:-1, :, :] |= out[1:, :, :]
        grown[:, 1:, :] |= out[:, :-1, :]
        grown[:, :-1, :] |= out[:, 1:, :]
        grown[:, :, 1:] |= out[:, :, :-1]
        grown[:, :, :-1] |= out[:, :, 1:]
        out = grown
    return out


def _sample_voxels(rng, labels: np.ndarray, count: int, balanced: bool) -> np.ndarray:
    """Flat voxel positions for one case's SGD sample.

    Balanced mode gives every present class an equal draw; two thirds of the
    background quota come from a 2-voxel shell around the foreground
    (hard negatives), otherwise tiny organs would own their whole
    neighborhood positionally and drown in false positives at test time.
    """
    flat = labels.reshape(-1)
    if not balanced:
        return rng.integers(0, flat.size, size=count)
    present = np.unique(flat)
    choice = present[rng.integers(0, len(present), size=count)]
    positions = np.empty(count, dtype=np.intp)
    for value in present:  # ascending, so the rng call order is fixed
        take = choice == value
        quota = int(take.sum())
        where = np.flatnonzero(flat == value)
        if value == 0:
            shell = _dilate6(labels > 0, 2) & (labels == 0)
            shell_idx = np.flatnonzero(shell.reshape(-1))
            n_shell = (2 * quota) // 3 if len(shell_idx) else 0
            picks = [
                shell_idx[rng.integers(0, len(shell_idx), size=n_shell)]
                if n_shell
                else np.empty(0, dtype=np.intp),
                where[rng.integers(0, len(where), size=quota - n_shell)],
            ]
            positions[take] = np.concatenate(picks)
        else:
            positions[take] = where[rng.integers(0, len(where), size=quota)]
    return positions


def train(
    plan: TrainingPlan,
    records: list[CaseRecord],
    data_dir,
    cfg: TrainConfig = TrainConfig(),
    num_classes: int = 19,
) -> TrainResult:
    """Run the plan: SGD over per-case voxel samples, snapshot per stage.

    Cases are visited exactly in the plan's materialized order; a missing
    volume file raises ``FileNotFoundError`` naming the case.  Bitwise
    deterministic for a fixed (plan, cfg).
    """
    plan.validate_against(records)
    data_dir = Path(data_dir)
    by_id = records_by_id(records)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, plan.seed)))
    weights = np.zeros((num_classes + 1, FEATURE_COUNT))
    train_dims: tuple[int, int, int] | None = None
    stage_params: list[ModelParams] = []
    epoch_losses: list[float] = []

    for stage in plan.stages:
        for epoch_cases in stage.epoch_cases:
            running, seen = 0.0, 0
            for case_id in epoch_cases:
                record = by_id[case_id]
                image_path = data_dir / record.image
                label_path = data_dir / record.label
                for p in (image_path, label_path):
                    if not p.is_file():
                        raise FileNotFoundError(f"case {case_id}: missing volume {p}")
                image = read_volume(image_path, kind="scalar")
                label = read_volume(label_path, kind="label", num_classes=num_classes)
                if train_dims is None:
                    train_dims = image.dims
                feats = extract_features(image, cfg.intensity_window).reshape(-1, FEATURE_COUNT)
                labels_flat = label.labels.reshape(-1)
                pos = _sample_voxels(rng, label.labels, cfg.voxels_per_case, cfg.class_balanced)
                for start in range(0, len(pos), cfg.batch_size):
                    chunk = pos[start : start + cfg.batch_size]
                    loss, grad = loss_and_grad(weights, feats[chunk], labels_flat[chunk])
                    weights -= cfg.learning_rate * grad
                    running += loss * len(chunk)
                    seen += len(chunk)
            epoch_losses.append(running / seen if seen else float("nan"))
        stage_params.append(
            ModelParams(weights.copy(), num_classes, cfg.intensity_window, train_dims)
        )
    if not stage_params:  # degenerate plan: nothing trained
        stage_params.append(
            ModelParams(weights, num_classes, cfg.intensity_window, train_dims)
        )
    return TrainResult(stage_params, epoch_losses)


def predict(params: ModelParams, image: ScalarVolume) -> LabelVolume:
    """Per-voxel argmax of the class scores (ties go to the lower class)."""
    feats = extract_features(image, params.intensity_window)
    logits = feats.reshape(-1, FEATURE_COUNT) @ params.weights.T
    labels = np.argmax(logits, axis=1).astype(np.int32).reshape(image.dims)
    return LabelVolume(labels, image.spacing, image.origin, params.num_classes)


def fixed_window_predictor(
    params: ModelParams,
    window_dims: tuple[int, int, int] | None = None,
    fill_intensity: float = -1000.0,
):
    """Apply the model through a fixed field of view centered in the input.

    The classifier normalizes coordinates per volume, so plain
    :func:`predict` is blind to a uniform grid upscale.  Real segmentation
    networks are not: their receptive field is fixed in voxels.  This
    wrapper restores that property by always showing the model a window of
    ``window_dims`` voxels (default: the dims it was trained on), cropping
    or padding around the center and mapping labels back onto the full
    input grid (background outside the window).  Inputs already at the
    window size are predicted directly, so direct inference is unchanged.
    """
    dims = window_dims or params.train_dims
    if dims is None:
        raise ParameterError("no window dims: model has no train_dims recorded")

    def apply(image: ScalarVolume) -> LabelVolume:
        if image.dims == tuple(dims):
            return predict(params, image)
        src, dst = [], []
        for n_in, n_win in zip(image.dims, dims):
            if n_in >= n_win:
                lo = (n_in - n_win) // 2
                src.append(slice(lo, lo + n_win))
                dst.append(slice(0, n_win))
            else:
                lo = (n_win - n_in) // 2
                src.append(slice(0, n_in))
                dst.append(slice(lo, lo + n_in))
        window = np.full(tuple(dims), fill_intensity, dtype=np.float64)
        window[tuple(dst)] = image.data[tuple(src)]
        seen = ScalarVolume(window, image.spacing, image.origin)
        inside = predict(params, seen)
        labels = np.zeros(image.dims, dtype=np.int32)
        labels[tuple(src)] = inside.labels[tuple(dst)]
        return LabelVolume(labels, image.spacing, image.origin, params.num_classes)

    return apply


# ---------------------------------------------------------------------------
# Model file round trip
# ---------------------------------------------------------------------------

_MODEL_FORMAT = "ageseg-model-v1"


def save_model(params: ModelParams, path) -> None:
    payload = {
        "format": _MODEL_FORMAT,
        "num_classes": params.num_classes,
        "num_features": FEATURE_COUNT,
        "intensity_window": list(params.intensity_window),
        "train_dims": list(params.train_dims) if params.train_dims else None,
        "weights": [[float(v) for v in row] for row in params.weights],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path) -> ModelParams:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != _MODEL_FORMAT:
        raise ParameterError(f"{path}: not a {_MODEL_FORMAT} file")
    if payload["num_features"] != FEATURE_COUNT:
        raise ParameterError(f"{path}: unexpected feature count {payload['num_features']}")
    dims = payload.get("train_dims")
    return ModelParams(
        weights=np.array(payload["weights"], dtype=np.float64),
        num_classes=int(payload["num_classes"]),
        intensity_window=tuple(payload["intensity_window"]),
        train_dims=tuple(dims) if dims else None,
    )
