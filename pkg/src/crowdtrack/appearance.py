"""Per-target appearance models trained online from image patches.

Each target carries a small discriminative model over raw color features of
a fixed-size patch.  The default backend is closed-form ridge regression
trained on shifted patches with Gaussian labels; a normalized
cross-correlation template backend is available as a cheaper alternative.
Both produce one raw score per candidate location, with normalization and
negation into costs handled by the problem assembly stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PatchFeature",
    "TrainingSet",
    "RegressorModel",
    "NccTemplate",
    "extract_patch_features",
    "batch_features",
    "train_regressor",
    "fit_template",
    "score_candidates",
    "update_model",
]

DEFAULT_RIDGE = 0.1
DEFAULT_LEARNING_RATE = 0.05


# the last converted frame is kept by identity: scoring calls hit the same
# frame object hundreds of times per tracked frame, and converting a full
# raster each call dwarfs the patch work itself.  Callers must not mutate a
# frame in place between scoring calls.
_last_frame: list = [None, None]


def _as_float_frame(frame: np.ndarray) -> np.ndarray:
    if _last_frame[0] is frame:
        return _last_frame[1]
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"frame must have shape (H, W, 3), got {arr.shape}")
    out = arr.astype(float) / 255.0
    _last_frame[0] = frame
    _last_frame[1] = out
    return out


def _check_patch_size(patch_size: tuple[int, int]) -> tuple[int, int]:
    w, h = patch_size
    if w < 1 or h < 1:
        raise ValueError(f"patch size must be positive in both axes, got {patch_size}")
    return int(w), int(h)


@dataclass(frozen=True)
class PatchFeature:
    """Color feature of one patch: channel-major pixels, per-channel zero mean."""

    values: np.ndarray
    patch_size: tuple[int, int]

    def __post_init__(self) -> None:
        w, h = _check_patch_size(self.patch_size)
        if self.values.shape != (3 * w * h,):
            raise ValueError(
                f"feature length {self.values.shape} does not match "
                f"3*{w}*{h} for patch size {self.patch_size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("patch feature contains non-finite values")


def _grid_axes(x0: np.ndarray, y0: np.ndarray) -> tuple | None:
    """(xs, ys) axes if the points tile a row-major rectangle, else None."""
    xs = np.unique(x0)
    ys = np.unique(y0)
    if xs.size * ys.size != x0.size:
        return None
    if not np.array_equal(x0, np.tile(xs, ys.size)):
        return None
    if not np.array_equal(y0, np.repeat(ys, xs.size)):
        return None
    return xs, ys


def batch_features(
    frame: np.ndarray,
    centers: np.ndarray,
    patch_size: tuple[int, int],
) -> np.ndarray:
    """Features for many patch centers at once, one row per center.

    Patches extending past the frame replicate the nearest edge pixel.
    Rows are laid out channel-major (all red pixels, then green, then blue)
    with the per-channel mean subtracted.
    """
    w, h = _check_patch_size(patch_size)
    arr = _as_float_frame(frame)
    height, width = arr.shape[:2]
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x0 = np.round(centers[:, 0]).astype(int) - w // 2
    y0 = np.round(centers[:, 1]).astype(int) - h // 2
    # search grids are the hot case: a rectangle of fully interior patches
    # can be cut from one strided window view instead of gathered per pixel
    if (x0.size > 1 and x0.min() >= 0 and y0.min() >= 0
            and x0.max() + w <= width and y0.max() + h <= height):
        axes = _grid_axes(x0, y0)
        if axes is not None:
            xs, ys = axes
            view = np.lib.stride_tricks.sliding_window_view(
                arr, (h, w), axis=(0, 1))
            patches = view[np.ix_(ys, xs)].reshape(len(centers), 3, h * w)
            patches = patches - patches.mean(axis=2, keepdims=True)
            return patches.reshape(len(centers), 3 * h * w)
    xs = np.clip(x0[:, None] + np.arange(w)[None, :], 0, width - 1)
    ys = np.clip(y0[:, None] + np.arange(h)[None, :], 0, height - 1)
    patches = arr[ys[:, :, None], xs[:, None, :], :]
    patches = patches - patches.mean(axis=(1, 2), keepdims=True)
    return np.moveaxis(patches, 3, 1).reshape(len(centers), 3 * h * w)


def extract_patch_features(
    frame: np.ndarray,
    center: tuple[float, float],
    patch_size: tuple[int, int],
) -> PatchFeature:
    """Color feature of the patch centered at ``center``."""
    row = batch_features(frame, np.asarray([center]), patch_size)[0]
    return PatchFeature(values=row, patch_size=tuple(patch_size))


@dataclass(frozen=True)
class TrainingSet:
    """Shifted-patch design matrix with Gaussian regression labels."""

    samples: np.ndarray
    labels: np.ndarray
    patch_size: tuple[int, int]

    def __post_init__(self) -> None:
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.samples.shape[0]} sample rows but "
                f"{self.labels.shape[0]} labels"
            )
        if self.labels.min() < 0 or self.labels.max() > 1:
            raise ValueError("labels must lie in [0, 1]")

    @classmethod
    def from_frame(
        cls,
        frame: np.ndarray,
        center: tuple[float, float],
        patch_size: tuple[int, int],
        label_sigma: float | None = None,
    ) -> "TrainingSet":
        """Samples at every integer shift within half a patch of ``center``.

        Labels fall off as a Gaussian of the shift length, peaking at 1 for
        the unshifted patch; the default width is a tenth of the mean patch
        side.
        """
        w, h = _check_patch_size(patch_size)
        if label_sigma is None:
            label_sigma = 0.1 * (w + h) / 2
        dxs = np.arange(-(w // 2), w // 2 + 1)
        dys = np.arange(-(h // 2), h // 2 + 1)
        gx, gy = np.meshgrid(dxs, dys)
        shifts = np.column_stack([gx.ravel(), gy.ravel()])
        centers = np.asarray(center, dtype=float) + shifts
        samples = batch_features(frame, centers, patch_size)
        labels = np.exp(-(shifts**2).sum(axis=1) / (2 * label_sigma**2))
        return cls(samples=samples, labels=labels, patch_size=(w, h))


@dataclass(frozen=True)
class RegressorModel:
    """Linear scorer from ridge regression on patch features."""

    weights: np.ndarray
    ridge: float
    patch_size: tuple[int, int]
    learning_rate: float = DEFAULT_LEARNING_RATE

    def __post_init__(self) -> None:
        if self.ridge <= 0:
            raise ValueError(f"ridge must be positive, got {self.ridge}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("model weights contain non-finite values")


@dataclass(frozen=True)
class NccTemplate:
    """Template scorer: cosine similarity against a stored patch feature."""

    template: np.ndarray
    patch_size: tuple[int, int]
    learning_rate: float = DEFAULT_LEARNING_RATE


def train_regressor(
    training: TrainingSet,
    ridge: float = DEFAULT_RIDGE,
    learning_rate: float = DEFAULT_LEARNING_RATE,
) -> RegressorModel:
    """Exact ridge solution for the training set.

    Solves whichever of the primal and dual normal equations is smaller;
    with n samples and d features the dual system is n x n, which wins when
    patches are large relative to the shift grid.
    """
    if ridge <= 0:
        raise ValueError(f"ridge must be positive, got {ridge}")
    z = training.samples
    y = training.labels
    if not np.all(np.isfinite(z)):
        raise ValueError("training samples contain non-finite values")
    n, d = z.shape
    if n >= d:
        weights = np.linalg.solve(z.T @ z + ridge * np.eye(d), z.T @ y)
    else:
        alpha = np.linalg.solve(z @ z.T + ridge * np.eye(n), y)
        weights = z.T @ alpha
    return RegressorModel(
        weights=weights,
        ridge=ridge,
        patch_size=training.patch_size,
        learning_rate=learning_rate,
    )


def fit_template(
    frame: np.ndarray,
    center: tuple[float, float],
    patch_size: tuple[int, int],
    learning_rate: float = DEFAULT_LEARNING_RATE,
) -> NccTemplate:
    """Template model from a single patch at ``center``."""
    feature = extract_patch_features(frame, center, patch_size)
    return NccTemplate(
        template=feature.values,
        patch_size=feature.patch_size,
        learning_rate=learning_rate,
    )


def score_candidates(
    model: RegressorModel | NccTemplate,
    frame: np.ndarray,
    candidates: np.ndarray,
) -> np.ndarray:
    """Raw appearance score for each candidate position.

    Ridge models score by inner product with the learned weights; template
    models by normalized cross-correlation, with flat patches scoring 0.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("candidate list is empty")
    features = batch_features(frame, candidates, model.patch_size)
    if isinstance(model, RegressorModel):
        return features @ model.weights
    t_norm = np.linalg.norm(model.template)
    f_norm = np.linalg.norm(features, axis=1)
    if t_norm == 0:
        return np.zeros(len(candidates))
    scores = features @ model.template
    nonzero = f_norm > 0
    scores[nonzero] /= f_norm[nonzero] * t_norm
    scores[~nonzero] = 0.0
    return scores


def update_model(old, fresh, gamma: float | None = None):
    """Blend a freshly trained model into the running one.

    ``gamma`` = 0 keeps the old model, 1 replaces it; the default comes
    from the old model's learning rate.
    """
    if type(old) is not type(fresh):
        raise ValueError(
            f"cannot blend {type(fresh).__name__} into {type(old).__name__}"
        )
    if old.patch_size != fresh.patch_size:
        raise ValueError(
            f"patch sizes differ: {old.patch_size} vs {fresh.patch_size}"
        )
    if gamma is None:
        gamma = old.learning_rate
    if not 0 <= gamma <= 1:
        raise ValueError(f"learning rate must lie in [0, 1], got {gamma}")
    if isinstance(old, RegressorModel):
        if old.weights.shape != fresh.weights.shape:
            raise ValueError(
                f"weight lengths differ: {old.weights.shape} vs {fresh.weights.shape}"
            )
        blended = (1 - gamma) * old.weights + gamma * fresh.weights
        return RegressorModel(
            weights=blended,
            ridge=old.ridge,
            patch_size=old.patch_size,
            learning_rate=old.learning_rate,
        )
    blended = (1 - gamma) * old.template + gamma * fresh.template
    return NccTemplate(
        template=blended,
        patch_size=old.patch_size,
        learning_rate=old.learning_rate,
    )
