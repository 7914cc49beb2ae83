"""Patch distributions to full-resolution masks, and IoU scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LabelRangeError, ShapeError


@dataclass(frozen=True)
class PatchGrid:
    """Geometry of a batch: n_tiles tiles, each rows x cols patches.

    Patch rows are tile-major, raster order (top-left first) inside each
    tile.
    """

    rows: int
    cols: int
    patch_px: int
    n_tiles: int = 1

    def __post_init__(self) -> None:
        if min(self.rows, self.cols, self.patch_px, self.n_tiles) < 1:
            raise ShapeError("grid dimensions must be >= 1")

    @property
    def patches_per_tile(self) -> int:
        return self.rows * self.cols

    @property
    def num_patches(self) -> int:
        return self.patches_per_tile * self.n_tiles

    @property
    def tile_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_tiles), self.patches_per_tile)


def upsample_patch_labels(labels: np.ndarray, patch_px: int) -> np.ndarray:
    """Nearest-neighbor block fill: each label becomes a patch_px square."""
    return np.repeat(np.repeat(labels, patch_px, axis=0), patch_px, axis=1)


def assemble_masks(Z: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    """Argmax each patch row (ties to the lowest class) and block-upsample.

    Returns one uint8 mask of shape (rows*patch_px, cols*patch_px) per
    tile.
    """
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise ShapeError(f"expected 2-D probabilities, got {Z.shape}")
    if Z.shape[0] != grid.num_patches:
        raise ShapeError(
            f"{Z.shape[0]} patch rows, grid describes {grid.num_patches}"
        )
    if Z.shape[1] > 256:
        raise LabelRangeError(f"{Z.shape[1]} classes exceed uint8 mask range")
    labels = np.argmax(Z, axis=1).astype(np.uint8)
    ppt = grid.patches_per_tile
    masks = []
    for t in range(grid.n_tiles):
        block = labels[t * ppt : (t + 1) * ppt].reshape(grid.rows, grid.cols)
        masks.append(upsample_patch_labels(block, grid.patch_px))
    return masks


def accumulate_confusion(
    pred: np.ndarray,
    gt: np.ndarray,
    num_classes: int,
    ignore_label: int | None = None,
) -> np.ndarray:
    """(C, C) int64 counts, rows = ground truth, cols = prediction.

    Pixels whose ground truth equals ignore_label are skipped entirely.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    keep = np.ones(gt.shape, dtype=bool) if ignore_label is None else gt != ignore_label
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    for name, arr in (("gt", g), ("pred", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            bad = int(arr[(arr < 0) | (arr >= num_classes)][0])
            raise LabelRangeError(f"{name} label {bad} outside [0, {num_classes})")
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_scores(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where the union is empty) and their mean.

    Classes absent from both prediction and ground truth are excluded
    from the mean rather than counted as 0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, tp / union, np.nan)
    included = ~np.isnan(per_class)
    miou = float(per_class[included].mean()) if included.any() else float("nan")
    return per_class, miou


def evaluation_report(cm: np.ndarray, class_names: list[str]) -> dict:
    """JSON-ready summary: per-class IoU, mIoU, pixel counts, exclusions."""
    per_class, miou = iou_scores(cm)
    return {
        "miou": miou,
        "per_class_iou": {
            name: (None if np.isnan(v) else float(v))
            for name, v in zip(class_names, per_class)
        },
        "excluded_classes": [
            name for name, v in zip(class_names, per_class) if np.isnan(v)
        ],
        "pixel_counts": {
            "total": int(cm.sum()),
            "per_class_gt": [int(c) for c in cm.sum(axis=1)],
            "per_class_pred": [int(c) for c in cm.sum(axis=0)],
        },
    }
