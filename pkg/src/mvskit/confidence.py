"""Confidence-map handling: class-balanced loss, BCE baselines, ROC AUC,
a counter-based fallback confidence, and the training-sample exchange format.

The class-balanced loss treats inliers and outliers separately,

    L(c, gt) = ||c+ - 1||_2 / N+  +  ||c- - 0||_2 / N-,

which keeps training signals meaningful on heavily unbalanced label maps.
Undefined label pixels are excluded from every loss and from the AUC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import formats
from .consistency import CounterMap, LabelMap
from .errors import IoFailure, ShapeMismatch, SingleClass
from .geometry import View, normals_to_polar_maps
from .patchmatch import DepthNormalMap

_BCE_EPS = 1e-7


@dataclass
class ConfidenceMap:
    """Per-pixel confidence in [0, 1] with a validity mask."""

    values: np.ndarray  # (H, W) float64
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise ShapeMismatch(f"values {self.values.shape} vs valid {self.valid.shape}")
        checked = self.values[self.valid]
        if checked.size and (checked.min() < 0.0 or checked.max() > 1.0):
            raise ValueError("confidence values must lie in [0, 1]")

    @staticmethod
    def from_array(values: np.ndarray) -> "ConfidenceMap":
        values = np.asarray(values, dtype=np.float64)
        return ConfidenceMap(values=values, valid=np.ones(values.shape, dtype=bool))


def _as_arrays(c, c_gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common unpacking: confidence values, inlier mask, defined mask."""
    if isinstance(c, ConfidenceMap):
        values = c.values
        conf_valid = c.valid
    else:
        values = np.asarray(c, dtype=np.float64)
        conf_valid = np.ones(values.shape, dtype=bool)
    if isinstance(c_gt, LabelMap):
        labels = c_gt.labels
    else:
        raw = np.asarray(c_gt)
        labels = np.where(raw > 0, formats.LABEL_INLIER, formats.LABEL_OUTLIER).astype(np.uint8)
    if values.shape != labels.shape:
        raise ShapeMismatch(f"confidence {values.shape} vs labels {labels.shape}")
    defined = conf_valid & (labels != formats.LABEL_UNDEFINED)
    return values, labels == formats.LABEL_INLIER, defined


def balanced_l2_loss(c, c_gt) -> float:
    """Class-balanced L2 loss over defined pixels (inlier target 1, outlier 0).

    A class with no defined pixels contributes 0 by convention.
    """
    values, inlier, defined = _as_arrays(c, c_gt)
    pos = defined & inlier
    neg = defined & ~inlier
    loss = 0.0
    if pos.any():
        loss += float(np.linalg.norm(values[pos] - 1.0)) / pos.sum()
    if neg.any():
        loss += float(np.linalg.norm(values[neg])) / neg.sum()
    return loss


def bce_loss(c, c_gt, negative_weight: float = 1.0) -> float:
    """Binary cross entropy over defined pixels.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs. The weighted
    variant scales the outlier (negative) term by `negative_weight`.
    """
    values, inlier, defined = _as_arrays(c, c_gt)
    if not defined.any():
        return 0.0
    v = np.clip(values[defined], _BCE_EPS, 1.0 - _BCE_EPS)
    y = inlier[defined].astype(np.float64)
    terms = -(y * np.log(v) + negative_weight * (1.0 - y) * np.log(1.0 - v))
    return float(terms.mean())


def roc_auc(c, c_gt) -> float:
    """Area under the ROC curve with inliers as the positive class.

    Computed by rank statistics (Mann-Whitney); ties contribute 0.5, so the
    result equals P(c_in > c_out) + 0.5 P(c_in = c_out).

    Raises:
        SingleClass: when the defined pixels contain only one class.
    """
    values, inlier, defined = _as_arrays(c, c_gt)
    v = values[defined]
    y = inlier[defined]
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} inliers / {n_neg} outliers")
    ranks = rankdata(v, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def heuristic_confidence(counter: CounterMap, n_sources: int | None = None) -> ConfidenceMap:
    """Fallback confidence: fraction of source views verifying the pixel."""
    n = counter.n_sources if n_sources is None else int(n_sources)
    if n < 1:
        raise ValueError("n_sources must be >= 1")
    values = np.clip(counter.count.astype(np.float64) / n, 0.0, 1.0)
    return ConfidenceMap(values=values, valid=np.ones(values.shape, dtype=bool))


def export_training_sample(
    view: View,
    normal_map: DepthNormalMap,
    counter: CounterMap,
    labels: LabelMap,
    out_dir,
) -> dict:
    """Write one view's training sample and append it to the manifest.

    Files per view: <name>.png (RGB), <name>_normal.pfm (polar 2-channel),
    <name>_counter.pfm (raw counts as float32), <name>_label.png. The
    manifest (manifest.json) gains one record with relative paths, the
    resolution and the scene's source count (needed to normalize the counter
    channel downstream).
    """
    h, w = view.gray.shape
    for arr, label in (
        (normal_map.depth, "normal map"),
        (counter.count, "counter map"),
        (labels.labels, "label map"),
    ):
        if arr.shape[:2] != (h, w):
            raise ShapeMismatch(f"{label} shape {arr.shape[:2]} vs image {(h, w)}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = view.name
    image_path = f"{name}.png"
    normal_path = f"{name}_normal.pfm"
    counter_path = f"{name}_counter.pfm"
    label_path = f"{name}_label.png"

    try:
        formats.write_image_png(out_dir / image_path, view.image)
        polar = normals_to_polar_maps(normal_map.normal, normal_map.valid)
        formats.write_two_channel_pfm(out_dir / normal_path, polar.astype(np.float32))
        formats.write_pfm(out_dir / counter_path, counter.count.astype(np.float32))
        formats.write_label_png(out_dir / label_path, labels.labels)
    except OSError as exc:
        raise IoFailure(f"failed to export {name}: {exc}") from exc

    record = {
        "image": image_path,
        "normal": normal_path,
        "counter": counter_path,
        "label": label_path,
        "width": w,
        "height": h,
        "n_sources": counter.n_sources,
    }
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    else:
        manifest = {"records": []}
    manifest["records"] = [r for r in manifest["records"] if r["image"] != image_path]
    manifest["records"].append(record)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return record


def load_confidence_pfm(path) -> ConfidenceMap:
    """Read a confidence PFM (values clipped into [0, 1], NaN -> invalid)."""
    data = formats.read_pfm(path).astype(np.float64)
    if data.ndim != 2:
        raise IoFailure(f"{path}: confidence PFM must be single-channel")
    valid = np.isfinite(data)
    values = np.clip(np.where(valid, data, 0.0), 0.0, 1.0)
    return ConfidenceMap(values=values, valid=valid)


def save_confidence_pfm(path, conf: ConfidenceMap) -> None:
    values = np.where(conf.valid, conf.values, np.nan).astype(np.float32)
    formats.write_pfm(path, values)
