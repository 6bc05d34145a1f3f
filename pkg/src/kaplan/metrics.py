"""Evaluation metrics: symmetric Chamfer distance and threshold F1.

All metrics use plain Euclidean nearest-neighbor distances computed
exactly over every point (kd-tree, no sampling). Accuracy, completeness
and F1 are percentages in [0, 100]; reports carry the raw Chamfer value
(tables conventionally display it scaled by 1e3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

__all__ = ["EvalReport", "chamfer", "f1_score", "hole_region_report"]


@dataclass(frozen=True)
class EvalReport:
    """Metric bundle for one prediction/ground-truth comparison.

    region is "global" or "hole_only"; flagged marks a hole-only report
    whose restricted prediction set was empty (accuracy defined as 0).
    """

    chamfer: float
    accuracy: float
    completeness: float
    f1: float
    threshold: float
    region: str = "global"
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "chamfer": self.chamfer,
            "chamfer_x1000": 1e3 * self.chamfer,
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "f1": self.f1,
            "threshold": self.threshold,
            "flagged": self.flagged,
        }


def _nn_distances(src: PointCloud, dst: PointCloud) -> np.ndarray:
    d, _ = dst.tree.query(src.points)
    return d


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance between two clouds."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty input")
    return float(_nn_distances(a, b).mean() + _nn_distances(b, a).mean())


def _harmonic(accuracy: float, completeness: float) -> float:
    if accuracy + completeness == 0:
        return 0.0
    return 2.0 * accuracy * completeness / (accuracy + completeness)


def f1_score(pred: PointCloud, gt: PointCloud, threshold: float) -> EvalReport:
    """Accuracy / completeness / F1 at a distance threshold, plus Chamfer.

    Accuracy: percentage of predicted points within the threshold of a
    ground-truth point. Completeness: percentage of ground-truth points
    covered by a prediction. F1 is their harmonic mean (0 when both are 0).
    """
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("empty input")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    d_pred = _nn_distances(pred, gt)
    d_gt = _nn_distances(gt, pred)
    accuracy = 100.0 * float((d_pred <= threshold).mean())
    completeness = 100.0 * float((d_gt <= threshold).mean())
    return EvalReport(
        chamfer=float(d_pred.mean() + d_gt.mean()),
        accuracy=accuracy,
        completeness=completeness,
        f1=_harmonic(accuracy, completeness),
        threshold=threshold,
    )


def hole_region_report(
    pred: PointCloud,
    gt_complete: PointCloud,
    gt_missing: PointCloud,
    threshold: float,
) -> EvalReport:
    """Metrics restricted to the missing region.

    Predicted points are kept only when their nearest neighbor in the
    complete ground truth belongs to the missing subset (matched by exact
    coordinates); the survivors are scored against the missing cloud. An
    empty restriction yields a flagged all-zero report.
    """
    if len(pred) == 0 or len(gt_complete) == 0 or len(gt_missing) == 0:
        raise ValueError("empty input")
    complete_keys = {}
    for i, row in enumerate(gt_complete.points):
        complete_keys.setdefault(row.tobytes(), []).append(i)
    missing_mask = np.zeros(len(gt_complete), dtype=bool)
    for row in gt_missing.points:
        indices = complete_keys.get(row.tobytes())
        if not indices:
            raise ValueError("gt_missing must be a subset of gt_complete")
        missing_mask[indices] = True

    _, nearest = gt_complete.tree.query(pred.points)
    keep = missing_mask[nearest]
    if not keep.any():
        return EvalReport(
            chamfer=float("nan"),
            accuracy=0.0,
            completeness=0.0,
            f1=0.0,
            threshold=threshold,
            region="hole_only",
            flagged=True,
        )
    restricted = PointCloud(pred.points[keep])
    report = f1_score(restricted, gt_missing, threshold)
    return EvalReport(
        chamfer=report.chamfer,
        accuracy=report.accuracy,
        completeness=report.completeness,
        f1=report.f1,
        threshold=threshold,
        region="hole_only",
    )
