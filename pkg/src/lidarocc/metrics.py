"""Occupancy-prediction evaluation and the shape-miss recovery scenarios."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from lidarocc import boxes as boxmod
from lidarocc.geom import PointCloud, to_cartesian
from lidarocc.occlusion import Cause, RegionMask
from lidarocc.occupancy import DomainMismatchError, OccupancyGrid

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


class RecoveryScenario(Enum):
    NR = "NR"
    EO = "EO"
    EO_SM = "EO+SM"
    EO_SM_SO = "EO+SM+SO"

    @classmethod
    def parse(cls, text: str) -> "RecoveryScenario":
        for member in cls:
            if member.value == text or member.name == text:
                return member
        raise ValueError(f"unknown scenario {text!r}; expected one of "
                         f"{[m.value for m in cls]}")


_SCENARIO_CAUSES = {
    RecoveryScenario.NR: (),
    RecoveryScenario.EO: (Cause.EXTERNAL_OCCLUSION,),
    RecoveryScenario.EO_SM: (Cause.EXTERNAL_OCCLUSION, Cause.SIGNAL_MISS),
    RecoveryScenario.EO_SM_SO: (
        Cause.EXTERNAL_OCCLUSION, Cause.SIGNAL_MISS, Cause.SELF_OCCLUSION,
    ),
}


@dataclass(frozen=True)
class ThresholdMetrics:
    threshold: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    object_coverage: float
    tp: int
    fp: int
    tn: int
    fn: int
    covered_boxes: int = 0
    n_boxes: int = 0


@dataclass
class OccupancyReport:
    per_threshold: list[ThresholdMetrics]

    def at(self, threshold: float) -> ThresholdMetrics:
        for m in self.per_threshold:
            if m.threshold == threshold:
                return m
        raise KeyError(f"no metrics at threshold {threshold}")

    def rows(self) -> list[dict]:
        return [
            {
                "threshold": m.threshold,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "accuracy": m.accuracy,
                "object_coverage": m.object_coverage,
            }
            for m in self.per_threshold
        ]


def _safe_precision(tp: int, fp: int, positives_in_labels: int) -> float:
    if tp + fp == 0:
        return 1.0 if positives_in_labels == 0 else 0.0
    return tp / (tp + fp)


def _safe_recall(tp: int, fn: int) -> float:
    if tp + fn == 0:
        return 1.0
    return tp / (tp + fn)


def evaluate_occupancy(
    pred: OccupancyGrid,
    target: OccupancyGrid,
    labeled_boxes=(),
    thresholds=DEFAULT_THRESHOLDS,
) -> OccupancyReport:
    """Precision/recall/F1/accuracy over domain voxels plus object coverage.

    A voxel counts positive when its predicted probability exceeds the
    threshold. Object coverage is the fraction of boxes containing at least
    one positive voxel, with containment tested at the voxel center.

    Degenerate conventions: with no predicted positives, precision is 1 if
    the labels have none either and 0 otherwise; with no label positives,
    recall is 1. With no boxes, coverage is vacuously 1.
    """
    if not pred.same_domain(target):
        raise DomainMismatchError("prediction and target must share grid and domain")
    labels = target.values > 0.5
    n = len(target)

    centers_cart = None
    if len(labeled_boxes) and n:
        centers_cart = to_cartesian(pred.grid.centers_of(pred.indices))

    out = []
    for tau in thresholds:
        positive = pred.values > tau
        tp = int((positive & labels).sum())
        fp = int((positive & ~labels).sum())
        fn = int((~positive & labels).sum())
        tn = n - tp - fp - fn

        precision = _safe_precision(tp, fp, int(labels.sum()))
        recall = _safe_recall(tp, fn)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        accuracy = (tp + tn) / n if n else 1.0

        covered = 0
        if len(labeled_boxes) and positive.any():
            pos_centers = centers_cart[positive]
            for box in labeled_boxes:
                if boxmod.points_in_box(pos_centers, box).any():
                    covered += 1
        coverage = covered / len(labeled_boxes) if len(labeled_boxes) else 1.0

        out.append(ThresholdMetrics(tau, precision, recall, f1, accuracy,
                                    coverage, tp, fp, tn, fn,
                                    covered, len(labeled_boxes)))
    return OccupancyReport(out)


@dataclass
class RecoveredFrame:
    cloud: PointCloud
    added_mask: np.ndarray  # bool over the output cloud rows
    n_added: int
    scenario: RecoveryScenario


def recover_scenario(
    cloud: PointCloud,
    shapes,
    mask: RegionMask,
    scenario: RecoveryScenario,
    synthetic_intensity: float = 0.5,
    at_voxel_centers: bool = False,
) -> RecoveredFrame:
    """Augment a frame with assembled-shape points in cause-labeled voxels.

    NR returns the frame unchanged; EO adds shape points in externally
    occluded voxels; EO+SM also fills signal-miss voxels; EO+SM+SO also
    fills self-occluded ones. Original points are never moved or dropped.
    ``at_voxel_centers`` snaps added points to their voxel centers instead
    of the shape point locations.
    """
    scenario = RecoveryScenario.parse(scenario) if isinstance(scenario, str) else scenario
    causes = _SCENARIO_CAUSES[scenario]
    if not causes or not shapes:
        out = PointCloud(cloud.data.copy())
        return RecoveredFrame(out, np.zeros(len(out), dtype=bool), 0, scenario)

    cause_values = np.array([int(c) for c in causes])
    grid = mask.grid
    added = []
    for shape in shapes:
        world = np.concatenate([shape.world_native(), shape.world_borrowed()])
        if len(world) == 0:
            continue
        idx, ok = grid.bin_indices(grid.coordinates(world))
        sel = idx[ok]
        vox_cause = mask.cause[sel[:, 0], sel[:, 1], sel[:, 2]]
        wanted = np.isin(vox_cause, cause_values)
        if not wanted.any():
            continue
        if at_voxel_centers:
            pts = to_cartesian(grid.centers_of(sel[wanted]))
        else:
            pts = world[ok][wanted]
        added.append(pts)

    if added:
        new_pts = np.concatenate(added)
        new_rows = np.column_stack([new_pts, np.full(len(new_pts), synthetic_intensity)])
        data = np.concatenate([cloud.data, new_rows])
    else:
        data = cloud.data.copy()
    out = PointCloud(data)
    added_mask = np.zeros(len(out), dtype=bool)
    added_mask[len(cloud):] = True
    return RecoveredFrame(out, added_mask, int(added_mask.sum()), scenario)
