"""Approximate complete object shapes by mirroring and borrowing points.

Objects live in their box's canonical frame (center origin, heading +x).
Cars and cyclists get mirrored across the middle section plane; a scoring
heuristic then ranks same-class source objects by how well they cover the
target and how many new match-grid voxels they can contribute, and the best
three donate points into the target's unoccupied voxels.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from lidarocc import boxes as boxmod
from lidarocc.occlusion import Cause

MIRRORED_CLASSES = ("Car", "Cyclist")

# Match-grid voxel packing: ~±160 m of canonical extent at any practical
# voxel size fits comfortably.
_PACK_OFFSET = 1 << 20
_PACK_STRIDE = 1 << 21


@dataclass(frozen=True)
class HeuristicParams:
    alpha: float = 2.0
    beta: float = 1.0
    match_voxel_size: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.match_voxel_size <= 0:
            raise ValueError("need alpha, beta >= 0 and match_voxel_size > 0")


@dataclass
class ObjectInstance:
    """Points of one labeled object, expressed in its canonical box frame."""

    oid: tuple  # (frame id, box index)
    cls: str
    box: boxmod.LabeledBox3D
    points: np.ndarray  # (M, 3) canonical
    mirrored: bool = False


@dataclass
class AssembledShape:
    """A target's mirrored points plus borrowed fill, all canonical."""

    target_oid: tuple
    cls: str
    box: boxmod.LabeledBox3D
    native: np.ndarray                      # (M, 3)
    borrowed: np.ndarray                    # (K, 3)
    borrowed_source: np.ndarray             # (K,) index into source_oids
    source_oids: list = field(default_factory=list)

    def world_native(self) -> np.ndarray:
        return boxmod.to_world(self.native, self.box)

    def world_borrowed(self) -> np.ndarray:
        return boxmod.to_world(self.borrowed, self.box) if len(self.borrowed) else self.borrowed.reshape(0, 3)


def match_voxel_codes(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Packed int64 voxel id per canonical point (floor binning)."""
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)
    idx += _PACK_OFFSET
    return (idx[:, 0] * _PACK_STRIDE + idx[:, 1]) * _PACK_STRIDE + idx[:, 2]


def match_voxel_set(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.unique(match_voxel_codes(points, voxel_size))


def extract_objects(cloud, labeled_boxes, frame_id="0", inflate: float = 1.0):
    """Pull each box's points into its canonical frame.

    Returns (objects, empty_box_indices); empty boxes still produce an
    instance so callers can report them against the label file.
    """
    xyz = cloud.xyz if hasattr(cloud, "xyz") else np.asarray(cloud)
    objects, empties = [], []
    for bi, box in enumerate(labeled_boxes):
        mask = boxmod.points_in_box(xyz, box, inflate=inflate)
        canon = boxmod.to_canonical(xyz[mask], box)
        if len(canon) == 0:
            empties.append(bi)
        objects.append(ObjectInstance((frame_id, bi), box.cls, box, canon))
    return objects, empties


def mirror(obj: ObjectInstance, match_voxel_size: float = 0.2) -> ObjectInstance:
    """Add the reflection across the y = 0 section plane.

    Reflected copies whose match-grid voxel is already occupied by the
    object's own points are dropped. Pedestrians are not symmetric enough
    to mirror and are rejected.
    """
    if obj.cls not in MIRRORED_CLASSES:
        raise ValueError(f"mirroring applies to {MIRRORED_CLASSES}, not {obj.cls!r}")
    if len(obj.points) == 0:
        return ObjectInstance(obj.oid, obj.cls, obj.box, obj.points.copy(), mirrored=True)
    reflected = obj.points * np.array([1.0, -1.0, 1.0])
    occupied = match_voxel_set(obj.points, match_voxel_size)
    keep = ~np.isin(match_voxel_codes(reflected, match_voxel_size), occupied)
    pts = np.concatenate([obj.points, reflected[keep]])
    return ObjectInstance(obj.oid, obj.cls, obj.box, pts, mirrored=True)


def mirror_if_applicable(obj: ObjectInstance, match_voxel_size: float = 0.2) -> ObjectInstance:
    if obj.cls in MIRRORED_CLASSES:
        return mirror(obj, match_voxel_size)
    return obj


def _size_iou(a: boxmod.LabeledBox3D, b: boxmod.LabeledBox3D) -> float:
    """IoU of the two boxes co-centered and axis-aligned: size similarity only."""
    inter = min(a.l, b.l) * min(a.w, b.w) * min(a.h, b.h)
    return inter / (a.volume + b.volume - inter)


def heuristic_score(a: ObjectInstance, b: ObjectInstance, params: HeuristicParams) -> float:
    """Lower is a better source. Sum of a's nearest-neighbor distances into
    b, minus alpha times the box size similarity, plus beta over the number
    of match-grid voxels b adds beyond a's. A source adding no new voxels
    cannot fill anything and scores +inf."""
    if len(b.points) == 0:
        return math.inf
    extra = np.setdiff1d(
        match_voxel_set(b.points, params.match_voxel_size),
        match_voxel_set(a.points, params.match_voxel_size),
        assume_unique=True,
    )
    if len(extra) == 0:
        return math.inf
    if len(a.points):
        dists, _ = cKDTree(b.points).query(a.points)
        term1 = float(dists.sum())
    else:
        term1 = 0.0
    return term1 - params.alpha * _size_iou(a.box, b.box) + params.beta / len(extra)


def select_sources(target: ObjectInstance, bank, params: HeuristicParams, k: int = 3):
    """The k best-scoring finite sources of the target's class.

    The target itself (same oid) is skipped; ties break on (score, oid) so
    repeated calls are byte-identical.
    """
    scored = []
    for src in bank:
        if src.cls != target.cls or src.oid == target.oid:
            continue
        s = heuristic_score(target, src, params)
        if math.isfinite(s):
            scored.append((s, src.oid, src))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [src for _, _, src in scored[:k]]


def assemble(
    target: ObjectInstance,
    sources,
    params: HeuristicParams,
    mask=None,
    strict: bool = False,
) -> AssembledShape:
    """Fill the target's unoccupied match-grid voxels from ranked sources.

    Source points must land inside the target box and in a voxel no earlier
    point (native or previously borrowed) occupies. With ``strict=True`` a
    region mask with cause labels is required and borrowed points are kept
    only where the world-frame voxel carries a shape-miss cause.
    """
    if strict and mask is None:
        raise ValueError("strict mode needs a classified region mask")
    occupied = match_voxel_set(target.points, params.match_voxel_size)
    # sliver of slack: donor surface points sit exactly on the box faces
    half = 0.5 * np.array([target.box.l, target.box.w, target.box.h]) * (1 + 1e-9)

    borrowed, provenance, source_oids = [], [], []
    for si, src in enumerate(sources):
        source_oids.append(src.oid)
        pts = src.points[np.all(np.abs(src.points) <= half, axis=1)]
        if strict and len(pts):
            world = boxmod.to_world(pts, target.box)
            idx, ok = mask.grid.bin_indices(mask.grid.coordinates(world))
            causes = np.full(len(pts), Cause.NONE, dtype=np.int8)
            causes[ok] = mask.cause[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
            pts = pts[np.isin(causes, (Cause.EXTERNAL_OCCLUSION, Cause.SIGNAL_MISS, Cause.SELF_OCCLUSION))]
        if len(pts) == 0:
            continue
        codes = match_voxel_codes(pts, params.match_voxel_size)
        new = ~np.isin(codes, occupied)
        if new.any():
            borrowed.append(pts[new])
            provenance.append(np.full(int(new.sum()), si, dtype=np.int32))
            occupied = np.union1d(occupied, codes[new])

    if borrowed:
        borrowed_pts = np.concatenate(borrowed)
        prov = np.concatenate(provenance)
    else:
        borrowed_pts = np.zeros((0, 3))
        prov = np.zeros(0, dtype=np.int32)
    return AssembledShape(target.oid, target.cls, target.box, target.points.copy(),
                          borrowed_pts, prov, source_oids)
