"""Occluded and signal-miss regions on the spherical grid, plus per-voxel
shape-miss cause labels for voxels inside labeled boxes.

An angular column (phi, theta) with a return occludes everything behind the
return. Columns with no return at all are signal-miss candidates; a
candidate region qualifies when it borders columns that do have signal and
is small enough not to be sky or ground.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from lidarocc import boxes as boxmod
from lidarocc.geom import SphericalGrid, VoxelizedCloud

__all__ = [
    "Cause",
    "RangeImage",
    "RegionMask",
    "build_range_image",
    "identify_occluded",
    "identify_signal_miss",
    "build_region_mask",
    "classify_cause",
]

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class Cause(IntEnum):
    NONE = 0
    OBSERVED = 1
    EXTERNAL_OCCLUSION = 2
    SIGNAL_MISS = 3
    SELF_OCCLUSION = 4


@dataclass
class RangeImage:
    """Per-(phi, theta) column signal flag and nearest-return range."""

    has_signal: np.ndarray  # (nphi, ntheta) bool
    min_r: np.ndarray       # (nphi, ntheta) float, inf where no signal


@dataclass
class RegionMask:
    """Per-voxel region membership over one spherical grid.

    ``cause`` is nonzero only for voxels inside some labeled box; it is
    filled by :func:`classify_cause` and stays all-NONE until then.
    """

    grid: SphericalGrid
    occupied: np.ndarray
    in_r_oc: np.ndarray
    in_r_sm: np.ndarray
    cause: np.ndarray
    box_index: np.ndarray
    empty_boxes: list = field(default_factory=list)

    @property
    def domain(self) -> np.ndarray:
        """The occlusion-or-signal-miss region the occupancy work runs on."""
        return self.in_r_oc | self.in_r_sm


def build_range_image(vox: VoxelizedCloud) -> RangeImage:
    """Collapse a voxelized cloud to the (phi, theta) signal image."""
    nr, nphi, ntheta = vox.grid.shape
    has_signal = vox.occupancy().any(axis=0)
    min_r = np.full((nphi, ntheta), np.inf)

    in_range = vox.point_voxel >= 0
    if in_range.any():
        cols = vox.indices[vox.point_voxel[in_range]][:, 1:]
        r = np.linalg.norm(vox.cloud.xyz[in_range], axis=1)
        flat = cols[:, 0] * ntheta + cols[:, 1]
        np.minimum.at(min_r.ravel(), flat, r)
    return RangeImage(has_signal, min_r)


def identify_occluded(vox: VoxelizedCloud) -> np.ndarray:
    """R_OC: occupied voxels plus every voxel behind one in its column."""
    return np.maximum.accumulate(vox.occupancy(), axis=0)


def identify_signal_miss(
    grid: SphericalGrid,
    image: RangeImage,
    max_region_pixels: int = 200,
    extent: str = "full",
) -> np.ndarray:
    """R_SM: all r-bins of columns in qualifying no-signal regions.

    A 4-connected no-signal region qualifies when it contains at least one
    pixel bordering a signal pixel and its area is at most
    ``max_region_pixels`` (regions touching nothing but the frame edge have
    no such border pixel and never qualify). ``extent='bracketed'`` limits
    the r-bins to the interval spanned by the region's neighboring returns
    instead of the full column; fidelity of that mode is not claimed.
    """
    if extent not in ("full", "bracketed"):
        raise ValueError(f"unknown signal-miss extent {extent!r}")
    nr, nphi, ntheta = grid.shape
    out = np.zeros((nr, nphi, ntheta), dtype=bool)

    no_signal = ~image.has_signal
    if not no_signal.any():
        return out

    labels, n_regions = ndimage.label(no_signal, structure=_CROSS)
    signal_adjacent = no_signal & ndimage.binary_dilation(image.has_signal, structure=_CROSS)

    border_labels = np.unique(labels[signal_adjacent])
    sizes = np.bincount(labels.ravel(), minlength=n_regions + 1)

    for lab in border_labels:
        if lab == 0 or sizes[lab] > max_region_pixels:
            continue
        region = labels == lab
        if extent == "full":
            out[:, region] = True
        else:
            ring = ndimage.binary_dilation(region, structure=_CROSS) & image.has_signal
            rvals = image.min_r[ring]
            lo_r, hi_r = rvals.min(), rvals.max()
            lo = int((lo_r - grid.r_range[0]) / grid.voxel_size[0])
            hi = int((hi_r - grid.r_range[0]) / grid.voxel_size[0])
            lo = max(lo, 0)
            hi = min(hi, nr - 1)
            out[lo:hi + 1, region] = True
    return out


def build_region_mask(
    vox: VoxelizedCloud,
    max_sm_region_pixels: int = 200,
    sm_extent: str = "full",
) -> RegionMask:
    """Compute occupied / R_OC / R_SM flags; cause labels start empty."""
    grid = vox.grid
    image = build_range_image(vox)
    occupied = vox.occupancy()
    return RegionMask(
        grid=grid,
        occupied=occupied,
        in_r_oc=identify_occluded(vox),
        in_r_sm=identify_signal_miss(grid, image, max_sm_region_pixels, sm_extent),
        cause=np.zeros(grid.shape, dtype=np.int8),
        box_index=np.full(grid.shape, -1, dtype=np.int32),
    )


def _last_occupied_below(occupied: np.ndarray) -> np.ndarray:
    """Per voxel, the largest occupied r-index at or before it (-1 if none)."""
    nr = occupied.shape[0]
    idx = np.where(occupied, np.arange(nr)[:, None, None], -1)
    return np.maximum.accumulate(idx, axis=0)


def classify_cause(
    mask: RegionMask, labeled_boxes, vox: VoxelizedCloud, voxel_margin: bool = True
) -> RegionMask:
    """Label every voxel inside a labeled box with its shape-miss cause.

    Occupied in-box voxels are OBSERVED. Empty ones are SIGNAL_MISS when in
    R_SM; when in R_OC they are SELF_OCCLUSION if the nearest occupied voxel
    below them in the column holds any point of the same box (ties go to the
    weaker self-occlusion claim), EXTERNAL_OCCLUSION otherwise; NONE when in
    neither region. Returns a new mask carrying the labels; boxes that
    contain no points at all are reported in ``empty_boxes``.

    With ``voxel_margin`` a voxel counts as inside when its center is within
    half its own diagonal of the box, so boundary voxels that straddle a box
    face participate; object surfaces sit exactly on those faces.
    """
    grid = mask.grid
    cause = np.zeros(grid.shape, dtype=np.int8)
    box_index = np.full(grid.shape, -1, dtype=np.int32)
    if len(labeled_boxes) == 0:
        return RegionMask(grid, mask.occupied, mask.in_r_oc, mask.in_r_sm, cause, box_index, [])

    flat_centers = grid.voxel_centers_cartesian().reshape(-1, 3)
    margins = grid.voxel_half_diagonals().ravel() if voxel_margin else 0.0
    # hair of inflation so returns sitting exactly on a box face still count
    point_owner = boxmod.assign_points_to_boxes(vox.cloud.xyz, labeled_boxes, inflate=1 + 1e-9)

    occ = mask.occupied
    last_below = _last_occupied_below(occ)

    empty_boxes = []
    for bi, box in enumerate(labeled_boxes):
        if not np.any(point_owner == bi):
            empty_boxes.append(bi)
        inside = boxmod.points_in_box(flat_centers, box, margin=margins).reshape(grid.shape)
        inside &= box_index == -1  # first box keeps contested voxels
        if not inside.any():
            continue
        box_index[inside] = bi

        occupied_in = inside & occ
        cause[occupied_in] = Cause.OBSERVED

        empty_in = inside & ~occ
        sm = empty_in & mask.in_r_sm
        cause[sm] = Cause.SIGNAL_MISS

        oc = empty_in & mask.in_r_oc & ~mask.in_r_sm
        if oc.any():
            # voxels that contain at least one point belonging to this box
            holds_own = np.zeros(grid.shape, dtype=bool)
            rows = vox.point_voxel[point_owner == bi]
            rows = rows[rows >= 0]
            if len(rows):
                own = vox.indices[np.unique(rows)]
                holds_own[own[:, 0], own[:, 1], own[:, 2]] = True

            vi, vj, vk = np.nonzero(oc)
            occluder_r = last_below[vi, vj, vk]
            same = holds_own[occluder_r, vj, vk]
            cause[vi[same], vj[same], vk[same]] = Cause.SELF_OCCLUSION
            cause[vi[~same], vj[~same], vk[~same]] = Cause.EXTERNAL_OCCLUSION

    return RegionMask(grid, mask.occupied, mask.in_r_oc, mask.in_r_sm, cause, box_index, empty_boxes)
