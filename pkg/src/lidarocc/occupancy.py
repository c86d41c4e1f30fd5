"""Occupancy ground truth over the occlusion domain, the focal shape loss,
and spherical-to-Cartesian probability transfer with max-pool downsampling.

Grids are sparse: only domain voxels carry values. Dense mirrors exist
solely inside the test suite's brute-force references.
"""

from dataclasses import dataclass

import numpy as np

from lidarocc.geom import CartesianGrid, SphericalGrid, to_cartesian

EPS_PROB = 1e-7


class DomainMismatchError(ValueError):
    """Two occupancy grids do not share a grid and domain."""


@dataclass(frozen=True)
class ShapeLossParams:
    gamma: float = 2.0
    delta: float = 0.2

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")


@dataclass
class OccupancyGrid:
    """Sparse per-voxel values over a domain of voxel indices.

    ``indices`` are unique and lexicographically sorted; ``values`` hold
    either ground-truth bits or probabilities; ``weights`` are the per-voxel
    loss weights (delta on borrowed-only voxels, 1 elsewhere).
    """

    grid: SphericalGrid | CartesianGrid
    indices: np.ndarray  # (K, 3) int32
    values: np.ndarray   # (K,) float64
    weights: np.ndarray  # (K,) float64

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int32).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (len(self.indices) == len(self.values) == len(self.weights)):
            raise ValueError("indices, values and weights must have equal length")

    def __len__(self) -> int:
        return len(self.indices)

    def same_domain(self, other: "OccupancyGrid") -> bool:
        return (
            self.grid == other.grid
            and self.indices.shape == other.indices.shape
            and bool(np.array_equal(self.indices, other.indices))
        )

    def with_values(self, values: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(self.grid, self.indices.copy(), np.asarray(values, dtype=np.float64),
                             self.weights.copy())


def _rasterize_counts(grid, shapes):
    """Dense native / borrowed hit counts of the assembled shapes."""
    native = np.zeros(grid.shape, dtype=np.int32)
    borrowed = np.zeros(grid.shape, dtype=np.int32)
    for shape in shapes:
        for world, acc in ((shape.world_native(), native), (shape.world_borrowed(), borrowed)):
            if len(world) == 0:
                continue
            idx, ok = grid.bin_indices(grid.coordinates(world))
            sel = idx[ok]
            np.add.at(acc, (sel[:, 0], sel[:, 1], sel[:, 2]), 1)
    return native, borrowed


def make_targets(mask, shapes, params: ShapeLossParams = ShapeLossParams()) -> OccupancyGrid:
    """Ground-truth occupancy bits over the R_OC | R_SM domain.

    A domain voxel is positive when any assembled shape drops a point in
    it. Voxels whose shape points are all borrowed get weight delta, every
    other domain voxel weight 1.
    """
    grid = mask.grid
    domain = np.argwhere(mask.domain).astype(np.int32)
    native, borrowed = _rasterize_counts(grid, shapes)

    di, dj, dk = domain[:, 0], domain[:, 1], domain[:, 2]
    n_native = native[di, dj, dk]
    n_borrowed = borrowed[di, dj, dk]
    values = ((n_native + n_borrowed) > 0).astype(np.float64)
    weights = np.where((n_borrowed > 0) & (n_native == 0), params.delta, 1.0)
    return OccupancyGrid(grid, domain, values, weights)


def focal_term(p_pred, label, gamma: float = 2.0):
    """-(1 - p_v)^gamma * log(p_v) with p_v the probability assigned to the
    true label; predictions are clamped away from 0 and 1 first."""
    p = np.clip(np.asarray(p_pred, dtype=np.float64), EPS_PROB, 1 - EPS_PROB)
    lab = np.asarray(label, dtype=np.float64)
    p_v = np.where(lab == 1, p, 1.0 - p)
    return -((1.0 - p_v) ** gamma) * np.log(p_v)


def shape_loss(pred: OccupancyGrid, target: OccupancyGrid, params: ShapeLossParams) -> float:
    """Weighted mean focal term over the shared domain."""
    if not pred.same_domain(target):
        raise DomainMismatchError("prediction and target must share grid and domain")
    if len(target) == 0:
        return 0.0
    terms = focal_term(pred.values, target.values, params.gamma)
    return float((target.weights * terms).sum() / len(target))


def to_cartesian_probability(pred: OccupancyGrid, cgrid: CartesianGrid) -> OccupancyGrid:
    """Transfer spherical probabilities to a Cartesian grid by voxel center.

    Each spherical voxel center lands in at most one Cartesian voxel; a
    Cartesian voxel takes the max over everything mapped into it. Unmapped
    voxels stay absent.
    """
    if len(pred) == 0:
        return OccupancyGrid(cgrid, np.zeros((0, 3), np.int32), np.zeros(0), np.zeros(0))
    centers = to_cartesian(pred.grid.centers_of(pred.indices))
    idx, ok = cgrid.bin_indices(centers)
    if not ok.any():
        return OccupancyGrid(cgrid, np.zeros((0, 3), np.int32), np.zeros(0), np.zeros(0))

    sel = idx[ok]
    vals = pred.values[ok]
    flat = np.ravel_multi_index((sel[:, 0], sel[:, 1], sel[:, 2]), cgrid.shape)
    order = np.argsort(flat, kind="stable")
    flat, vals = flat[order], vals[order]
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], boundaries])
    out_vals = np.maximum.reduceat(vals, starts)
    out_idx = np.stack(np.unravel_index(flat[starts], cgrid.shape), axis=1).astype(np.int32)
    return OccupancyGrid(cgrid, out_idx, out_vals, np.ones(len(out_vals)))


def maxpool_pyramid(prob: OccupancyGrid, levels: int) -> list[OccupancyGrid]:
    """Stride-2 max-pool pyramid: entry 0 is the input, each next level
    pools 2x2x2 blocks of the previous one, empty blocks staying empty."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    out = [prob]
    current = prob
    for _ in range(levels - 1):
        pooled_grid = current.grid.scaled(2)
        if len(current) == 0:
            current = OccupancyGrid(pooled_grid, np.zeros((0, 3), np.int32), np.zeros(0), np.zeros(0))
            out.append(current)
            continue
        idx = current.indices // 2
        flat = np.ravel_multi_index((idx[:, 0], idx[:, 1], idx[:, 2]), pooled_grid.shape)
        order = np.argsort(flat, kind="stable")
        flat, vals = flat[order], current.values[order]
        starts = np.concatenate([[0], np.flatnonzero(np.diff(flat)) + 1])
        pooled_vals = np.maximum.reduceat(vals, starts)
        pooled_idx = np.stack(np.unravel_index(flat[starts], pooled_grid.shape), axis=1).astype(np.int32)
        current = OccupancyGrid(pooled_grid, pooled_idx, pooled_vals, np.ones(len(pooled_vals)))
        out.append(current)
    return out
