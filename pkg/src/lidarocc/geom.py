"""Points, spherical/Cartesian transforms, and the two voxel grid types.

Binning is half-open per axis ([lo, hi) bins of equal size) with the exact
upper range boundary folded into the last bin, so boundary points are never
lost. Angles are radians everywhere inside the library; degree conversion
happens once, at config load (see :meth:`SphericalGrid.from_degrees`).
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Point",
    "SphericalCoord",
    "PointCloud",
    "SphericalGrid",
    "CartesianGrid",
    "VoxelizedCloud",
    "to_spherical",
    "to_cartesian",
    "voxel_of",
    "voxelize",
]

# Guard against float noise when a range is an exact multiple of the voxel
# size, e.g. (70.72 - 2.24) / 0.32 must give 214 bins, not 215.
_BIN_EPS = 1e-9


@dataclass(frozen=True)
class Point:
    """A single LiDAR return. Intensity is pass-through reflectance."""

    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True)
class SphericalCoord:
    """(range, azimuth, inclination) with phi in (-pi, pi], theta in (-pi/2, pi/2)."""

    r: float
    phi: float
    theta: float


class PointCloud:
    """An ordered set of LiDAR returns backed by an (N, 4) float64 array.

    Row order is acquisition order and is preserved by every operation in
    the library. Columns are (x, y, z, intensity).
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] not in (3, 4):
            raise ValueError(f"point cloud data must be (N, 3) or (N, 4), got {arr.shape}")
        if arr.shape[1] == 3:
            arr = np.column_stack([arr, np.zeros(len(arr))])
        if not np.isfinite(arr).all():
            raise ValueError("point cloud contains non-finite values")
        self.data = arr

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"


def to_spherical(xyz: np.ndarray) -> np.ndarray:
    """Map Cartesian coordinates to (r, phi, theta).

    r = sqrt(x^2 + y^2 + z^2), phi = arctan2(y, x),
    theta = arctan2(z, sqrt(x^2 + y^2)).

    Accepts (..., 3) arrays; phi of exactly -pi is folded to +pi so the
    azimuth stays in (-pi, pi].
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    phi = np.arctan2(y, x)
    phi = np.where(phi == -np.pi, np.pi, phi)
    theta = np.arctan2(z, rho)
    return np.stack([r, phi, theta], axis=-1)


def to_cartesian(rpt: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_spherical`: x = r cos(theta) cos(phi), etc."""
    rpt = np.asarray(rpt, dtype=np.float64)
    r, phi, theta = rpt[..., 0], rpt[..., 1], rpt[..., 2]
    ct = np.cos(theta)
    return np.stack([r * ct * np.cos(phi), r * ct * np.sin(phi), r * np.sin(theta)], axis=-1)


def point_to_spherical(p: Point) -> SphericalCoord:
    r, phi, theta = to_spherical(np.array([p.x, p.y, p.z]))
    return SphericalCoord(float(r), float(phi), float(theta))


def spherical_to_point(s: SphericalCoord, intensity: float = 0.0) -> Point:
    x, y, z = to_cartesian(np.array([s.r, s.phi, s.theta]))
    return Point(float(x), float(y), float(z), intensity)


def _bin_count(lo: float, hi: float, size: float) -> int:
    if size <= 0:
        raise ValueError(f"voxel size must be > 0, got {size}")
    if hi <= lo:
        raise ValueError(f"range must be increasing, got [{lo}, {hi}]")
    return max(1, math.ceil((hi - lo) / size - _BIN_EPS))


class _Grid:
    """Shared binning logic; subclasses define the coordinate mapping."""

    __slots__ = ()

    @property
    def lows(self) -> np.ndarray:
        return np.array([r[0] for r in self.ranges])

    @property
    def highs(self) -> np.ndarray:
        return np.array([r[1] for r in self.ranges])

    @property
    def sizes(self) -> np.ndarray:
        return np.array(self.voxel_size)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(_bin_count(lo, hi, s) for (lo, hi), s in zip(self.ranges, self.voxel_size))

    @property
    def n_voxels(self) -> int:
        a, b, c = self.shape
        return a * b * c

    def bin_indices(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis bin indices and an in-range mask for (N, 3) grid coords.

        Bin counts are the ceiling of range/size, which extends the top edge
        when the division is not exact; coordinates in that extension belong
        to the last bin and count as in range. Out-of-range rows get index
        -1 on every axis.
        """
        coords = np.asarray(coords, dtype=np.float64)
        lows, sizes = self.lows, self.sizes
        tops = np.maximum(self.highs, lows + np.array(self.shape) * sizes)
        in_range = np.all((coords >= lows) & (coords <= tops), axis=-1)
        idx = np.floor((coords - lows) / sizes).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        idx[~in_range] = -1
        return idx, in_range

    def centers_of(self, indices: np.ndarray) -> np.ndarray:
        """Grid-coordinate centers of (N, 3) voxel indices."""
        return self.lows + (np.asarray(indices, dtype=np.float64) + 0.5) * self.sizes


@dataclass(frozen=True)
class SphericalGrid(_Grid):
    """Evenly spaced (r, phi, theta) voxelization. Angles in radians."""

    r_range: tuple[float, float]
    phi_range: tuple[float, float]
    theta_range: tuple[float, float]
    voxel_size: tuple[float, float, float]

    def __post_init__(self):
        _ = self.shape  # validates ranges and sizes

    @classmethod
    def from_degrees(cls, r_range, phi_range_deg, theta_range_deg, voxel_size) -> "SphericalGrid":
        """Build from the (meters, degrees, degrees) form used in config files."""
        dr, dphi_deg, dtheta_deg = voxel_size
        return cls(
            r_range=tuple(r_range),
            phi_range=tuple(math.radians(v) for v in phi_range_deg),
            theta_range=tuple(math.radians(v) for v in theta_range_deg),
            voxel_size=(dr, math.radians(dphi_deg), math.radians(dtheta_deg)),
        )

    @property
    def ranges(self):
        return (self.r_range, self.phi_range, self.theta_range)

    def coordinates(self, xyz: np.ndarray) -> np.ndarray:
        return to_spherical(xyz)

    def voxel_centers_cartesian(self) -> np.ndarray:
        """Cartesian positions of every voxel center, shape (nr, nphi, ntheta, 3)."""
        nr, nphi, ntheta = self.shape
        r = self.r_range[0] + (np.arange(nr) + 0.5) * self.voxel_size[0]
        phi = self.phi_range[0] + (np.arange(nphi) + 0.5) * self.voxel_size[1]
        theta = self.theta_range[0] + (np.arange(ntheta) + 0.5) * self.voxel_size[2]
        rr, pp, tt = np.meshgrid(r, phi, theta, indexing="ij")
        return to_cartesian(np.stack([rr, pp, tt], axis=-1))

    def voxel_half_diagonals(self) -> np.ndarray:
        """Half the world-space diagonal of each voxel, shape (nr, nphi, ntheta).

        Grows with range because the angular extents do; used as the margin
        when deciding whether a voxel overlaps a box.
        """
        nr, nphi, ntheta = self.shape
        r = self.r_range[0] + (np.arange(nr) + 1.0) * self.voxel_size[0]  # far edge
        dr, dphi, dtheta = self.voxel_size
        diag = 0.5 * np.sqrt(dr ** 2 + (r * dphi) ** 2 + (r * dtheta) ** 2)
        return np.broadcast_to(diag[:, None, None], (nr, nphi, ntheta))


@dataclass(frozen=True)
class CartesianGrid(_Grid):
    """Evenly spaced (x, y, z) voxelization, meters on every axis."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    voxel_size: tuple[float, float, float]

    def __post_init__(self):
        _ = self.shape

    @property
    def ranges(self):
        return (self.x_range, self.y_range, self.z_range)

    def coordinates(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64)

    def scaled(self, factor: int) -> "CartesianGrid":
        """Same extents with the voxel size multiplied by ``factor``."""
        return CartesianGrid(
            self.x_range, self.y_range, self.z_range,
            tuple(s * factor for s in self.voxel_size),
        )


def voxel_of(grid, coord) -> tuple[int, int, int] | None:
    """Voxel index of one grid-frame coordinate, or None when out of range."""
    idx, ok = grid.bin_indices(np.asarray(coord, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return None
    return tuple(int(v) for v in idx[0])


class VoxelizedCloud:
    """A point cloud binned onto a grid, with per-voxel means.

    ``indices`` rows are unique occupied voxels in lexicographic order;
    ``point_voxel`` maps each cloud row to its row in ``indices`` (-1 for
    out-of-range points, which stay in the cloud but are excluded from the
    grid).
    """

    __slots__ = (
        "grid", "cloud", "indices", "counts", "means",
        "point_voxel", "n_out_of_range", "_order", "_starts", "_occupancy",
    )

    def __init__(self, grid, cloud, indices, counts, means, point_voxel, n_out_of_range, order, starts):
        self.grid = grid
        self.cloud = cloud
        self.indices = indices
        self.counts = counts
        self.means = means
        self.point_voxel = point_voxel
        self.n_out_of_range = n_out_of_range
        self._order = order
        self._starts = starts
        self._occupancy = None

    def __len__(self) -> int:
        return self.indices.shape[0]

    def point_rows(self, k: int) -> np.ndarray:
        """Cloud row numbers of the points inside occupied voxel ``k``."""
        return self._order[self._starts[k]:self._starts[k + 1]]

    def occupancy(self) -> np.ndarray:
        """Dense occupied mask over the full grid lattice (cached)."""
        if self._occupancy is None:
            occ = np.zeros(self.grid.shape, dtype=bool)
            if len(self):
                occ[self.indices[:, 0], self.indices[:, 1], self.indices[:, 2]] = True
            self._occupancy = occ
        return self._occupancy


def voxelize(grid, cloud: PointCloud) -> VoxelizedCloud:
    """Bin every in-range point into its voxel; report per-voxel means.

    Means are of the Cartesian point properties (x, y, z, intensity)
    regardless of the grid kind.
    """
    coords = grid.coordinates(cloud.xyz)
    idx, in_range = grid.bin_indices(coords)
    n_out = int((~in_range).sum())

    shape = grid.shape
    flat = np.full(len(cloud), -1, dtype=np.int64)
    if in_range.any():
        sel = idx[in_range]
        flat[in_range] = np.ravel_multi_index((sel[:, 0], sel[:, 1], sel[:, 2]), shape)

    valid_flat = flat[in_range]
    uniq, inverse, counts = np.unique(valid_flat, return_inverse=True, return_counts=True)
    indices = np.stack(np.unravel_index(uniq, shape), axis=1).astype(np.int32)

    means = np.zeros((len(uniq), 4))
    for c in range(4):
        means[:, c] = np.bincount(inverse, weights=cloud.data[in_range, c], minlength=len(uniq))
    means /= np.maximum(counts, 1)[:, None]

    point_voxel = np.full(len(cloud), -1, dtype=np.int64)
    point_voxel[in_range] = inverse

    in_rows = np.flatnonzero(in_range)
    order = in_rows[np.argsort(inverse, kind="stable")]
    starts = np.zeros(len(uniq) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])

    return VoxelizedCloud(grid, cloud, indices, counts.astype(np.int64), means,
                          point_voxel, n_out, order, starts)
