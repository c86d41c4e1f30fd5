"""KITTI-format ingestion, PLY export, and the library's binary file formats.

Readers are total: any malformed input raises a typed ``DataIOError``
subclass, never an arbitrary exception. Binary formats are versioned and
byte-stable (sorted records, fixed little-endian layout) so golden-file
comparisons stay meaningful. See docs/formats.md for the layouts.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lidarocc import boxes as boxmod
from lidarocc.geom import CartesianGrid, PointCloud, SphericalGrid
from lidarocc.occlusion import RegionMask
from lidarocc.occupancy import OccupancyGrid

POINT_RECORD_BYTES = 16  # four little-endian float32 per return

_MAGIC_MASK = b"LOCMASK1"
_MAGIC_OCC = b"LOCGRID1"
_MAGIC_BANK = b"LOCBANK1"
_MAGIC_SHAPES = b"LOCSHPS1"


class DataIOError(Exception):
    """Base for every reader/writer failure."""


class PointFormatError(DataIOError):
    pass


class LabelFormatError(DataIOError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        where = f" (line {line_number})" if line_number is not None else ""
        super().__init__(f"{message}{where}")


class CalibFormatError(DataIOError):
    pass


class FileFormatError(DataIOError):
    """A binary artifact file has the wrong magic, version, or layout."""


# --- KITTI velodyne ---------------------------------------------------------

def read_points(path) -> PointCloud:
    """Read a velodyne .bin: little-endian float32 (x, y, z, intensity) rows."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise PointFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) % POINT_RECORD_BYTES:
        raise PointFormatError(
            f"{path}: length {len(raw)} is not a multiple of {POINT_RECORD_BYTES}"
        )
    with np.errstate(invalid="ignore"):  # signaling NaNs in garbage bytes
        data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if not np.isfinite(data).all():
        raise PointFormatError(f"{path}: non-finite point values")
    return PointCloud(data)


def write_points(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(cloud.data.astype("<f4").tobytes())


# --- KITTI calib + labels ---------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """The two matrices needed to move camera-frame labels to the LiDAR frame."""

    velo_to_cam: np.ndarray  # (4, 4)
    rect: np.ndarray         # (4, 4)

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.eye(4), np.eye(4))

    def cam_to_lidar(self, xyz_cam: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(xyz_cam)
        hom = np.column_stack([pts, np.ones(len(pts))])
        inv = np.linalg.inv(self.velo_to_cam) @ np.linalg.inv(self.rect)
        return (hom @ inv.T)[:, :3]

    def lidar_to_cam(self, xyz_lidar: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(xyz_lidar)
        hom = np.column_stack([pts, np.ones(len(pts))])
        fwd = self.rect @ self.velo_to_cam
        return (hom @ fwd.T)[:, :3]


def read_calib(path) -> Calibration:
    """Parse the KITTI calib .txt (needs R0_rect and Tr_velo_to_cam rows)."""
    try:
        text = Path(path).read_text(errors="replace")
    except OSError as exc:
        raise CalibFormatError(f"cannot read {path}: {exc}") from exc
    fields = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            fields[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError:
            continue
    try:
        r0 = fields["R0_rect"].reshape(3, 3)
        v2c = fields["Tr_velo_to_cam"].reshape(3, 4)
    except (KeyError, ValueError) as exc:
        raise CalibFormatError(f"{path}: missing or malformed R0_rect/Tr_velo_to_cam") from exc
    rect = np.eye(4)
    rect[:3, :3] = r0
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :4] = v2c
    return Calibration(velo_to_cam, rect)


_LABEL_FIELDS = 15  # type + 14 numeric columns (an optional score may follow)


def read_labels(path, calib: Calibration) -> list[boxmod.LabeledBox3D]:
    """Parse a KITTI label_2 .txt into LiDAR-frame boxes.

    DontCare rows are skipped. KITTI stores (h, w, l), a camera-frame
    bottom-center position, and rotation_y; boxes come out geometric-center
    with yaw about LiDAR +z and the occlusion level retained.
    """
    try:
        text = Path(path).read_text(errors="replace")
    except OSError as exc:
        raise LabelFormatError(f"cannot read {path}: {exc}") from exc

    out = []
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "DontCare":
            continue
        if len(parts) < _LABEL_FIELDS:
            raise LabelFormatError(f"{path}: expected {_LABEL_FIELDS} fields, got {len(parts)}", ln)
        try:
            vals = [float(v) for v in parts[1:_LABEL_FIELDS]]
        except ValueError as exc:
            raise LabelFormatError(f"{path}: non-numeric field ({exc})", ln) from exc
        if not all(np.isfinite(vals)):
            raise LabelFormatError(f"{path}: non-finite field", ln)
        truncation, occ_level, alpha = vals[0], vals[1], vals[2]
        h, w, l = vals[7], vals[8], vals[9]
        if min(h, w, l) <= 0:
            raise LabelFormatError(f"{path}: non-positive box dimension", ln)
        x, y, z = vals[10], vals[11], vals[12]
        rot_y = vals[13]

        # bottom center -> geometric center while still in camera frame (y is down)
        center_cam = np.array([x, y - h / 2.0, z])
        cx, cy, cz = calib.cam_to_lidar(center_cam)[0]
        yaw = -rot_y - np.pi / 2.0
        out.append(
            boxmod.LabeledBox3D(
                cx, cy, cz, l, w, h, yaw,
                cls=parts[0],
                occlusion_level=int(occ_level),
            )
        )
    return out


def synthetic_calibration() -> Calibration:
    """The standard LiDAR-to-camera axis permutation with no offset.

    Used when writing simulator frames so the label path exercises the same
    camera-frame conventions as real data.
    """
    velo_to_cam = np.array([
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return Calibration(velo_to_cam, np.eye(4))


def write_calib(path, calib: Calibration) -> None:
    dummy = " ".join(["0"] * 12)
    lines = [
        f"P0: {dummy}",
        f"P1: {dummy}",
        f"P2: {dummy}",
        f"P3: {dummy}",
        "R0_rect: " + " ".join(repr(float(v)) for v in calib.rect[:3, :3].ravel()),
        "Tr_velo_to_cam: " + " ".join(repr(float(v)) for v in calib.velo_to_cam[:3, :4].ravel()),
        "Tr_imu_to_velo: " + dummy,
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_labels(path, boxes, calib: Calibration) -> None:
    """Inverse of :func:`read_labels`: geometric center back to the KITTI
    camera-frame bottom-center row layout."""
    lines = []
    for box in boxes:
        center_cam = calib.lidar_to_cam(np.array([box.x, box.y, box.z]))[0]
        bottom = center_cam + np.array([0.0, box.h / 2.0, 0.0])
        rot_y = -box.yaw - np.pi / 2.0
        occ = box.occlusion_level if box.occlusion_level is not None else 0
        fields = [box.cls, "0.00", str(int(occ)), "0.00", "0", "0", "0", "0",
                  repr(float(box.h)), repr(float(box.w)), repr(float(box.l)),
                  repr(float(bottom[0])), repr(float(bottom[1])), repr(float(bottom[2])),
                  repr(float(rot_y))]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def write_kitti_frame(root, frame_id: str, cloud: PointCloud, boxes) -> None:
    """Write one frame in KITTI layout with the synthetic calibration."""
    root = Path(root)
    for sub in ("velodyne", "label_2", "calib"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    calib = synthetic_calibration()
    write_points(root / "velodyne" / f"{frame_id}.bin", cloud)
    write_labels(root / "label_2" / f"{frame_id}.txt", boxes, calib)
    write_calib(root / "calib" / f"{frame_id}.txt", calib)


@dataclass
class FrameBundle:
    frame_id: str
    cloud: PointCloud
    boxes: list
    calib: Calibration


def load_frame(root, frame_id: str) -> FrameBundle:
    """Read one KITTI-layout frame: velodyne/, label_2/, calib/."""
    root = Path(root)
    calib = read_calib(root / "calib" / f"{frame_id}.txt")
    cloud = read_points(root / "velodyne" / f"{frame_id}.bin")
    boxes = read_labels(root / "label_2" / f"{frame_id}.txt", calib)
    return FrameBundle(frame_id, cloud, boxes, calib)


# --- PLY export --------------------------------------------------------------

CAUSE_COLORS = {
    0: (120, 120, 120),   # unlabeled
    1: (255, 255, 255),   # observed
    2: (230, 60, 60),     # external occlusion
    3: (60, 90, 230),     # signal miss
    4: (60, 200, 90),     # self occlusion
}


def export_ply(path, xyz: np.ndarray, colors: np.ndarray | None = None) -> None:
    """Write an ascii PLY; ``colors`` is an optional (N, 3) uint8 array."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(xyz)}",
             "property double x", "property double y", "property double z"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        if len(colors) != len(xyz):
            raise ValueError("colors must match points")
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i in range(len(xyz)):
        row = " ".join(repr(float(v)) for v in xyz[i])
        if colors is not None:
            row += " " + " ".join(str(int(v)) for v in colors[i])
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def probability_grays(values: np.ndarray) -> np.ndarray:
    """Grayscale colors for probabilities: higher value, more opaque white."""
    g = np.clip(np.asarray(values) * 255.0, 0, 255).astype(np.uint8)
    return np.stack([g, g, g], axis=1)


# --- binary artifact formats --------------------------------------------------

def _grid_header(grid) -> bytes:
    kind = 0 if isinstance(grid, SphericalGrid) else 1
    lows, highs, sizes = grid.lows, grid.highs, grid.sizes
    return struct.pack(
        "<B9d3i", kind, *lows.tolist(), *highs.tolist(), *sizes.tolist(), *grid.shape
    )


_GRID_HEADER_BYTES = struct.calcsize("<B9d3i")


def _parse_grid_header(raw: bytes, offset: int):
    vals = struct.unpack_from("<B9d3i", raw, offset)
    kind = vals[0]
    lows, highs, sizes = vals[1:4], vals[4:7], vals[7:10]
    shape = vals[10:13]
    ranges = tuple((lo, hi) for lo, hi in zip(lows, highs))
    grid = (SphericalGrid if kind == 0 else CartesianGrid)(*ranges, tuple(sizes))
    if grid.shape != tuple(shape):
        raise FileFormatError(f"grid shape mismatch: header says {shape}, derived {grid.shape}")
    return grid, offset + _GRID_HEADER_BYTES


def save_region_mask(path, mask: RegionMask) -> None:
    shape = mask.grid.shape
    parts = [
        _MAGIC_MASK,
        _grid_header(mask.grid),
        np.packbits(mask.occupied.ravel()).tobytes(),
        np.packbits(mask.in_r_oc.ravel()).tobytes(),
        np.packbits(mask.in_r_sm.ravel()).tobytes(),
        mask.cause.astype("<i1").tobytes(),
        mask.box_index.astype("<i4").tobytes(),
        struct.pack("<i", len(mask.empty_boxes)),
        np.asarray(mask.empty_boxes, dtype="<i4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_region_mask(path) -> RegionMask:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC_MASK:
        raise FileFormatError(f"{path}: not a region mask file")
    grid, off = _parse_grid_header(raw, 8)
    n = grid.n_voxels
    packed = (n + 7) // 8

    def bits(off):
        arr = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, count=packed, offset=off))[:n]
        return arr.astype(bool).reshape(grid.shape), off + packed

    occupied, off = bits(off)
    roc, off = bits(off)
    rsm, off = bits(off)
    cause = np.frombuffer(raw, dtype="<i1", count=n, offset=off).reshape(grid.shape).copy()
    off += n
    box_index = np.frombuffer(raw, dtype="<i4", count=n, offset=off).reshape(grid.shape).copy()
    off += 4 * n
    (n_empty,) = struct.unpack_from("<i", raw, off)
    off += 4
    empty = np.frombuffer(raw, dtype="<i4", count=n_empty, offset=off).tolist()
    return RegionMask(grid, occupied, roc, rsm, cause.astype(np.int8),
                      box_index.astype(np.int32), empty)


def save_occupancy(path, grid: OccupancyGrid) -> None:
    """Sorted (index, value, weight, domain-bit) records after a grid header."""
    k = len(grid)
    parts = [
        _MAGIC_OCC,
        _grid_header(grid.grid),
        struct.pack("<q", k),
        grid.indices.astype("<i4").tobytes(),
        grid.values.astype("<f8").tobytes(),
        grid.weights.astype("<f8").tobytes(),
        np.ones(k, dtype="<u1").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_occupancy(path) -> OccupancyGrid:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC_OCC:
        raise FileFormatError(f"{path}: not an occupancy grid file")
    grid, off = _parse_grid_header(raw, 8)
    (k,) = struct.unpack_from("<q", raw, off)
    off += 8
    indices = np.frombuffer(raw, dtype="<i4", count=3 * k, offset=off).reshape(k, 3).copy()
    off += 12 * k
    values = np.frombuffer(raw, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    weights = np.frombuffer(raw, dtype="<f8", count=k, offset=off).copy()
    return OccupancyGrid(grid, indices, values, weights)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _unpack_str(raw: bytes, off: int):
    (n,) = struct.unpack_from("<H", raw, off)
    off += 2
    return raw[off:off + n].decode("utf-8"), off + n


def _pack_object(oid, cls, box, points, mirrored) -> bytes:
    frame_id, box_id = oid
    pts = np.asarray(points, dtype="<f8").reshape(-1, 3)
    return b"".join([
        _pack_str(str(frame_id)),
        struct.pack("<i", int(box_id)),
        _pack_str(cls),
        struct.pack("<7d", *box.to_array().tolist()),
        struct.pack("<Bq", int(mirrored), len(pts)),
        pts.tobytes(),
    ])


def _unpack_object(raw: bytes, off: int):
    frame_id, off = _unpack_str(raw, off)
    (box_id,) = struct.unpack_from("<i", raw, off)
    off += 4
    cls, off = _unpack_str(raw, off)
    arr = struct.unpack_from("<7d", raw, off)
    off += 56
    mirrored, n = struct.unpack_from("<Bq", raw, off)
    off += struct.calcsize("<Bq")
    pts = np.frombuffer(raw, dtype="<f8", count=3 * n, offset=off).reshape(n, 3).copy()
    off += 24 * n
    box = boxmod.LabeledBox3D.from_array(arr, cls=cls)
    return (frame_id, box_id), cls, box, pts, bool(mirrored), off


def save_bank(path, objects) -> None:
    """Canonical-frame object archive keyed by (frame id, box id)."""
    from lidarocc.assembly import ObjectInstance  # local to avoid cycle at import

    parts = [_MAGIC_BANK, struct.pack("<q", len(objects))]
    for obj in sorted(objects, key=lambda o: (str(o.oid[0]), o.oid[1])):
        assert isinstance(obj, ObjectInstance)
        parts.append(_pack_object(obj.oid, obj.cls, obj.box, obj.points, obj.mirrored))
    Path(path).write_bytes(b"".join(parts))


def load_bank(path):
    from lidarocc.assembly import ObjectInstance

    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC_BANK:
        raise FileFormatError(f"{path}: not an object bank file")
    (count,) = struct.unpack_from("<q", raw, 8)
    off = 16
    out = []
    for _ in range(count):
        oid, cls, box, pts, mirrored, off = _unpack_object(raw, off)
        out.append(ObjectInstance(oid, cls, box, pts, mirrored))
    return out


def save_assembled(path, shapes) -> None:
    from lidarocc.assembly import AssembledShape

    parts = [_MAGIC_SHAPES, struct.pack("<q", len(shapes))]
    for shp in shapes:
        assert isinstance(shp, AssembledShape)
        frame_id, box_id = shp.target_oid
        parts.append(_pack_str(str(frame_id)))
        parts.append(struct.pack("<i", int(box_id)))
        parts.append(_pack_str(shp.cls))
        parts.append(struct.pack("<7d", *shp.box.to_array().tolist()))
        native = np.asarray(shp.native, dtype="<f8").reshape(-1, 3)
        borrowed = np.asarray(shp.borrowed, dtype="<f8").reshape(-1, 3)
        parts.append(struct.pack("<qq", len(native), len(borrowed)))
        parts.append(native.tobytes())
        parts.append(borrowed.tobytes())
        parts.append(shp.borrowed_source.astype("<i4").tobytes())
        parts.append(struct.pack("<i", len(shp.source_oids)))
        for frame, box in shp.source_oids:
            parts.append(_pack_str(str(frame)))
            parts.append(struct.pack("<i", int(box)))
    Path(path).write_bytes(b"".join(parts))


def load_assembled(path):
    from lidarocc.assembly import AssembledShape

    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC_SHAPES:
        raise FileFormatError(f"{path}: not an assembled-shapes file")
    (count,) = struct.unpack_from("<q", raw, 8)
    off = 16
    out = []
    for _ in range(count):
        frame_id, off = _unpack_str(raw, off)
        (box_id,) = struct.unpack_from("<i", raw, off)
        off += 4
        cls, off = _unpack_str(raw, off)
        arr = struct.unpack_from("<7d", raw, off)
        off += 56
        n_native, n_borrowed = struct.unpack_from("<qq", raw, off)
        off += 16
        native = np.frombuffer(raw, dtype="<f8", count=3 * n_native, offset=off).reshape(n_native, 3).copy()
        off += 24 * n_native
        borrowed = np.frombuffer(raw, dtype="<f8", count=3 * n_borrowed, offset=off).reshape(n_borrowed, 3).copy()
        off += 24 * n_borrowed
        src = np.frombuffer(raw, dtype="<i4", count=n_borrowed, offset=off).copy()
        off += 4 * n_borrowed
        (n_src,) = struct.unpack_from("<i", raw, off)
        off += 4
        oids = []
        for _ in range(n_src):
            f, off = _unpack_str(raw, off)
            (b,) = struct.unpack_from("<i", raw, off)
            off += 4
            oids.append((f, b))
        box = boxmod.LabeledBox3D.from_array(arr, cls=cls)
        out.append(AssembledShape((frame_id, box_id), cls, box, native, borrowed, src, oids))
    return out
