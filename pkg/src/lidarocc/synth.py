"""Synthetic scenes and a ray-cast LiDAR simulator with full provenance.

One ray is cast per angular bin of the grid under test, so the simulator's
resolution matches the analysis resolution and binning aliasing drops out
of comparisons. Every beam logs what it hit, what it would have hit farther
along, and whether it was dropped to fake a reflectance signal miss - the
ground truth the occlusion labeling is checked against.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from lidarocc import boxes as boxmod
from lidarocc.geom import PointCloud, SphericalGrid
from lidarocc.occlusion import Cause

BEAM_NO_TARGET = 0
BEAM_HIT = 1
BEAM_DROPPED = 2


@dataclass(frozen=True)
class Prototype:
    """A parametric shape: a union of canonical-frame boxes (y-symmetric).

    Parts are recentered at construction so their union bounds are
    symmetric about the origin; the shape then sits exactly inside a
    nominal-size box placed at the instance center.
    """

    name: str
    cls: str
    parts: tuple  # ((center xyz), (size lwh)) pairs, canonical frame

    def __post_init__(self):
        los = np.min([np.array(c) - 0.5 * np.array(s) for c, s in self.parts], axis=0)
        his = np.max([np.array(c) + 0.5 * np.array(s) for c, s in self.parts], axis=0)
        shift = 0.5 * (his + los)
        parts = tuple(
            (tuple(np.array(c, dtype=float) - shift), tuple(float(v) for v in s))
            for c, s in self.parts
        )
        object.__setattr__(self, "parts", parts)

    @property
    def nominal_size(self) -> tuple[float, float, float]:
        los = np.min([np.array(c) - 0.5 * np.array(s) for c, s in self.parts], axis=0)
        his = np.max([np.array(c) + 0.5 * np.array(s) for c, s in self.parts], axis=0)
        return tuple(his - los)

    def surface_points(self, pitch: float = 0.06, scale=(1.0, 1.0, 1.0)) -> np.ndarray:
        """Dense sampling of every part's faces, scaled per axis."""
        scale = np.asarray(scale, dtype=np.float64)
        out = []
        for center, size in self.parts:
            c = np.array(center) * scale
            half = 0.5 * np.array(size) * scale
            axes = [np.linspace(-half[a], half[a], max(2, int(math.ceil(2 * half[a] / pitch)) + 1))
                    for a in range(3)]
            for fixed_axis in range(3):
                u, v = [a for a in range(3) if a != fixed_axis]
                gu, gv = np.meshgrid(axes[u], axes[v], indexing="ij")
                for side in (-1.0, 1.0):
                    pts = np.empty((gu.size, 3))
                    pts[:, fixed_axis] = side * half[fixed_axis]
                    pts[:, u] = gu.ravel()
                    pts[:, v] = gv.ravel()
                    out.append(pts + c)
        return np.concatenate(out)


def default_prototypes() -> list[Prototype]:
    """Three car-like, two pedestrian-like, two cyclist-like shapes."""
    return [
        Prototype("sedan", "Car", (
            ((0.0, 0.0, -0.35), (4.2, 1.76, 0.80)),
            ((-0.25, 0.0, 0.30), (2.3, 1.60, 0.55)),
        )),
        Prototype("suv", "Car", (
            ((0.0, 0.0, -0.30), (4.4, 1.84, 0.95)),
            ((-0.15, 0.0, 0.35), (3.0, 1.70, 0.70)),
        )),
        Prototype("van", "Car", (
            ((0.0, 0.0, -0.35), (4.6, 1.90, 1.20)),
            ((-0.2, 0.0, 0.60), (3.6, 1.80, 0.70)),
        )),
        Prototype("walker", "Pedestrian", (
            ((0.0, 0.0, 0.0), (0.55, 0.55, 1.70)),
        )),
        Prototype("walker_wide", "Pedestrian", (
            ((0.0, 0.0, -0.15), (0.70, 0.65, 1.40)),
            ((0.0, 0.0, 0.70), (0.35, 0.35, 0.35)),
        )),
        Prototype("bike_rider", "Cyclist", (
            ((0.1, 0.0, -0.45), (1.70, 0.45, 0.80)),
            ((-0.1, 0.0, 0.45), (0.60, 0.50, 1.00)),
        )),
        Prototype("cargo_trike", "Cyclist", (
            ((0.0, 0.0, -0.40), (1.90, 0.80, 0.90)),
            ((-0.3, 0.0, 0.45), (0.55, 0.50, 0.90)),
        )),
    ]


@dataclass(frozen=True)
class OccluderConfig:
    count: int = 1
    thickness: float = 0.15
    width_range: tuple[float, float] = (0.5, 1.2)
    height_range: tuple[float, float] = (0.8, 1.6)
    distance_fraction: tuple[float, float] = (0.35, 0.65)
    tangential_offset: float = 0.4


@dataclass(frozen=True)
class SignalMissConfig:
    probability: float = 0.7
    patches_per_object: int = 1
    patch_radius: int = 2  # Chebyshev radius in range-image pixels


@dataclass
class PlacedInstance:
    prototype: Prototype
    scale: np.ndarray
    box: boxmod.LabeledBox3D
    labeled: bool

    def scaled_parts(self):
        for center, size in self.prototype.parts:
            yield np.array(center) * self.scale, 0.5 * np.array(size) * self.scale


@dataclass
class BeamLog:
    """Per-beam provenance, beams flattened as phi_index * ntheta + theta_index."""

    grid: SphericalGrid
    outcome: np.ndarray        # (B,) uint8
    instance: np.ndarray       # (B,) int32, -1 when nothing on the ray
    t: np.ndarray              # (B,) range of the (possibly dropped) return
    point: np.ndarray          # (B, 3) the return position, NaN when none
    would_counts: np.ndarray   # (B,) number of instances on the ray
    would_ids: np.ndarray      # CSR values: instance ids sorted by t
    would_ts: np.ndarray       # CSR values: entry ranges
    box_instance: np.ndarray   # labeled box row -> instance id

    def beam_of_column(self, j: int, k: int) -> int:
        return j * self.grid.shape[2] + k


@dataclass
class Scene:
    seed: int
    grid: SphericalGrid
    cloud: PointCloud
    boxes: list
    truth: list            # per labeled box: dense canonical surface points
    beam_log: BeamLog
    instances: list


def _beam_directions(grid: SphericalGrid) -> np.ndarray:
    nr, nphi, ntheta = grid.shape
    phi = grid.phi_range[0] + (np.arange(nphi) + 0.5) * grid.voxel_size[1]
    theta = grid.theta_range[0] + (np.arange(ntheta) + 0.5) * grid.voxel_size[2]
    pp, tt = np.meshgrid(phi, theta, indexing="ij")
    ct = np.cos(tt)
    dirs = np.stack([ct * np.cos(pp), ct * np.sin(pp), np.sin(tt)], axis=-1)
    return dirs.reshape(-1, 3)


def _entry_ts(instance: PlacedInstance, dirs: np.ndarray) -> np.ndarray:
    """First-surface range per beam for one instance (inf when missed)."""
    box = instance.box
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    origin_c = rot @ (-np.array([box.x, box.y, box.z]))
    dirs_c = dirs @ rot.T

    best = np.full(len(dirs), np.inf)
    for center, half in instance.scaled_parts():
        lo, hi = center - half, center + half
        t_lo = np.full(dirs_c.shape, -np.inf)
        t_hi = np.full(dirs_c.shape, np.inf)
        nz = dirs_c != 0
        with np.errstate(divide="ignore"):
            a = (lo - origin_c) / np.where(nz, dirs_c, 1.0)
            b = (hi - origin_c) / np.where(nz, dirs_c, 1.0)
        t_lo = np.where(nz, np.minimum(a, b), t_lo)
        t_hi = np.where(nz, np.maximum(a, b), t_hi)
        # beams parallel to an axis miss unless the origin sits inside the slab
        inside = (origin_c >= lo) & (origin_c <= hi)
        blocked = ~nz & ~inside
        t_entry = t_lo.max(axis=1)
        t_exit = t_hi.min(axis=1)
        ok = ~blocked.any(axis=1) & (t_entry <= t_exit) & (t_entry > 1e-9)
        best = np.where(ok, np.minimum(best, t_entry), best)
    return best


def _sample_pose(rng, grid: SphericalGrid, nominal, scale, ground_z: float,
                 yaw_keepout: float = 0.0):
    """A ground-supported pose whose whole box stays inside the grid extent.

    Objects rest on a virtual ground plane below the sensor, the usual
    roof-mounted geometry; top surfaces are then seen from above instead of
    grazed edge-on. With ``yaw_keepout`` (radians) the heading is redrawn
    until no vertical face is within that angle of grazing the sight line.
    """
    l, w, h = (nominal[0] * scale[0], nominal[1] * scale[1], nominal[2] * scale[2])
    bev_half = 0.5 * math.hypot(l, w)
    vert_half = 0.5 * h
    z = ground_z + vert_half
    r_lo, r_hi = grid.r_range
    for _ in range(200):
        rho_c = rng.uniform(r_lo + 6.0, r_lo + 0.75 * (r_hi - r_lo))
        # angular extent is largest at the box's nearest point, not its center
        rho_near = max(rho_c - bev_half, 1.0)
        m_phi = math.atan2(bev_half, rho_near) + grid.voxel_size[1]
        m_th = math.atan2(vert_half, rho_near) + grid.voxel_size[2]
        theta_c = math.atan2(z, rho_c)
        phi_lo, phi_hi = grid.phi_range[0] + m_phi, grid.phi_range[1] - m_phi
        if phi_lo >= phi_hi:
            continue
        if not (grid.theta_range[0] + m_th <= theta_c <= grid.theta_range[1] - m_th):
            continue
        r_far = math.hypot(rho_c + bev_half, abs(z) + vert_half)
        r_near = math.hypot(rho_near, max(abs(z) - vert_half, 0.0))
        if r_far > r_hi - grid.voxel_size[0] or r_near < r_lo + grid.voxel_size[0]:
            continue
        phi_c = rng.uniform(phi_lo, phi_hi)
        yaw = rng.uniform(-math.pi, math.pi)
        if yaw_keepout > 0.0:
            rel = yaw - phi_c
            off_axis = min(
                abs(math.remainder(rel - k * math.pi / 2, math.pi)) for k in range(2)
            )
            if off_axis < yaw_keepout:
                continue
        return rho_c * math.cos(phi_c), rho_c * math.sin(phi_c), z, l, w, h, yaw
    raise ValueError("grid extent too small for a ground-supported object of this size")


def generate_scene(
    seed: int,
    grid: SphericalGrid,
    prototypes=None,
    n_objects: int = 3,
    occluders: OccluderConfig = OccluderConfig(),
    signal_miss: SignalMissConfig = SignalMissConfig(),
    truth_pitch: float = 0.06,
    ground_z: float = -1.7,
    yaw_keepout_deg: float = 0.0,
    max_place_tries: int = 60,
) -> Scene:
    """Place jittered prototypes, cast one beam per angular bin, log everything.

    Raises when objects cannot be placed without overlap; same seed gives
    byte-identical output.
    """
    rng = np.random.default_rng(seed)
    prototypes = list(prototypes) if prototypes is not None else default_prototypes()

    instances: list[PlacedInstance] = []

    def overlaps(candidate) -> bool:
        return any(boxmod.iou_3d(candidate, inst.box) > 0 for inst in instances)

    for _ in range(n_objects):
        proto = prototypes[int(rng.integers(len(prototypes)))]
        for attempt in range(max_place_tries):
            scale = 1.0 + rng.uniform(-0.1, 0.1, size=3)
            x, y, z, l, w, h, yaw = _sample_pose(
                rng, grid, proto.nominal_size, scale, ground_z,
                math.radians(yaw_keepout_deg),
            )
            box = boxmod.LabeledBox3D(x, y, z, l, w, h, yaw, cls=proto.cls)
            if not overlaps(box):
                instances.append(PlacedInstance(proto, scale, box, labeled=True))
                break
        else:
            raise ValueError(f"could not place {n_objects} non-overlapping objects (seed {seed})")

    n_labeled = len(instances)
    for _ in range(occluders.count):
        target = instances[int(rng.integers(n_labeled))]
        for attempt in range(max_place_tries):
            # a ground-standing panel partway along the sight line, nudged
            # sideways so it covers the target only partially
            frac = rng.uniform(*occluders.distance_fraction)
            cx, cy = frac * np.array([target.box.x, target.box.y])
            yaw = math.atan2(cy, cx)
            nudge = rng.uniform(-occluders.tangential_offset, occluders.tangential_offset)
            cx += -math.sin(yaw) * nudge
            cy += math.cos(yaw) * nudge
            size = (
                occluders.thickness,
                rng.uniform(*occluders.width_range),
                rng.uniform(*occluders.height_range),
            )
            cz = ground_z + 0.5 * size[2]
            panel = boxmod.LabeledBox3D(cx, cy, cz, *size, yaw, cls="Occluder")
            if not overlaps(panel):
                proto = Prototype("panel", "Occluder", (((0.0, 0.0, 0.0), size),))
                instances.append(PlacedInstance(proto, np.ones(3), panel, labeled=False))
                break

    dirs = _beam_directions(grid)
    n_beams = len(dirs)
    ts = np.stack([_entry_ts(inst, dirs) for inst in instances]) if instances else np.full((1, n_beams), np.inf)
    if instances:
        first_id = ts.argmin(axis=0).astype(np.int32)
        first_t = ts[first_id, np.arange(n_beams)]
    else:
        first_id = np.full(n_beams, -1, dtype=np.int32)
        first_t = np.full(n_beams, np.inf)
    hit = np.isfinite(first_t)
    first_id[~hit] = -1

    intensities = rng.uniform(0.2, 0.9, n_beams)

    # full per-beam intersection lists, sorted by range (provenance)
    finite = np.isfinite(ts)
    would_counts = finite.sum(axis=0).astype(np.int64)
    would_ids = np.zeros(int(would_counts.sum()), dtype=np.int32)
    would_ts = np.zeros(len(would_ids))
    pos = 0
    for b in range(n_beams):
        ids = np.flatnonzero(finite[:, b])
        if len(ids):
            order = np.argsort(ts[ids, b], kind="stable")
            n = len(ids)
            would_ids[pos:pos + n] = ids[order]
            would_ts[pos:pos + n] = ts[ids[order], b]
            pos += n

    # punch reflectance-drop patches into interior hit pixels of labeled objects
    nphi, ntheta = grid.shape[1], grid.shape[2]
    dropped = np.zeros(n_beams, dtype=bool)
    # erode by the patch plus a one-pixel ring so the hole stays strictly
    # surrounded by returns
    footprint = np.ones((2 * signal_miss.patch_radius + 3,) * 2, dtype=bool)
    for oi in range(n_labeled):
        if rng.random() >= signal_miss.probability:
            continue
        pixels = (first_id == oi).reshape(nphi, ntheta)
        if not pixels.any():
            continue
        for _ in range(signal_miss.patches_per_object):
            # only interior holes: a drop at the silhouette boundary would
            # merge with the open sky and stop being detectable in principle
            interior = ndimage.binary_erosion(pixels, structure=footprint)
            if not interior.any():
                continue
            candidates = np.argwhere(interior)
            cj, ck = candidates[int(rng.integers(len(candidates)))]
            patch = np.zeros((nphi, ntheta), dtype=bool)
            lo_j, hi_j = max(cj - signal_miss.patch_radius, 0), min(cj + signal_miss.patch_radius + 1, nphi)
            lo_k, hi_k = max(ck - signal_miss.patch_radius, 0), min(ck + signal_miss.patch_radius + 1, ntheta)
            patch[lo_j:hi_j, lo_k:hi_k] = True
            dropped |= (patch & pixels).ravel()

    outcome = np.full(n_beams, BEAM_NO_TARGET, dtype=np.uint8)
    outcome[hit] = BEAM_HIT
    outcome[hit & dropped] = BEAM_DROPPED

    points = np.full((n_beams, 3), np.nan)
    points[hit] = dirs[hit] * first_t[hit, None]

    kept = hit & ~dropped
    cloud = PointCloud(np.column_stack([points[kept], intensities[kept]]))

    labeled_boxes = [inst.box for inst in instances[:n_labeled]]
    truth = [
        inst.prototype.surface_points(truth_pitch, inst.scale)
        for inst in instances[:n_labeled]
    ]
    log = BeamLog(
        grid=grid,
        outcome=outcome,
        instance=first_id,
        t=np.where(hit, first_t, np.nan),
        point=points,
        would_counts=would_counts,
        would_ids=would_ids,
        would_ts=would_ts,
        box_instance=np.arange(n_labeled, dtype=np.int32),
    )
    return Scene(seed, grid, cloud, labeled_boxes, truth, log, instances)


def oracle_cause(log: BeamLog, labeled_boxes, grid: SphericalGrid,
                 voxel_margin: bool = True) -> np.ndarray:
    """Per-voxel cause labels derived straight from beam provenance.

    Deliberately plain: for each in-box voxel it inspects that column's
    beam record and nothing else, so it shares no logic with the region
    labeling it validates. The in-box definition (voxel center within half
    a voxel diagonal of the box) is shared with that labeling on purpose.
    """
    nr, nphi, ntheta = grid.shape
    cause = np.zeros(grid.shape, dtype=np.int8)
    taken = np.zeros(grid.shape, dtype=bool)
    centers = grid.voxel_centers_cartesian().reshape(-1, 3)
    margins = grid.voxel_half_diagonals().ravel() if voxel_margin else 0.0

    hit_bins = np.full(nphi * ntheta, -1, dtype=np.int64)
    returned = log.outcome == BEAM_HIT
    if returned.any():
        idx, ok = grid.bin_indices(grid.coordinates(log.point[returned]))
        rows = np.flatnonzero(returned)[ok]
        hit_bins[rows] = idx[ok, 0]

    for bi, box in enumerate(labeled_boxes):
        inst = int(log.box_instance[bi])
        inside = boxmod.points_in_box(centers, box, margin=margins).reshape(grid.shape) & ~taken
        taken |= inside
        for i, j, k in np.argwhere(inside):
            beam = j * ntheta + k
            outc = log.outcome[beam]
            if outc == BEAM_DROPPED:
                cause[i, j, k] = Cause.SIGNAL_MISS
            elif outc == BEAM_HIT:
                hb = hit_bins[beam]
                if hb < 0:
                    continue  # return outside the grid's r extent
                if i == hb:
                    cause[i, j, k] = Cause.OBSERVED
                elif i > hb:
                    if log.instance[beam] == inst:
                        cause[i, j, k] = Cause.SELF_OCCLUSION
                    else:
                        cause[i, j, k] = Cause.EXTERNAL_OCCLUSION
    return cause


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to regenerate a scene set, JSON round-trippable."""

    seed: int = 0
    n_frames: int = 1
    n_objects: int = 3
    classes: tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    r_range: tuple[float, float] = (2.24, 52.0)
    phi_range_deg: tuple[float, float] = (-30.0, 30.0)
    theta_range_deg: tuple[float, float] = (-12.0, 4.0)
    voxel_size: tuple[float, float, float] = (0.32, 0.52, 0.42)
    occluder_count: int = 1
    signal_miss_probability: float = 0.7
    signal_miss_patch_radius: int = 2
    truth_pitch: float = 0.06
    ground_z: float = -1.7
    yaw_keepout_deg: float = 0.0

    def grid(self) -> SphericalGrid:
        return SphericalGrid.from_degrees(
            self.r_range, self.phi_range_deg, self.theta_range_deg, self.voxel_size
        )

    def scene(self, frame: int) -> Scene:
        protos = [p for p in default_prototypes() if p.cls in self.classes]
        if not protos:
            raise ValueError(f"no prototypes for classes {self.classes}")
        return generate_scene(
            seed=self.seed + frame,
            grid=self.grid(),
            prototypes=protos,
            n_objects=self.n_objects,
            occluders=OccluderConfig(count=self.occluder_count),
            signal_miss=SignalMissConfig(
                probability=self.signal_miss_probability,
                patch_radius=self.signal_miss_patch_radius,
            ),
            truth_pitch=self.truth_pitch,
            ground_z=self.ground_z,
            yaw_keepout_deg=self.yaw_keepout_deg,
        )

    def to_json(self) -> str:
        return json.dumps(
            {f: getattr(self, f) for f in self.__dataclass_fields__}, indent=2, sort_keys=True
        )

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        raw = json.loads(text)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown scene spec fields: {sorted(unknown)}")
        for key in ("r_range", "phi_range_deg", "theta_range_deg", "voxel_size", "classes"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)
