"""Oriented 3D box math: IoU, anchor matching, residual encodings, losses.

Boxes are (x, y, z, l, w, h, yaw) with the center at the geometric middle,
l along the heading and yaw about +z. Array-based entry points take (N, 7)
float arrays; the dataclass is the scalar convenience wrapper.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from lidarocc import _kernels

FG_THRESHOLDS = {"Car": 0.6, "Pedestrian": 0.5, "Cyclist": 0.5}
BG_THRESHOLDS = {"Car": 0.45, "Pedestrian": 0.35, "Cyclist": 0.35}


def normalize_yaw(yaw):
    """Wrap angles to (-pi, pi]."""
    out = np.mod(np.asarray(yaw, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


@dataclass(frozen=True)
class LabeledBox3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float
    cls: str = "Car"
    difficulty: int | None = None
    occlusion_level: int | None = None

    def __post_init__(self):
        if min(self.l, self.w, self.h) <= 0:
            raise ValueError(f"box dimensions must be positive, got {(self.l, self.w, self.h)}")
        for name in ("x", "y", "z", "l", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", float(normalize_yaw(self.yaw)))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.yaw])

    @classmethod
    def from_array(klass, arr, **kw) -> "LabeledBox3D":
        x, y, z, l, w, h, yaw = (float(v) for v in arr)
        return klass(x, y, z, l, w, h, yaw, **kw)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h


def boxes_to_array(boxes) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.to_array() for b in boxes])


def to_canonical(xyz: np.ndarray, box) -> np.ndarray:
    """World points into the box frame (origin at center, heading = +x)."""
    arr = np.atleast_2d(np.asarray(box.to_array() if hasattr(box, "to_array") else box))
    c, s = np.cos(arr[0, 6]), np.sin(arr[0, 6])
    d = np.asarray(xyz, dtype=np.float64) - arr[0, :3]
    return np.stack(
        [c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1
    )


def to_world(canon: np.ndarray, box) -> np.ndarray:
    """Inverse of :func:`to_canonical`."""
    arr = np.atleast_2d(np.asarray(box.to_array() if hasattr(box, "to_array") else box))
    c, s = np.cos(arr[0, 6]), np.sin(arr[0, 6])
    canon = np.asarray(canon, dtype=np.float64)
    return (
        np.stack(
            [c * canon[..., 0] - s * canon[..., 1], s * canon[..., 0] + c * canon[..., 1], canon[..., 2]],
            axis=-1,
        )
        + arr[0, :3]
    )


def points_in_box(xyz: np.ndarray, box, inflate: float = 1.0, margin=0.0) -> np.ndarray:
    """Containment mask for world points.

    ``inflate`` scales the extent; ``margin`` (scalar or per-point array)
    additionally pads every face by an absolute distance.
    """
    arr = box.to_array() if hasattr(box, "to_array") else np.asarray(box)
    p = to_canonical(xyz, arr)
    half = 0.5 * inflate * arr[3:6]
    pad = np.asarray(margin, dtype=np.float64)
    if pad.ndim:
        pad = pad[..., None]
    return np.all(np.abs(p) <= half + pad, axis=-1)


def assign_points_to_boxes(xyz: np.ndarray, boxes, inflate: float = 1.0) -> np.ndarray:
    """Index of the first box containing each point, -1 when none."""
    owner = np.full(len(xyz), -1, dtype=np.int32)
    for i, box in enumerate(boxes):
        free = owner == -1
        if not free.any():
            break
        hit = points_in_box(xyz[free], box, inflate=inflate)
        owner[np.flatnonzero(free)[hit]] = i
    return owner


def _bev_rects(arr: np.ndarray) -> np.ndarray:
    """(N, 7) boxes -> (N, 5) BEV rectangles for the clipping kernel."""
    return np.ascontiguousarray(arr[:, [0, 1, 3, 4, 6]])


def _z_overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lo = np.maximum(a[:, 2] - 0.5 * a[:, 5], b[:, 2] - 0.5 * b[:, 5])
    hi = np.minimum(a[:, 2] + 0.5 * a[:, 5], b[:, 2] + 0.5 * b[:, 5])
    return np.maximum(hi - lo, 0.0)


def _z_extent(a: np.ndarray) -> np.ndarray:
    # same float expression as _z_overlap so iou(a, a) is exactly 1
    return (a[:, 2] + 0.5 * a[:, 5]) - (a[:, 2] - 0.5 * a[:, 5])


def iou_bev(a, b) -> float:
    """Rotated-rectangle IoU of the two boxes' BEV footprints."""
    aa = np.atleast_2d(a.to_array() if hasattr(a, "to_array") else a)
    bb = np.atleast_2d(b.to_array() if hasattr(b, "to_array") else b)
    ra, rb = _bev_rects(aa), _bev_rects(bb)
    inter = _kernels.rect_intersection_areas(ra, rb)
    union = _kernels.rect_areas(ra) + _kernels.rect_areas(rb) - inter
    return float((inter / np.maximum(union, 1e-300))[0])


def iou_3d(a, b) -> float:
    """Rotated BEV intersection times vertical overlap, over the union."""
    aa = np.atleast_2d(a.to_array() if hasattr(a, "to_array") else a)
    bb = np.atleast_2d(b.to_array() if hasattr(b, "to_array") else b)
    ra, rb = _bev_rects(aa), _bev_rects(bb)
    inter = _kernels.rect_intersection_areas(ra, rb) * _z_overlap(aa, bb)
    vol_a = _kernels.rect_areas(ra) * _z_extent(aa)
    vol_b = _kernels.rect_areas(rb) * _z_extent(bb)
    union = vol_a + vol_b - inter
    return float((inter / np.maximum(union, 1e-300))[0])


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray, kind: str = "bev") -> np.ndarray:
    """All-pairs IoU of two (N, 7) box arrays; ``kind`` is 'bev' or '3d'."""
    a = np.atleast_2d(np.asarray(boxes_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(boxes_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ra, rb = _bev_rects(a), _bev_rects(b)
    inter = _kernels.rect_intersection_matrix(ra, rb)
    area_a = _kernels.rect_areas(ra)
    area_b = _kernels.rect_areas(rb)
    if kind == "bev":
        union = area_a[:, None] + area_b[None, :] - inter
    elif kind == "3d":
        lo = np.maximum(
            (a[:, 2] - 0.5 * a[:, 5])[:, None], (b[:, 2] - 0.5 * b[:, 5])[None, :]
        )
        hi = np.minimum(
            (a[:, 2] + 0.5 * a[:, 5])[:, None], (b[:, 2] + 0.5 * b[:, 5])[None, :]
        )
        inter = inter * np.maximum(hi - lo, 0.0)
        union = (area_a * _z_extent(a))[:, None] + (area_b * _z_extent(b))[None, :] - inter
    else:
        raise ValueError(f"unknown IoU kind {kind!r}")
    return inter / np.maximum(union, 1e-300)


@dataclass(frozen=True)
class MatchThresholds:
    fg_iou: float
    bg_iou: float

    def __post_init__(self):
        if not 0 <= self.bg_iou < self.fg_iou <= 1:
            raise ValueError(f"need 0 <= bg < fg <= 1, got {self.bg_iou}/{self.fg_iou}")

    @classmethod
    def for_class(cls, name: str) -> "MatchThresholds":
        return cls(FG_THRESHOLDS[name], BG_THRESHOLDS[name])


class AnchorLabel(IntEnum):
    IGNORE = -1
    BACKGROUND = 0
    FOREGROUND = 1


@dataclass
class AnchorAssignment:
    labels: np.ndarray    # (A,) AnchorLabel values
    gt_index: np.ndarray  # (A,) matched gt row for foreground anchors, else -1
    max_iou: np.ndarray   # (A,)


@dataclass(frozen=True)
class AnchorSet:
    """Fixed-size anchors at yaws {0, pi/2} on a BEV lattice."""

    size: tuple[float, float, float]           # (l, w, h) of the class average box
    z_center: float
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    stride: float
    yaws: tuple[float, ...] = (0.0, np.pi / 2)

    def boxes(self) -> np.ndarray:
        xs = np.arange(self.x_range[0] + 0.5 * self.stride, self.x_range[1], self.stride)
        ys = np.arange(self.y_range[0] + 0.5 * self.stride, self.y_range[1], self.stride)
        gx, gy, gyaw = np.meshgrid(xs, ys, np.asarray(self.yaws), indexing="ij")
        n = gx.size
        out = np.empty((n, 7))
        out[:, 0] = gx.ravel()
        out[:, 1] = gy.ravel()
        out[:, 2] = self.z_center
        out[:, 3:6] = self.size
        out[:, 6] = gyaw.ravel()
        return out


def assign_anchors(
    anchors: np.ndarray,
    gt_boxes: np.ndarray,
    thresholds: MatchThresholds,
    iou_kind: str = "bev",
    claim_best: bool = True,
) -> AnchorAssignment:
    """Label anchors foreground/background/ignored by IoU thresholds.

    Foreground above ``fg_iou`` (matched to the argmax gt), background below
    ``bg_iou``, ignored in between. With ``claim_best`` every gt also claims
    its single best-IoU anchor as foreground so no gt goes unmatched; pass
    ``claim_best=False`` for the thresholds-only behavior.
    """
    anchors = np.atleast_2d(anchors)
    gt_boxes = np.atleast_2d(gt_boxes) if len(gt_boxes) else np.zeros((0, 7))
    n = len(anchors)
    labels = np.zeros(n, dtype=np.int8)
    gt_index = np.full(n, -1, dtype=np.int64)
    if len(gt_boxes) == 0:
        return AnchorAssignment(labels, gt_index, np.zeros(n))

    iou = iou_matrix(anchors, gt_boxes, kind=iou_kind)
    best_gt = iou.argmax(axis=1)
    max_iou = iou[np.arange(n), best_gt]

    labels[:] = AnchorLabel.IGNORE
    labels[max_iou < thresholds.bg_iou] = AnchorLabel.BACKGROUND
    fg = max_iou > thresholds.fg_iou
    labels[fg] = AnchorLabel.FOREGROUND
    gt_index[fg] = best_gt[fg]

    if claim_best:
        for g in range(len(gt_boxes)):
            a = int(iou[:, g].argmax())
            if iou[a, g] > 0:
                labels[a] = AnchorLabel.FOREGROUND
                gt_index[a] = g
    return AnchorAssignment(labels, gt_index, max_iou)


@dataclass(frozen=True)
class BoxResidual:
    x_t: float
    y_t: float
    z_t: float
    w_t: float
    l_t: float
    h_t: float
    theta_t: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x_t, self.y_t, self.z_t, self.w_t, self.l_t, self.h_t, self.theta_t])

    @classmethod
    def from_array(cls, arr) -> "BoxResidual":
        return cls(*(float(v) for v in arr))


def _encode(gt: np.ndarray, ref: np.ndarray) -> np.ndarray:
    gt = np.atleast_2d(gt)
    ref = np.atleast_2d(ref)
    d = np.sqrt(ref[:, 3] ** 2 + ref[:, 4] ** 2)
    out = np.empty_like(gt)
    out[:, 0] = (gt[:, 0] - ref[:, 0]) / d
    out[:, 1] = (gt[:, 1] - ref[:, 1]) / d
    out[:, 2] = (gt[:, 2] - ref[:, 2]) / ref[:, 5]
    out[:, 3] = np.log(gt[:, 4] / ref[:, 4])  # w_t
    out[:, 4] = np.log(gt[:, 3] / ref[:, 3])  # l_t
    out[:, 5] = np.log(gt[:, 5] / ref[:, 5])  # h_t
    out[:, 6] = gt[:, 6] - ref[:, 6]
    return out


def _decode(res: np.ndarray, ref: np.ndarray) -> np.ndarray:
    res = np.atleast_2d(res)
    ref = np.atleast_2d(ref)
    d = np.sqrt(ref[:, 3] ** 2 + ref[:, 4] ** 2)
    out = np.empty_like(res)
    out[:, 0] = res[:, 0] * d + ref[:, 0]
    out[:, 1] = res[:, 1] * d + ref[:, 1]
    out[:, 2] = res[:, 2] * ref[:, 5] + ref[:, 2]
    out[:, 4] = np.exp(res[:, 3]) * ref[:, 4]
    out[:, 3] = np.exp(res[:, 4]) * ref[:, 3]
    out[:, 5] = np.exp(res[:, 5]) * ref[:, 5]
    out[:, 6] = res[:, 6] + ref[:, 6]
    return out


def encode_rpn(gt, anchor) -> BoxResidual:
    """Residual of a gt box against an anchor: center offsets normalized by
    the anchor's BEV diagonal (z by its height), log size ratios, raw yaw
    difference."""
    res = _encode(_as_arr(gt), _as_arr(anchor))[0]
    return BoxResidual(res[0], res[1], res[2], res[3], res[4], res[5], res[6])


def decode_rpn(residual, anchor) -> np.ndarray:
    arr = residual.to_array() if hasattr(residual, "to_array") else np.asarray(residual)
    return _decode(arr, _as_arr(anchor))[0]


def encode_refine(gt, proposal) -> BoxResidual:
    """Same encoding with the proposal box as the reference."""
    res = _encode(_as_arr(gt), _as_arr(proposal))[0]
    return BoxResidual(res[0], res[1], res[2], res[3], res[4], res[5], res[6])


def decode_refine(residual, proposal) -> np.ndarray:
    return decode_rpn(residual, proposal)


def encode_batch(gt: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return _encode(gt, ref)


def decode_batch(res: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return _decode(res, ref)


def _as_arr(b) -> np.ndarray:
    return b.to_array() if hasattr(b, "to_array") else np.asarray(b, dtype=np.float64)


def smooth_l1(x, beta: float = 1.0):
    """Huber-style loss with the conventional transition at |x| = 1."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(x < beta, 0.5 * x * x / beta, x - 0.5 * beta)


def angle_loss(theta_p, theta_t):
    """smooth-L1 of sin(theta_p - theta_t); blind to opposite headings,
    which is what the direction classifier is for."""
    return smooth_l1(np.sin(np.asarray(theta_p) - np.asarray(theta_t)))


EPS_PROB = 1e-7


def detection_focal(p_p, foreground, alpha: float = 0.25, gamma: float = 2.0):
    """Class-balanced focal loss for anchor scores.

    ``p_p`` is the predicted foreground probability; alpha weights
    foreground terms, (1 - alpha) background terms.
    """
    p = np.clip(np.asarray(p_p, dtype=np.float64), EPS_PROB, 1 - EPS_PROB)
    fg = np.asarray(foreground, dtype=bool)
    p_t = np.where(fg, p, 1.0 - p)
    a_t = np.where(fg, alpha, 1.0 - alpha)
    return -a_t * (1.0 - p_t) ** gamma * np.log(p_t)


def confidence_target(iou):
    """IoU-weighted confidence target: 0 below 0.25, 1 above 0.75, and
    2*IoU - 0.5 in between (boundaries belong to the outer branches)."""
    iou = np.asarray(iou, dtype=np.float64)
    mid = 2.0 * iou - 0.5
    return np.where(iou > 0.75, 1.0, np.where(iou > 0.25, mid, 0.0))


def _softmax_ce(logits: np.ndarray, target_bin: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(logits)), target_bin.astype(np.int64)]
    return logz - picked


def direction_bin(theta_t) -> np.ndarray:
    """Two heading bins split at a zero angle residual."""
    return (np.asarray(theta_t, dtype=np.float64) >= 0).astype(np.int64)


def rpn_loss(
    pred_scores: np.ndarray,
    pred_residuals: np.ndarray,
    pred_dir_logits: np.ndarray,
    target_residuals: np.ndarray,
    foreground: np.ndarray,
    alpha: float = 0.25,
    gamma: float = 2.0,
    reg_weight: float = 2.0,
    dir_weight: float = 0.2,
) -> float:
    """Mean over sampled anchors of the classification focal term plus,
    on foreground anchors, reg_weight * (angle + smooth-L1 regression)
    and dir_weight * direction cross-entropy."""
    fg = np.asarray(foreground, dtype=bool)
    n = len(fg)
    if n == 0:
        return 0.0
    total = detection_focal(pred_scores, fg, alpha, gamma).sum()
    if fg.any():
        pr = np.atleast_2d(pred_residuals)[fg]
        tr = np.atleast_2d(target_residuals)[fg]
        ang = angle_loss(pr[:, 6], tr[:, 6])
        reg = smooth_l1(pr[:, :6] - tr[:, :6]).sum(axis=1)
        dirs = _softmax_ce(np.atleast_2d(pred_dir_logits)[fg], direction_bin(tr[:, 6]))
        total += (reg_weight * (ang + reg) + dir_weight * dirs).sum()
    return float(total / n)


def refine_loss(
    pred_conf: np.ndarray,
    pred_residuals: np.ndarray,
    target_residuals: np.ndarray,
    iou_with_gt: np.ndarray,
    positive_iou: float = 0.55,
) -> float:
    """Mean over proposals of binary cross-entropy against the IoU-derived
    confidence target plus, where IoU >= positive_iou, angle + regression."""
    iou = np.asarray(iou_with_gt, dtype=np.float64)
    n = len(iou)
    if n == 0:
        return 0.0
    y = confidence_target(iou)
    p = np.clip(np.asarray(pred_conf, dtype=np.float64), EPS_PROB, 1 - EPS_PROB)
    total = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
    pos = iou >= positive_iou
    if pos.any():
        pr = np.atleast_2d(pred_residuals)[pos]
        tr = np.atleast_2d(target_residuals)[pos]
        ang = angle_loss(pr[:, 6], tr[:, 6])
        reg = smooth_l1(pr[:, :6] - tr[:, :6]).sum(axis=1)
        total += (ang + reg).sum()
    return float(total / n)


def total_loss(shape: float, rpn: float, refine: float, shape_weight: float = 0.3) -> float:
    """Weighted sum of the three loss components."""
    return shape_weight * shape + rpn + refine


def roi_local_grid(
    proposal,
    mu: float = 1.05,
    lam: float = 0.25,
    dims: tuple[int, int, int] = (12, 4, 2),
    paper_shift_pairing: bool = True,
) -> np.ndarray:
    """Cell centers of the 27 shifted local grids around a proposal.

    Each grid is heading-aligned, sized (mu*l, mu*w, mu*h), and offset from
    the proposal center (in its local frame) by one of {-lam, 0, +lam} per
    axis. With ``paper_shift_pairing`` the x shift scales with the proposal
    width and the y shift with its length; pass False to pair each axis
    with its own extent. Returns (27, dims[0], dims[1], dims[2], 3) world
    coordinates, shift-major, x-major cells.
    """
    arr = _as_arr(proposal)
    l, w, h = arr[3], arr[4], arr[5]
    ext = np.array([mu * l, mu * w, mu * h])
    cell = ext / np.asarray(dims)
    axes = [(-0.5 * ext[a] + (np.arange(dims[a]) + 0.5) * cell[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    base = np.stack([gx, gy, gz], axis=-1)

    if paper_shift_pairing:
        shift_scale = np.array([w, l, h])
    else:
        shift_scale = np.array([l, w, h])
    offsets = np.array([-lam, 0.0, lam])
    ox, oy, oz = np.meshgrid(offsets, offsets, offsets, indexing="ij")
    shifts = np.stack([ox, oy, oz], axis=-1).reshape(27, 3) * shift_scale

    local = base[None, ...] + shifts[:, None, None, None, :]
    return to_world(local, arr)
