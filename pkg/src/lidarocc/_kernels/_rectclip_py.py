"""Pure-Python twin of the compiled rectangle-clipping kernel.

Same algorithm and operation order as the extension; used automatically
when the build skipped the extension.
"""

import math

import numpy as np


def _corners(cx, cy, l, w, yaw):
    hl, hw = 0.5 * l, 0.5 * w
    c, s = math.cos(yaw), math.sin(yaw)
    return [
        (cx + c * hl - s * -hw, cy + s * hl + c * -hw),
        (cx + c * hl - s * hw, cy + s * hl + c * hw),
        (cx - c * hl - s * hw, cy - s * hl + c * hw),
        (cx - c * hl - s * -hw, cy - s * hl + c * -hw),
    ]


def _shoelace(poly):
    acc = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def _pair_area(ra, rb):
    subject = _corners(*ra)
    clip = _corners(*rb)
    for i in range(4):
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % 4]
        ex, ey = bx - ax, by - ay
        out = []
        n = len(subject)
        for j in range(n):
            px, py = subject[j]
            qx, qy = subject[(j + 1) % n]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif sp >= 0.0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
        subject = out
        if not subject:
            return 0.0
    return _shoelace(subject)


def rect_areas(rects):
    rects = np.asarray(rects, dtype=np.float64)
    return np.array([_shoelace(_corners(*row)) for row in rects])


def rect_intersection_areas(rects_a, rects_b):
    a = np.asarray(rects_a, dtype=np.float64)
    b = np.asarray(rects_b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError("rect arrays must have equal length")
    return np.array([_pair_area(ra, rb) for ra, rb in zip(a, b)])


def rect_intersection_matrix(rects_a, rects_b):
    a = np.asarray(rects_a, dtype=np.float64)
    b = np.asarray(rects_b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for i, ra in enumerate(a):
        for j, rb in enumerate(b):
            out[i, j] = _pair_area(ra, rb)
    return out
