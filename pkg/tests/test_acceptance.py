"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
"""

import json
import math
import time

import numpy as np
import pytest

from lidarocc import assembly, boxes as B, dataio, metrics, occlusion, occupancy, synth
from lidarocc.cli import main as cli_main
from lidarocc.geom import CartesianGrid, SphericalGrid, to_cartesian, to_spherical, voxelize

PARAMS = assembly.HeuristicParams()  # the default alpha/beta/match voxel


def kitti_grid():
    return SphericalGrid.from_degrees(
        (2.24, 70.72), (-40.69, 40.69), (-16.60, 4.00), (0.32, 0.52, 0.42)
    )


# corpus used for the per-object recovery criterion: cars seen from a high
# mount at close range with grazing-aligned headings excluded, so every
# surface is either observed or occluded rather than sliding between beams
RECOVERY_SPEC = synth.SceneSpec(
    seed=40, n_objects=2, classes=("Car",),
    r_range=(2.24, 15.0), phi_range_deg=(-40.0, 40.0), theta_range_deg=(-28.0, 0.0),
    voxel_size=(0.16, 0.22, 0.15), ground_z=-2.8, yaw_keepout_deg=12.0,
)


def frame_shapes(scene, grid, bank=None):
    """Masks plus assembled shapes for one simulator frame."""
    vox = voxelize(grid, scene.cloud)
    mask = occlusion.build_region_mask(vox)
    mask = occlusion.classify_cause(mask, scene.boxes, vox)
    if bank is None:
        bank = [
            assembly.mirror_if_applicable(
                assembly.ObjectInstance(("truth", bi), b.cls, b, p), PARAMS.match_voxel_size
            )
            for bi, (b, p) in enumerate(zip(scene.boxes, scene.truth))
        ]
    objects, _ = assembly.extract_objects(scene.cloud, scene.boxes, "obs")
    shapes = []
    for obj in objects:
        tgt = assembly.mirror_if_applicable(obj, PARAMS.match_voxel_size)
        shapes.append(assembly.assemble(tgt, assembly.select_sources(tgt, bank, PARAMS), PARAMS))
    return mask, shapes


def test_criterion_1_coordinate_and_grid_fidelity():
    start = time.monotonic()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-100, 100, size=(1_000_000, 3))
    err = np.abs(to_cartesian(to_spherical(pts)) - pts).max()
    assert err < 1e-9

    grid = kitti_grid()
    assert grid.shape[0] == 214

    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    print(f"\nPASS criterion 1: round-trip max error {err:.2e} < 1e-9 over 1e6 points, "
          f"214 r-bins ({elapsed:.1f} s)")


def test_criterion_2_occlusion_oracle_agreement():
    start = time.monotonic()
    total, agree = 0, 0
    for s in range(100):
        spec = synth.SceneSpec(seed=1000 + s, n_objects=3, signal_miss_probability=1.0)
        grid = spec.grid()
        scene = spec.scene(0)
        vox = voxelize(grid, scene.cloud)
        mask = occlusion.build_region_mask(vox)
        mask = occlusion.classify_cause(mask, scene.boxes, vox)
        oracle = synth.oracle_cause(scene.beam_log, scene.boxes, grid)
        inbox = mask.box_index >= 0
        total += int(inbox.sum())
        agree += int((mask.cause[inbox] == oracle[inbox]).sum())
        # behind-closure on every column
        assert (np.diff(mask.in_r_oc.astype(np.int8), axis=0) >= 0).all()
    rate = agree / total
    assert rate >= 0.99

    elapsed = time.monotonic() - start
    assert elapsed < 120.0
    print(f"\nPASS criterion 2: cause agreement {rate:.4%} >= 99% on {total} in-box voxels "
          f"across 100 scenes, behind-closure 100% ({elapsed:.1f} s)")


def naive_score(a, b, params):
    if len(b.points) == 0:
        return math.inf
    vox = lambda pts: {
        tuple(v) for v in np.floor(np.asarray(pts) / params.match_voxel_size).astype(int)
    }
    extra = vox(b.points) - vox(a.points)
    if not extra:
        return math.inf
    term1 = 0.0
    for p in a.points:
        term1 += float(np.sqrt(((b.points - p) ** 2).sum(axis=1)).min())
    inter = min(a.box.l, b.box.l) * min(a.box.w, b.box.w) * min(a.box.h, b.box.h)
    iou = inter / (a.box.volume + b.box.volume - inter)
    return term1 - params.alpha * iou + params.beta / len(extra)


def test_criterion_3_assembly_soundness():
    start = time.monotonic()
    spec = synth.SceneSpec(seed=7000, n_objects=3, signal_miss_probability=0.5)
    grid = spec.grid()
    worst = 1.0
    n_targets = 0
    for f in range(12):
        scene = spec.scene(f)
        bank = [
            assembly.mirror_if_applicable(
                assembly.ObjectInstance(("truth", bi), b.cls, b, p), PARAMS.match_voxel_size
            )
            for bi, (b, p) in enumerate(zip(scene.boxes, scene.truth))
        ]
        objects, _ = assembly.extract_objects(scene.cloud, scene.boxes, f"f{f}")
        for bi, obj in enumerate(objects):
            tgt = assembly.mirror_if_applicable(obj, PARAMS.match_voxel_size)
            shape = assembly.assemble(tgt, assembly.select_sources(tgt, bank, PARAMS), PARAMS)
            pts = (
                np.concatenate([shape.native, shape.borrowed])
                if len(shape.borrowed) else shape.native
            )
            tv = assembly.match_voxel_set(scene.truth[bi], PARAMS.match_voxel_size)
            cov = np.isin(tv, assembly.match_voxel_set(pts, PARAMS.match_voxel_size)).mean()
            worst = min(worst, float(cov))
            n_targets += 1
    assert worst >= 0.95

    # selection equals a brute-force full sort on a 200-object bank
    rng = np.random.default_rng(3)
    bank = []
    for i in range(200):
        pts = rng.uniform(-1.8, 1.8, size=(int(rng.integers(2, 60)), 3))
        box = B.LabeledBox3D(0, 0, 0, *rng.uniform(1.5, 4.5, 3), 0.0, cls="Car")
        bank.append(assembly.ObjectInstance(("bank", i), "Car", box, pts))
    for t in range(5):
        target = assembly.ObjectInstance(
            ("target", t), "Car", B.LabeledBox3D(0, 0, 0, 4, 2, 1.5, 0.0),
            rng.uniform(-1.5, 1.5, size=(40, 3)),
        )
        picked = [s.oid for s in assembly.select_sources(target, bank, PARAMS)]
        ranked = sorted((naive_score(target, s, PARAMS), s.oid) for s in bank)
        want = [oid for score, oid in ranked if math.isfinite(score)][:3]
        assert picked == want

    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    print(f"\nPASS criterion 3: worst shape coverage {worst:.3f} >= 0.95 over "
          f"{n_targets} targets; top-3 selection equals brute-force sort ({elapsed:.1f} s)")


def test_criterion_4_loss_math_exactness():
    start = time.monotonic()
    rng = np.random.default_rng(4)
    from test_boxes import reference_refine_loss, reference_rpn_loss

    checked = 0
    for _ in range(250):  # rpn batches
        n = int(rng.integers(1, 48))
        scores = rng.uniform(0.01, 0.99, n)
        res = rng.normal(0, 1, size=(n, 7))
        tres = rng.normal(0, 1, size=(n, 7))
        dirs = rng.normal(0, 2, size=(n, 2))
        fg = rng.random(n) < 0.4
        got = B.rpn_loss(scores, res, dirs, tres, fg)
        want = reference_rpn_loss(scores, res, dirs, tres, fg)
        assert got == pytest.approx(want, rel=1e-10)
        checked += 1
    for _ in range(250):  # refine batches
        n = int(rng.integers(1, 48))
        conf = rng.uniform(0.01, 0.99, n)
        res = rng.normal(0, 1, size=(n, 7))
        tres = rng.normal(0, 1, size=(n, 7))
        ious = rng.uniform(0, 1, n)
        got = B.refine_loss(conf, res, tres, ious)
        want = reference_refine_loss(conf, res, tres, ious)
        assert got == pytest.approx(want, rel=1e-10)
        checked += 1
    grid = SphericalGrid.from_degrees((1.0, 9.0), (-30.0, 30.0), (-15.0, 15.0), (0.5, 5.0, 5.0))
    for _ in range(250):  # shape-loss batches
        k = int(rng.integers(1, 120))
        flat = rng.choice(grid.n_voxels, size=k, replace=False)
        domain = np.stack(np.unravel_index(np.sort(flat), grid.shape), axis=1).astype(np.int32)
        pred_vals = rng.uniform(0, 1, k)
        labels = (rng.random(k) < 0.3).astype(float)
        weights = np.where(rng.random(k) < 0.4, 0.2, 1.0)
        target = occupancy.OccupancyGrid(grid, domain, labels, weights)
        pred = occupancy.OccupancyGrid(grid, domain.copy(), pred_vals, np.ones(k))
        got = occupancy.shape_loss(pred, target, occupancy.ShapeLossParams(2.0, 0.2))
        total = 0.0
        for i in range(k):
            p = min(max(pred_vals[i], 1e-7), 1 - 1e-7)
            p_v = p if labels[i] == 1 else 1 - p
            total += weights[i] * (-((1 - p_v) ** 2) * math.log(p_v))
        assert got == pytest.approx(total / k, rel=1e-10)
        checked += 1
    for _ in range(250):  # focal batches, detection and shape variants
        n = int(rng.integers(1, 100))
        p = rng.uniform(0.001, 0.999, n)
        fg = rng.random(n) < 0.5
        got = B.detection_focal(p, fg).sum()
        want = sum(
            -(0.25 if f else 0.75) * (1 - (pi if f else 1 - pi)) ** 2
            * math.log(pi if f else 1 - pi)
            for pi, f in zip(p, fg)
        )
        assert got == pytest.approx(want, rel=1e-10)
        got2 = occupancy.focal_term(p, fg.astype(int), 2.0).sum()
        want2 = sum(
            -((1 - (pi if f else 1 - pi)) ** 2) * math.log(pi if f else 1 - pi)
            for pi, f in zip(p, fg)
        )
        assert got2 == pytest.approx(want2, rel=1e-10)
        checked += 1
    assert checked == 1000

    # closed-form spot values, exact to 1e-12
    assert occupancy.focal_term(0.5, 1, 2.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert B.detection_focal(0.5, True) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert B.confidence_target(0.5) == pytest.approx(0.5, abs=1e-12)
    assert B.total_loss(1, 2, 3) == pytest.approx(5.3, abs=1e-12)
    assert B.angle_loss(np.pi / 6, 0.0) == pytest.approx(0.125, abs=1e-12)

    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 4: 1000 random batches match flat-loop references at 1e-10; "
          f"spot values exact to 1e-12 ({elapsed:.1f} s)")


def test_criterion_5_box_math():
    start = time.monotonic()
    rng = np.random.default_rng(5)

    # encode/decode round trips
    for _ in range(300):
        def rand_box():
            return B.LabeledBox3D(*rng.uniform(-5, 5, 2), rng.uniform(-2, 2),
                                  *rng.uniform(0.5, 5.0, 3), rng.uniform(-np.pi, np.pi))
        gt, ref = rand_box(), rand_box()
        assert np.abs(B.decode_rpn(B.encode_rpn(gt, ref), ref) - gt.to_array()).max() < 1e-9
        assert np.abs(B.decode_refine(B.encode_refine(gt, ref), ref) - gt.to_array()).max() < 1e-9

    # rotated IoU against 1e6-sample Monte-Carlo on 500 pairs
    from test_boxes import mc_iou_3d, random_box

    worst_gap = 0.0
    for i in range(500):
        a, b = random_box(rng, 2.0), random_box(rng, 2.0)
        gap = abs(B.iou_3d(a, b) - mc_iou_3d(a, b, n=1_000_000, seed=i))
        worst_gap = max(worst_gap, gap)
    assert worst_gap < 1e-3

    # threshold behavior on constructed boundary cases
    def offset_pair(cls, iou_target):
        # axis-aligned same-size boxes offset along x: IoU = (1-d)/(1+d) for l=1
        d = (1 - iou_target) / (1 + iou_target)
        gt = B.LabeledBox3D(0, 0, 0, 1, 1, 1, 0.0, cls=cls)
        anchor = B.LabeledBox3D(d, 0, 0, 1, 1, 1, 0.0, cls=cls)
        return gt, anchor

    for cls, fg, bg in (("Car", 0.6, 0.45), ("Pedestrian", 0.5, 0.35), ("Cyclist", 0.5, 0.35)):
        th = B.MatchThresholds.for_class(cls)
        assert (th.fg_iou, th.bg_iou) == (fg, bg)
        for target, want in ((fg + 0.02, B.AnchorLabel.FOREGROUND),
                             (fg - 0.02, B.AnchorLabel.IGNORE),
                             (bg + 0.02, B.AnchorLabel.IGNORE),
                             (bg - 0.02, B.AnchorLabel.BACKGROUND)):
            gt, anchor = offset_pair(cls, target)
            out = B.assign_anchors(anchor.to_array().reshape(1, 7),
                                   gt.to_array().reshape(1, 7), th, claim_best=False)
            assert out.max_iou[0] == pytest.approx(target, abs=1e-9)
            assert out.labels[0] == want, (cls, target)

    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 5: round-trips < 1e-9; IoU vs 1e6-sample MC worst gap "
          f"{worst_gap:.2e} < 1e-3 on 500 pairs; 0.6/0.45 and 0.5/0.35 matching ({elapsed:.1f} s)")


def test_criterion_6_transfer_and_pyramid_fidelity():
    start = time.monotonic()
    rng = np.random.default_rng(6)
    sgrid = kitti_grid()
    cgrid = CartesianGrid((0.0, 70.72), (-46.0, 46.0), (-4.0, 4.0), (0.32, 0.32, 0.32))

    k = 150_000
    flat = rng.choice(sgrid.n_voxels, size=k, replace=False)
    idx = np.stack(np.unravel_index(np.sort(flat), sgrid.shape), axis=1).astype(np.int32)
    vals = rng.uniform(0.01, 1.0, k)
    pred = occupancy.OccupancyGrid(sgrid, idx, vals, np.ones(k))

    out = occupancy.to_cartesian_probability(pred, cgrid)
    centers = to_cartesian(sgrid.centers_of(idx))
    best = {}
    lows, sizes, shape = cgrid.lows, cgrid.sizes, cgrid.shape
    tops = np.maximum(cgrid.highs, lows + np.array(shape) * sizes)
    for row in range(k):
        c = centers[row]
        if (c < lows).any() or (c > tops).any():
            continue
        ci = tuple(min(int((c[a] - lows[a]) // sizes[a]), shape[a] - 1) for a in range(3))
        if vals[row] > best.get(ci, -1.0):
            best[ci] = vals[row]
    got = {tuple(i): v for i, v in zip(out.indices.tolist(), out.values.tolist())}
    assert got == best

    levels = occupancy.maxpool_pyramid(out, 3)
    ref = np.zeros(cgrid.shape)
    ref[out.indices[:, 0], out.indices[:, 1], out.indices[:, 2]] = out.values
    occ_ref = np.zeros(cgrid.shape, dtype=bool)
    occ_ref[out.indices[:, 0], out.indices[:, 1], out.indices[:, 2]] = True
    for lvl in levels[1:]:
        shp = tuple((s + 1) // 2 for s in ref.shape)
        pad = [(0, 2 * shp[a] - ref.shape[a]) for a in range(3)]
        dense = np.pad(ref, pad)
        occ_pad = np.pad(occ_ref, pad)
        blocks = dense.reshape(shp[0], 2, shp[1], 2, shp[2], 2)
        occ_blocks = occ_pad.reshape(shp[0], 2, shp[1], 2, shp[2], 2)
        pooled = blocks.max(axis=(1, 3, 5))
        pooled_occ = occ_blocks.any(axis=(1, 3, 5))
        got_dense = np.zeros(shp)
        got_occ = np.zeros(shp, dtype=bool)
        got_dense[lvl.indices[:, 0], lvl.indices[:, 1], lvl.indices[:, 2]] = lvl.values
        got_occ[lvl.indices[:, 0], lvl.indices[:, 1], lvl.indices[:, 2]] = True
        assert lvl.grid.shape == shp
        assert np.array_equal(got_occ, pooled_occ)
        assert np.array_equal(got_dense, np.where(pooled_occ, pooled, 0.0))
        assert lvl.values.max() == out.values.max()  # pyramid max preservation
        ref, occ_ref = pooled, pooled_occ

    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    print(f"\nPASS criterion 6: spherical->Cartesian max transfer and 3-level pyramid equal "
          f"dense brute force on {k} sparse voxels ({elapsed:.1f} s)")


def test_criterion_7_metrics_definitions():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    grid = SphericalGrid.from_degrees((1.0, 9.0), (-30.0, 30.0), (-15.0, 15.0), (0.5, 5.0, 5.0))

    # 20 crafted micro-grids with hand-computed confusion matrices
    for case in range(20):
        k = int(rng.integers(1, 30))
        flat = rng.choice(grid.n_voxels, size=k, replace=False)
        domain = np.stack(np.unravel_index(np.sort(flat), grid.shape), axis=1).astype(np.int32)
        pred_vals = np.round(rng.uniform(0, 1, k), 2)
        labels = (rng.random(k) < 0.5).astype(float)
        target = occupancy.OccupancyGrid(grid, domain, labels, np.ones(k))
        pred = occupancy.OccupancyGrid(grid, domain.copy(), pred_vals, np.ones(k))
        tau = 0.5
        report = metrics.evaluate_occupancy(pred, target, thresholds=(tau,))
        m = report.at(tau)
        tp = int(((pred_vals > tau) & (labels == 1)).sum())
        fp = int(((pred_vals > tau) & (labels == 0)).sum())
        fn = int((~(pred_vals > tau) & (labels == 1)).sum())
        tn = k - tp - fp - fn
        assert (m.tp, m.fp, m.fn, m.tn) == (tp, fp, fn, tn)
        assert m.accuracy == pytest.approx((tp + tn) / k)

    # object coverage: a box covered exactly while its voxel clears the threshold
    idx = np.array([[4, 6, 3], [10, 2, 1], [13, 9, 4]], dtype=np.int32)
    centers = to_cartesian(grid.centers_of(idx))
    boxes = [B.LabeledBox3D(*c, 0.6, 0.6, 0.6, 0.0) for c in centers]
    target = occupancy.OccupancyGrid(grid, idx, np.ones(3), np.ones(3))
    pred = occupancy.OccupancyGrid(grid, idx.copy(), np.array([0.9, 0.6, 0.2]), np.ones(3))
    report = metrics.evaluate_occupancy(pred, target, boxes, thresholds=(0.1, 0.5, 0.7))
    assert report.at(0.1).object_coverage == pytest.approx(1.0)
    assert report.at(0.5).object_coverage == pytest.approx(2 / 3)
    assert report.at(0.7).object_coverage == pytest.approx(1 / 3)

    # recall and coverage monotone in the threshold on random grids
    for _ in range(10):
        k = 120
        flat = rng.choice(grid.n_voxels, size=k, replace=False)
        domain = np.stack(np.unravel_index(np.sort(flat), grid.shape), axis=1).astype(np.int32)
        target = occupancy.OccupancyGrid(grid, domain, (rng.random(k) < 0.5).astype(float),
                                         np.ones(k))
        pred = occupancy.OccupancyGrid(grid, domain.copy(), rng.uniform(0, 1, k), np.ones(k))
        cs = to_cartesian(grid.centers_of(domain[:15]))
        bxs = [B.LabeledBox3D(*c, 0.7, 0.7, 0.7, 0.0) for c in cs]
        report = metrics.evaluate_occupancy(pred, target, bxs,
                                            thresholds=tuple(np.linspace(0.05, 0.95, 12)))
        recalls = [m.recall for m in report.per_threshold]
        cov = [m.object_coverage for m in report.per_threshold]
        assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(cov, cov[1:]))

    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 7: 20 crafted confusion matrices, coverage definition, and "
          f"threshold monotonicity all verified ({elapsed:.1f} s)")


def test_criterion_8_scenario_generator():
    start = time.monotonic()

    # inclusion chain and NR identity on mixed-class frames
    spec = synth.SceneSpec(seed=8000, n_objects=3, signal_miss_probability=1.0)
    grid = spec.grid()
    for f in range(8):
        scene = spec.scene(f)
        mask, shapes = frame_shapes(scene, grid)
        nr = metrics.recover_scenario(scene.cloud, shapes, mask, "NR")
        assert np.array_equal(nr.cloud.data, scene.cloud.data)
        rows = {}
        for name in ("EO", "EO+SM", "EO+SM+SO"):
            out = metrics.recover_scenario(scene.cloud, shapes, mask, name)
            rows[name] = {tuple(r) for r in out.cloud.data.tolist()}
        assert rows["EO"] <= rows["EO+SM"] <= rows["EO+SM+SO"]

    # full recovery restores >= 95% of each object's true-shape voxels
    g = RECOVERY_SPEC.grid()
    worst, n_objects = 1.0, 0
    for f in range(10):
        scene = RECOVERY_SPEC.scene(f)
        mask, shapes = frame_shapes(scene, g)
        rec = metrics.recover_scenario(scene.cloud, shapes, mask, "EO+SM+SO")
        for box, truth in zip(scene.boxes, scene.truth):
            inb = B.points_in_box(rec.cloud.xyz, box, inflate=1 + 1e-9)
            canon = B.to_canonical(rec.cloud.xyz[inb], box)
            tv = assembly.match_voxel_set(truth, PARAMS.match_voxel_size)
            rv = assembly.match_voxel_set(canon, PARAMS.match_voxel_size)
            worst = min(worst, float(np.isin(tv, rv).mean()))
            n_objects += 1
    assert worst >= 0.95

    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 8: EO within EO+SM within EO+SM+SO on 8 frames; NR identity; "
          f"worst per-object recovery {worst:.3f} >= 0.95 over {n_objects} objects ({elapsed:.1f} s)")


def _run_pipeline(base, workers):
    """The full chain on the golden scene set; returns {relpath: bytes}."""
    base.mkdir(parents=True, exist_ok=True)
    spec_path = base / "scene.json"
    spec_path.write_text(json.dumps({
        "seed": 90, "n_frames": 3, "n_objects": 2,
        "r_range": [2.24, 40.0], "phi_range_deg": [-30.0, 30.0],
        "theta_range_deg": [-14.0, 2.0], "voxel_size": [0.32, 0.52, 0.42],
        "occluder_count": 1, "signal_miss_probability": 1.0,
    }))
    cfg_path = base / "config.json"
    cfg_path.write_text(json.dumps({
        "r_range": [2.24, 40.0], "phi_range_deg": [-30.0, 30.0],
        "theta_range_deg": [-14.0, 2.0], "spherical_voxel_size": [0.32, 0.52, 0.42],
    }))
    w = str(workers)
    data, masks = str(base / "data"), str(base / "masks")
    shapes, targets = str(base / "shapes"), str(base / "targets")
    recovered, report = str(base / "recovered"), str(base / "report")
    steps = [
        ["simulate", "--scene-spec", str(spec_path), "--output", data, "--workers", w],
        ["regions", "--input", data, "--output", masks, "--config", str(cfg_path), "--workers", w],
        ["assemble", "--input", data, "--output", shapes, "--config", str(cfg_path), "--workers", w],
        ["targets", "--input", data, "--output", targets, "--config", str(cfg_path),
         "--shapes", shapes, "--masks", masks, "--workers", w],
        ["evaluate", "--pred", targets, "--target", targets, "--input", data,
         "--output", report, "--config", str(cfg_path)],
        ["recover", "--input", data, "--output", recovered, "--config", str(cfg_path),
         "--scenario", "EO+SM+SO", "--shapes", shapes, "--workers", w],
    ]
    for step in steps:
        assert cli_main(step) == 0, step
    out = {}
    for sub in ("data", "masks", "shapes", "targets", "recovered", "report"):
        for p in sorted((base / sub).rglob("*")):
            if p.is_file():
                out[str(p.relative_to(base))] = p.read_bytes()
    return out


def test_criterion_9_cli_determinism(tmp_path, capsys):
    start = time.monotonic()
    runs = {}
    for tag, workers in (("run1", 1), ("run2", 1), ("run3", 1), ("w4", 4), ("w8", 8)):
        runs[tag] = _run_pipeline(tmp_path / tag, workers)
    capsys.readouterr()  # swallow the per-step summaries
    reference = runs["run1"]
    for tag, files in runs.items():
        assert files.keys() == reference.keys(), tag
        for rel, blob in files.items():
            assert blob == reference[rel], (tag, rel)
    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 9: {len(reference)} pipeline artifacts byte-identical across "
          f"3 runs and worker counts 1/4/8 ({elapsed:.1f} s)")


def test_criterion_10_reader_fuzz(tmp_path):
    start = time.monotonic()
    rng = np.random.default_rng(10)
    calib = dataio.Calibration.identity()
    pfile = tmp_path / "fuzz.bin"
    lfile = tmp_path / "fuzz.txt"
    iterations = 100_000
    survived = 0
    for i in range(iterations):
        blob = rng.bytes(int(rng.integers(0, 96)))
        if i % 2 == 0:
            pfile.write_bytes(blob)
            try:
                dataio.read_points(pfile)
            except dataio.DataIOError:
                pass
        else:
            lfile.write_bytes(blob)
            try:
                dataio.read_labels(lfile, calib)
            except dataio.DataIOError:
                pass
        survived += 1
    assert survived == iterations
    elapsed = time.monotonic() - start
    print(f"\nPASS criterion 10: {iterations} fuzz iterations, typed errors only ({elapsed:.1f} s)")
