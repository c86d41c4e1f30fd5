"""Batch pipeline driver: voxelize, regions, assemble, targets, evaluate,
recover, simulate, export.

Each subcommand maps a set of frames through pure per-frame work, so output
bytes depend only on inputs and config, never on worker count or timing.
The run summary (with timings) goes to stdout; artifact files stay
timing-free.
"""

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from lidarocc import assembly, dataio, metrics, occlusion, occupancy, synth
from lidarocc.config import ConfigError, PipelineConfig
from lidarocc.geom import voxelize

SUPPORTED_CLASSES = ("Car", "Pedestrian", "Cyclist")

_VOXEL_DTYPE = np.dtype([
    ("i", "<i4"), ("j", "<i4"), ("k", "<i4"), ("count", "<i8"),
    ("mean_x", "<f8"), ("mean_y", "<f8"), ("mean_z", "<f8"), ("mean_intensity", "<f8"),
])


def _discover_frames(input_dir: Path) -> list[str]:
    velo = input_dir / "velodyne"
    if not velo.is_dir():
        raise FileNotFoundError(f"no velodyne/ directory under {input_dir}")
    return sorted(p.stem for p in velo.glob("*.bin"))


def _select_frames(args) -> list[str]:
    if args.frames:
        return sorted(set(args.frames.split(",")))
    return _discover_frames(Path(args.input))


def _frame_mask(bundle, cfg: PipelineConfig):
    grid = cfg.spherical_grid()
    vox = voxelize(grid, bundle.cloud)
    mask = occlusion.build_region_mask(vox, cfg.max_sm_region_pixels, cfg.sm_extent)
    labeled = [b for b in bundle.boxes if b.cls in SUPPORTED_CLASSES]
    return occlusion.classify_cause(mask, labeled, vox), vox, labeled


# --- per-frame workers (module level so process pools can pickle them) -------

def _work_voxelize(task):
    frame_id, input_dir, output_dir, cfg = task
    bundle = dataio.load_frame(input_dir, frame_id)
    vox = voxelize(cfg.spherical_grid(), bundle.cloud)
    rec = np.zeros(len(vox.indices), dtype=_VOXEL_DTYPE)
    rec["i"], rec["j"], rec["k"] = vox.indices.T
    rec["count"] = vox.counts
    rec["mean_x"], rec["mean_y"], rec["mean_z"], rec["mean_intensity"] = vox.means.T
    np.save(Path(output_dir) / f"{frame_id}.voxels.npy", rec)
    meta = {"frame": frame_id, "n_points": len(bundle.cloud),
            "n_out_of_range": vox.n_out_of_range, "n_voxels": len(vox)}
    (Path(output_dir) / f"{frame_id}.voxmeta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n")
    return frame_id, {"n_voxels": len(vox), "n_out_of_range": vox.n_out_of_range}


def _work_regions(task):
    frame_id, input_dir, output_dir, cfg = task
    bundle = dataio.load_frame(input_dir, frame_id)
    mask, _, labeled = _frame_mask(bundle, cfg)
    dataio.save_region_mask(Path(output_dir) / f"{frame_id}.mask.bin", mask)
    return frame_id, {
        "n_boxes": len(labeled),
        "n_occupied": int(mask.occupied.sum()),
        "n_r_oc": int(mask.in_r_oc.sum()),
        "n_r_sm": int(mask.in_r_sm.sum()),
        "empty_boxes": mask.empty_boxes,
    }


def _work_assemble(task):
    frame_id, input_dir, output_dir, cfg, bank, strict_fill = task
    bundle = dataio.load_frame(input_dir, frame_id)
    labeled = [b for b in bundle.boxes if b.cls in SUPPORTED_CLASSES]
    objects, _ = assembly.extract_objects(bundle.cloud, labeled, frame_id)
    params = cfg.heuristic_params()
    mask = None
    if strict_fill:
        mask, _, _ = _frame_mask(bundle, cfg)

    shapes = []
    for obj in objects:
        target = assembly.mirror_if_applicable(obj, params.match_voxel_size)
        sources = assembly.select_sources(target, bank, params)
        shapes.append(assembly.assemble(target, sources, params, mask=mask, strict=strict_fill))
    dataio.save_assembled(Path(output_dir) / f"{frame_id}.shapes.bin", shapes)
    return frame_id, {
        "n_targets": len(shapes),
        "n_borrowed": int(sum(len(s.borrowed) for s in shapes)),
    }


def _work_targets(task):
    frame_id, input_dir, output_dir, cfg, shapes_dir, masks_dir = task
    if masks_dir:
        mask = dataio.load_region_mask(Path(masks_dir) / f"{frame_id}.mask.bin")
    else:
        bundle = dataio.load_frame(input_dir, frame_id)
        mask, _, _ = _frame_mask(bundle, cfg)
    shapes = dataio.load_assembled(Path(shapes_dir) / f"{frame_id}.shapes.bin")
    grid = occupancy.make_targets(mask, shapes, cfg.loss_params())
    dataio.save_occupancy(Path(output_dir) / f"{frame_id}.occ.bin", grid)
    positives = int((grid.values > 0).sum())
    return frame_id, {"n_domain": len(grid), "n_positive": positives}


def _work_recover(task):
    frame_id, input_dir, output_dir, cfg, shapes_dir, scenario = task
    bundle = dataio.load_frame(input_dir, frame_id)
    scenario = metrics.RecoveryScenario.parse(scenario)
    if scenario is metrics.RecoveryScenario.NR:
        mask = None
        shapes = []
    else:
        mask, _, _ = _frame_mask(bundle, cfg)
        shapes = dataio.load_assembled(Path(shapes_dir) / f"{frame_id}.shapes.bin")
    if mask is None:
        grid = cfg.spherical_grid()
        mask = occlusion.RegionMask(
            grid,
            np.zeros(grid.shape, dtype=bool), np.zeros(grid.shape, dtype=bool),
            np.zeros(grid.shape, dtype=bool), np.zeros(grid.shape, dtype=np.int8),
            np.full(grid.shape, -1, dtype=np.int32),
        )
    recovered = metrics.recover_scenario(bundle.cloud, shapes, mask, scenario,
                                         cfg.synthetic_intensity)
    out = Path(output_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "added").mkdir(parents=True, exist_ok=True)
    dataio.write_points(out / "velodyne" / f"{frame_id}.bin", recovered.cloud)
    np.save(out / "added" / f"{frame_id}.npy", recovered.added_mask)
    for sub in ("label_2", "calib"):
        src = Path(input_dir) / sub / f"{frame_id}.txt"
        if src.exists():
            (out / sub).mkdir(parents=True, exist_ok=True)
            (out / sub / src.name).write_bytes(src.read_bytes())
    return frame_id, {"n_added": recovered.n_added}


def _work_simulate(task):
    index, spec_json, output_dir = task
    spec = synth.SceneSpec.from_json(spec_json)
    scene = spec.scene(index)
    frame_id = f"{index:06d}"
    out = Path(output_dir)
    dataio.write_kitti_frame(out, frame_id, scene.cloud, scene.boxes)
    truth_dir = out / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    instances = [
        assembly.ObjectInstance((frame_id, bi), box.cls, box, pts)
        for bi, (box, pts) in enumerate(zip(scene.boxes, scene.truth))
    ]
    dataio.save_bank(truth_dir / f"{frame_id}.bank", instances)
    return frame_id, {"n_points": len(scene.cloud), "n_boxes": len(scene.boxes)}


def _work_export(task):
    frame_id, input_dir, output_dir, cfg, mode, grids_dir = task
    out = Path(output_dir)
    if mode == "causes":
        bundle = dataio.load_frame(input_dir, frame_id)
        mask, vox, _ = _frame_mask(bundle, cfg)
        idx, ok = mask.grid.bin_indices(mask.grid.coordinates(bundle.cloud.xyz))
        point_cause = np.zeros(len(bundle.cloud), dtype=np.int8)
        point_cause[ok] = mask.cause[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
        colors = np.array([dataio.CAUSE_COLORS[int(c)] for c in point_cause], dtype=np.uint8)

        labeled = mask.cause > occlusion.Cause.OBSERVED
        centers = mask.grid.voxel_centers_cartesian()[labeled]
        center_colors = np.array(
            [dataio.CAUSE_COLORS[int(c)] for c in mask.cause[labeled]], dtype=np.uint8
        ).reshape(-1, 3)
        xyz = np.concatenate([bundle.cloud.xyz, centers.reshape(-1, 3)])
        rgb = np.concatenate([colors.reshape(-1, 3), center_colors])
        dataio.export_ply(out / f"{frame_id}.causes.ply", xyz, rgb)
        return frame_id, {"n_vertices": len(xyz)}
    # occupancy grids as grayscale probability clouds
    grid_path = Path(grids_dir) / f"{frame_id}.occ.bin"
    g = dataio.load_occupancy(grid_path)
    centers = g.grid.centers_of(g.indices)
    if hasattr(g.grid, "phi_range"):
        from lidarocc.geom import to_cartesian

        centers = to_cartesian(centers)
    dataio.export_ply(out / f"{frame_id}.occupancy.ply", centers,
                      dataio.probability_grays(g.values))
    return frame_id, {"n_vertices": len(g)}


def _run_tasks(tasks, worker, workers: int, keep_going: bool):
    results, errors = [], []
    if workers <= 1:
        for task in tasks:
            try:
                results.append(worker(task))
            except Exception as exc:  # per-frame isolation
                errors.append((task[0], f"{type(exc).__name__}: {exc}"))
                if not keep_going:
                    break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(task[0], pool.submit(worker, task)) for task in tasks]
            for fid, fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:
                    errors.append((fid, f"{type(exc).__name__}: {exc}"))
                    if not keep_going:
                        for _, f in futures:
                            f.cancel()
                        break
    results.sort(key=lambda r: str(r[0]))
    return results, errors


def _emit_summary(command: str, results, errors, started: float) -> None:
    summary = {
        "command": command,
        "n_frames": len(results),
        "n_errors": len(errors),
        "frames": {fid: info for fid, info in results},
        "errors": {fid: msg for fid, msg in errors},
        "elapsed_s": round(time.monotonic() - started, 3),
    }
    print(json.dumps(summary, sort_keys=True))


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "strict_paper", False):
        cfg.strict_paper = True
    return cfg


def _add_common(p: argparse.ArgumentParser, needs_input=True):
    if needs_input:
        p.add_argument("--input", required=True, help="KITTI-layout input directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--frames", help="comma-separated frame ids (default: all found)")
    p.add_argument("--workers", type=int, default=1, help="parallel frame workers")
    p.add_argument("--keep-going", action="store_true",
                   help="continue past per-frame errors, report them at the end")
    p.add_argument("--strict-paper", action="store_true",
                   help="thresholds-only matching: disable pragmatic extensions "
                        "such as the claim-best-anchor fallback")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidarocc",
                                     description="LiDAR occlusion and shape-occupancy pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="spherical voxel statistics per frame")
    _add_common(p)

    p = sub.add_parser("regions", help="occlusion/signal-miss masks with cause labels")
    _add_common(p)

    p = sub.add_parser("assemble", help="approximate complete shapes per object")
    _add_common(p)
    p.add_argument("--bank", help="reuse an existing source bank file")
    p.add_argument("--strict-fill", action="store_true",
                   help="borrow only into voxels with a shape-miss cause label")

    p = sub.add_parser("targets", help="occupancy ground-truth grids")
    _add_common(p)
    p.add_argument("--shapes", required=True, help="directory of .shapes.bin files")
    p.add_argument("--masks", help="directory of .mask.bin files (recomputed if omitted)")

    p = sub.add_parser("evaluate", help="occupancy prediction metrics")
    p.add_argument("--pred", required=True, help="directory of predicted .occ.bin grids")
    p.add_argument("--target", required=True, help="directory of ground-truth .occ.bin grids")
    p.add_argument("--input", help="KITTI-layout directory for object coverage boxes")
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--frames", help="comma-separated frame ids")

    p = sub.add_parser("recover", help="add shape points per recovery scenario")
    _add_common(p)
    p.add_argument("--scenario", required=True, choices=[m.value for m in metrics.RecoveryScenario])
    p.add_argument("--shapes", help="directory of .shapes.bin files (unused for NR)")

    p = sub.add_parser("simulate", help="generate synthetic KITTI-layout frames")
    p.add_argument("--scene-spec", required=True, help="scene spec JSON file")
    p.add_argument("--output", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--keep-going", action="store_true")

    p = sub.add_parser("export", help="PLY exports for inspection")
    _add_common(p)
    p.add_argument("--mode", choices=("causes", "occupancy"), default="causes")
    p.add_argument("--grids", help="directory of .occ.bin files (occupancy mode)")
    return parser


def _cmd_framewise(args, worker, extra=()):
    cfg = _load_config(args)
    frames = _select_frames(args)
    Path(args.output).mkdir(parents=True, exist_ok=True)
    tasks = [(fid, args.input, args.output, cfg, *extra) for fid in frames]
    return _run_tasks(tasks, worker, args.workers, args.keep_going)


def _cmd_assemble(args):
    cfg = _load_config(args)
    frames = _select_frames(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    if args.bank:
        bank = dataio.load_bank(args.bank)
    else:
        bank = []
        for fid in frames:
            bundle = dataio.load_frame(args.input, fid)
            labeled = [b for b in bundle.boxes if b.cls in SUPPORTED_CLASSES]
            objects, _ = assembly.extract_objects(bundle.cloud, labeled, fid)
            bank.extend(
                assembly.mirror_if_applicable(o, cfg.match_voxel_size) for o in objects
            )
        dataio.save_bank(out / "bank.bin", bank)

    tasks = [(fid, args.input, args.output, cfg, bank, args.strict_fill) for fid in frames]
    return _run_tasks(tasks, _work_assemble, args.workers, args.keep_going)


def _cmd_evaluate(args):
    cfg = _load_config(args)
    target_dir = Path(args.target)
    if args.frames:
        frames = sorted(set(args.frames.split(",")))
    else:
        frames = sorted(p.name.removesuffix(".occ.bin") for p in target_dir.glob("*.occ.bin"))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    per_frame = {}
    totals = {t: {"tp": 0, "fp": 0, "tn": 0, "fn": 0, "covered": 0, "boxes": 0}
              for t in cfg.thresholds}
    results = []
    for fid in frames:
        pred = dataio.load_occupancy(Path(args.pred) / f"{fid}.occ.bin")
        target = dataio.load_occupancy(target_dir / f"{fid}.occ.bin")
        boxes = []
        if args.input:
            bundle = dataio.load_frame(args.input, fid)
            boxes = [b for b in bundle.boxes if b.cls in SUPPORTED_CLASSES]
        report = metrics.evaluate_occupancy(pred, target, boxes, cfg.thresholds)
        per_frame[fid] = report.rows()
        for m in report.per_threshold:
            agg = totals[m.threshold]
            agg["tp"] += m.tp
            agg["fp"] += m.fp
            agg["tn"] += m.tn
            agg["fn"] += m.fn
            agg["covered"] += m.covered_boxes
            agg["boxes"] += m.n_boxes
        results.append((fid, {"n_domain": len(target)}))

    aggregate = []
    for tau in cfg.thresholds:
        a = totals[tau]
        n = a["tp"] + a["fp"] + a["tn"] + a["fn"]
        precision = metrics._safe_precision(a["tp"], a["fp"], a["tp"] + a["fn"])
        recall = metrics._safe_recall(a["tp"], a["fn"])
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        aggregate.append({
            "threshold": tau,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "accuracy": (a["tp"] + a["tn"]) / n if n else 1.0,
            "object_coverage": a["covered"] / a["boxes"] if a["boxes"] else 1.0,
        })

    (out / "report.json").write_text(
        json.dumps({"aggregate": aggregate, "frames": per_frame}, indent=2, sort_keys=True) + "\n"
    )

    header = f"{'thr':>5} {'precision':>10} {'recall':>10} {'f1':>10} {'accuracy':>10} {'coverage':>10}"
    print(header)
    for row in aggregate:
        print(f"{row['threshold']:>5.2f} {row['precision']:>10.4f} {row['recall']:>10.4f} "
              f"{row['f1']:>10.4f} {row['accuracy']:>10.4f} {row['object_coverage']:>10.4f}")
    return results, []


def _cmd_simulate(args):
    spec_json = Path(args.scene_spec).read_text()
    spec = synth.SceneSpec.from_json(spec_json)  # validate before fan-out
    Path(args.output).mkdir(parents=True, exist_ok=True)
    tasks = [(i, spec_json, args.output) for i in range(spec.n_frames)]
    return _run_tasks(tasks, _work_simulate, args.workers, args.keep_going)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        if args.command == "voxelize":
            results, errors = _cmd_framewise(args, _work_voxelize)
        elif args.command == "regions":
            results, errors = _cmd_framewise(args, _work_regions)
        elif args.command == "assemble":
            results, errors = _cmd_assemble(args)
        elif args.command == "targets":
            results, errors = _cmd_framewise(args, _work_targets, (args.shapes, args.masks))
        elif args.command == "evaluate":
            results, errors = _cmd_evaluate(args)
        elif args.command == "recover":
            if args.scenario != "NR" and not args.shapes:
                raise ConfigError(f"recover --scenario {args.scenario} needs --shapes")
            results, errors = _cmd_framewise(args, _work_recover, (args.shapes, args.scenario))
        elif args.command == "simulate":
            results, errors = _cmd_simulate(args)
        elif args.command == "export":
            if args.mode == "occupancy" and not args.grids:
                raise ConfigError("export --mode occupancy needs --grids")
            results, errors = _cmd_framewise(args, _work_export, (args.mode, args.grids))
        else:  # pragma: no cover - argparse enforces choices
            raise AssertionError(args.command)
    except (ConfigError, FileNotFoundError, dataio.DataIOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    _emit_summary(args.command, results, errors, started)
    for fid, msg in errors:
        print(f"error in frame {fid}: {msg}", file=sys.stderr)
    return 1 if errors else 0


if __name__ == "__main__":
    raise SystemExit(main())
