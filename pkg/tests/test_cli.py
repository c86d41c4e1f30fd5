import json

import numpy as np
import pytest

from lidarocc import dataio
from lidarocc.cli import main

SCENE_SPEC = {
    "seed": 55,
    "n_frames": 2,
    "n_objects": 2,
    "r_range": [2.24, 40.0],
    "phi_range_deg": [-30.0, 30.0],
    "theta_range_deg": [-14.0, 2.0],
    "voxel_size": [0.32, 0.52, 0.42],
    "occluder_count": 1,
    "signal_miss_probability": 1.0,
}

CONFIG = {
    "r_range": [2.24, 40.0],
    "phi_range_deg": [-30.0, 30.0],
    "theta_range_deg": [-14.0, 2.0],
    "spherical_voxel_size": [0.32, 0.52, 0.42],
}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    spec_path = root / "scene.json"
    spec_path.write_text(json.dumps(SCENE_SPEC))
    data = root / "data"
    assert main(["simulate", "--scene-spec", str(spec_path), "--output", str(data)]) == 0
    cfg = root / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    return root


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr().out
    return code, out


class TestSimulate:
    def test_layout(self, sim_dir):
        data = sim_dir / "data"
        for sub in ("velodyne", "label_2", "calib", "truth"):
            assert (data / sub).is_dir()
        assert sorted(p.name for p in (data / "velodyne").glob("*.bin")) == [
            "000000.bin", "000001.bin",
        ]
        bundle = dataio.load_frame(data, "000000")
        assert len(bundle.boxes) == 2
        assert len(bundle.cloud) > 0
        truth = dataio.load_bank(data / "truth" / "000000.bank")
        assert len(truth) == 2

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        spec_path = sim_dir / "scene.json"
        out2 = tmp_path / "again"
        assert main(["simulate", "--scene-spec", str(spec_path), "--output", str(out2)]) == 0
        for sub in ("velodyne", "label_2", "calib", "truth"):
            for p in sorted((sim_dir / "data" / sub).iterdir()):
                assert p.read_bytes() == (out2 / sub / p.name).read_bytes()


class TestPipeline:
    def test_voxelize(self, sim_dir, tmp_path, capsys):
        out = tmp_path / "vox"
        code, stdout = run([
            "voxelize", "--input", str(sim_dir / "data"), "--output", str(out),
            "--config", str(sim_dir / "config.json"),
        ], capsys)
        assert code == 0
        summary = json.loads(stdout)
        assert summary["n_frames"] == 2 and summary["n_errors"] == 0
        rec = np.load(out / "000000.voxels.npy")
        assert rec["count"].sum() > 0
        meta = json.loads((out / "000000.voxmeta.json").read_text())
        assert meta["n_points"] == rec["count"].sum()

    def test_regions_assemble_targets_evaluate(self, sim_dir, tmp_path, capsys):
        data = str(sim_dir / "data")
        cfg = str(sim_dir / "config.json")
        masks = tmp_path / "masks"
        shapes = tmp_path / "shapes"
        targets = tmp_path / "targets"

        code, _ = run(["regions", "--input", data, "--output", str(masks), "--config", cfg], capsys)
        assert code == 0
        mask = dataio.load_region_mask(masks / "000000.mask.bin")
        assert mask.in_r_oc.any()

        code, _ = run(["assemble", "--input", data, "--output", str(shapes), "--config", cfg], capsys)
        assert code == 0
        assert (shapes / "bank.bin").exists()
        loaded = dataio.load_assembled(shapes / "000000.shapes.bin")
        assert len(loaded) == 2

        code, _ = run([
            "targets", "--input", data, "--output", str(targets), "--config", cfg,
            "--shapes", str(shapes), "--masks", str(masks),
        ], capsys)
        assert code == 0
        grid = dataio.load_occupancy(targets / "000000.occ.bin")
        assert len(grid) > 0 and (grid.values > 0).any()

        report_dir = tmp_path / "report"
        code, stdout = run([
            "evaluate", "--pred", str(targets), "--target", str(targets),
            "--input", data, "--output", str(report_dir), "--config", cfg,
        ], capsys)
        assert code == 0
        report = json.loads((report_dir / "report.json").read_text())
        for row in report["aggregate"]:
            assert row["precision"] == 1.0
            assert row["recall"] == 1.0
            assert row["f1"] == 1.0
            assert row["accuracy"] == 1.0
        assert "precision" in stdout

    def test_recover_nr_identity(self, sim_dir, tmp_path, capsys):
        data = sim_dir / "data"
        out = tmp_path / "nr"
        code, _ = run([
            "recover", "--input", str(data), "--output", str(out),
            "--config", str(sim_dir / "config.json"), "--scenario", "NR",
        ], capsys)
        assert code == 0
        for frame in ("000000", "000001"):
            a = (data / "velodyne" / f"{frame}.bin").read_bytes()
            b = (out / "velodyne" / f"{frame}.bin").read_bytes()
            assert a == b
            added = np.load(out / "added" / f"{frame}.npy")
            assert not added.any()

    def test_recover_scenario_adds_points(self, sim_dir, tmp_path, capsys):
        data = str(sim_dir / "data")
        cfg = str(sim_dir / "config.json")
        shapes = tmp_path / "shapes"
        code, _ = run(["assemble", "--input", data, "--output", str(shapes), "--config", cfg], capsys)
        assert code == 0
        out = tmp_path / "eo"
        code, _ = run([
            "recover", "--input", data, "--output", str(out), "--config", cfg,
            "--scenario", "EO+SM+SO", "--shapes", str(shapes),
        ], capsys)
        assert code == 0
        added = np.load(out / "added" / "000000.npy")
        assert added.sum() > 0
        cloud = dataio.read_points(out / "velodyne" / "000000.bin")
        assert len(cloud) == len(added)

    def test_export_causes(self, sim_dir, tmp_path, capsys):
        out = tmp_path / "ply"
        code, _ = run([
            "export", "--input", str(sim_dir / "data"), "--output", str(out),
            "--config", str(sim_dir / "config.json"), "--mode", "causes",
            "--frames", "000000",
        ], capsys)
        assert code == 0
        text = (out / "000000.causes.ply").read_text()
        assert text.startswith("ply")

    def test_workers_do_not_change_outputs(self, sim_dir, tmp_path, capsys):
        data = str(sim_dir / "data")
        cfg = str(sim_dir / "config.json")
        outs = []
        for w in (1, 2):
            out = tmp_path / f"w{w}"
            code, _ = run([
                "regions", "--input", data, "--output", str(out),
                "--config", cfg, "--workers", str(w),
            ], capsys)
            assert code == 0
            outs.append(out)
        for p in sorted(outs[0].iterdir()):
            assert p.read_bytes() == (outs[1] / p.name).read_bytes()


class TestErrors:
    def test_bad_config_names_field(self, sim_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"gamma": -1.0}))
        code = main([
            "voxelize", "--input", str(sim_dir / "data"),
            "--output", str(tmp_path / "o"), "--config", str(cfg),
        ])
        err = capsys.readouterr().err
        assert code == 2
        assert "gamma" in err

    def test_unknown_config_field(self, sim_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"gama": 2.0}))
        code = main([
            "voxelize", "--input", str(sim_dir / "data"),
            "--output", str(tmp_path / "o"), "--config", str(cfg),
        ])
        assert code == 2
        assert "gama" in capsys.readouterr().err

    def test_missing_frame_fails_nonzero(self, sim_dir, tmp_path, capsys):
        code, _ = run([
            "voxelize", "--input", str(sim_dir / "data"),
            "--output", str(tmp_path / "o"), "--frames", "999999",
        ], capsys)
        assert code == 1

    def test_keep_going_reports_all_errors(self, sim_dir, tmp_path, capsys):
        code = main([
            "voxelize", "--input", str(sim_dir / "data"),
            "--output", str(tmp_path / "o"), "--frames", "000000,777777,999999",
            "--keep-going",
        ])
        captured = capsys.readouterr()
        assert code == 1
        summary = json.loads(captured.out)
        assert summary["n_errors"] == 2
        assert summary["n_frames"] == 1
