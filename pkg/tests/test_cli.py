import json
import os

import numpy as np
import pytest

from partbox.cli import main
from partbox.shapeio import read_shape_json, write_shape_json
from partbox.synth.shapes import generate_shape


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli") / "ds")
    code = main(
        [
            "gen",
            "--out", root,
            "--shapes", "12",
            "--archetypes", "chair",
            "--views", "1",
            "--seed", "5",
        ]
    )
    assert code == 0
    return root


class TestGen:
    def test_manifest_written(self, dataset_dir):
        with open(os.path.join(dataset_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["n_samples"] == 12
        assert manifest["config_hash"]

    def test_rerun_same_hash(self, dataset_dir, tmp_path, capsys):
        code = main(
            ["gen", "--out", str(tmp_path / "ds2"), "--shapes", "12",
             "--archetypes", "chair", "--views", "1", "--seed", "5"]
        )
        assert code == 0
        with open(os.path.join(dataset_dir, "manifest.json")) as fh:
            h1 = json.load(fh)["config_hash"]
        with open(tmp_path / "ds2" / "manifest.json") as fh:
            h2 = json.load(fh)["config_hash"]
        assert h1 == h2

    def test_zero_shapes_usage_error(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "x"), "--shapes", "0"]) == 1

    def test_unknown_archetype_usage_error(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "x"), "--shapes", "2", "--archetypes", "sofa"]) == 1


class TestTrain:
    def test_train_orientation_and_resume(self, dataset_dir, tmp_path):
        ckpt = str(tmp_path / "orient.json")
        code = main(
            ["train", "--dataset", dataset_dir, "--head", "orientation", "--out", ckpt,
             "--epochs", "4", "--seed", "1"]
        )
        assert code == 0
        assert os.path.exists(ckpt)
        assert os.path.exists(str(tmp_path / "orient_loss.csv"))
        assert os.path.exists(str(tmp_path / "orient_loss.png"))
        with open(ckpt) as fh:
            payload = json.load(fh)
        assert payload["format_version"] == 1
        assert payload["meta"]["epochs_run"] == 4

        ckpt2 = str(tmp_path / "orient2.json")
        code = main(
            ["train", "--dataset", dataset_dir, "--head", "orientation", "--out", ckpt2,
             "--epochs", "2", "--seed", "1", "--resume", ckpt]
        )
        assert code == 0
        with open(ckpt2) as fh:
            assert json.load(fh)["meta"]["epochs_run"] == 6

    def test_train_relation_writes_both(self, dataset_dir, tmp_path):
        out = str(tmp_path / "relation.json")
        code = main(
            ["train", "--dataset", dataset_dir, "--head", "relation", "--out", out,
             "--epochs", "2", "--seed", "2"]
        )
        assert code == 0
        assert os.path.exists(str(tmp_path / "relation.sym.json"))
        assert os.path.exists(str(tmp_path / "relation.adj.json"))

    def test_missing_dataset_runtime_error(self, tmp_path):
        code = main(
            ["train", "--dataset", str(tmp_path / "nope"), "--head", "orientation",
             "--out", str(tmp_path / "c.json")]
        )
        assert code == 2

    def test_bad_head_usage_error(self, dataset_dir, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["train", "--dataset", dataset_dir, "--head", "bogus", "--out", "x.json"])
        assert err.value.code == 1


class TestEval:
    def test_oracle_eval(self, dataset_dir, tmp_path):
        out = str(tmp_path / "eval")
        code = main(
            ["eval", "--dataset", dataset_dir, "--out-dir", out, "--oracle",
             "--split", "test", "--n-points", "64", "--per-box", "64"]
        )
        assert code == 0
        with open(os.path.join(out, "metrics_oracle.json")) as fh:
            rep = json.load(fh)
        assert rep["overall"]["emd_aligned"] < 1e-9
        assert os.path.exists(os.path.join(out, "metrics_oracle.txt"))
        assert os.path.exists(os.path.join(out, "metrics_oracle.png"))

    def test_missing_checkpoints_reported(self, dataset_dir, tmp_path, capsys):
        code = main(["eval", "--dataset", dataset_dir, "--out-dir", str(tmp_path / "e")])
        assert code == 1
        err = capsys.readouterr().err
        assert "orientation" in err and "relation" in err

    def test_nonexistent_checkpoint_runtime_error(self, dataset_dir, tmp_path, capsys):
        code = main(
            ["eval", "--dataset", dataset_dir, "--out-dir", str(tmp_path / "e"),
             "--orientation-ckpt", "/nope/a.json", "--size-ckpt", "/nope/b.json",
             "--contact-ckpt", "/nope/c.json", "--relation-sym-ckpt", "/nope/d.json",
             "--relation-adj-ckpt", "/nope/e.json"]
        )
        assert code == 2
        assert "orientation" in capsys.readouterr().err


class TestExport:
    def test_round_trip(self, tmp_path):
        shape = generate_shape("chair", 9)
        shape_path = str(tmp_path / "shape.json")
        write_shape_json(shape_path, shape)
        obj_path = str(tmp_path / "shape.obj")
        assert main(["export", "--shape", shape_path, "--out", obj_path]) == 0
        lines = open(obj_path).read().strip().splitlines()
        v_lines = [l for l in lines if l.startswith("v ")]
        f_lines = [l for l in lines if l.startswith("f ")]
        g_lines = [l for l in lines if l.startswith("g ")]
        assert len(v_lines) == 8 * shape.n_parts
        assert len(f_lines) == 12 * shape.n_parts
        assert len(g_lines) == shape.n_parts
        # vertex coordinates round-trip within print precision
        verts = np.array([[float(x) for x in l.split()[1:]] for l in v_lines])
        expect = np.concatenate([b.vertices() for b in shape.parts])
        assert np.abs(verts - expect).max() < 1e-9

    def test_single_cube_counts(self, tmp_path):
        from partbox.geometry import OrientedBox
        from partbox.synth.shapes import PartShape

        cube = OrientedBox([0, 0, 0], [1, 1, 1], [1, 0, 0, 0])
        shape = PartShape([cube], ["cube"], ((0,),), (), {}, "chair")
        path = str(tmp_path / "cube.json")
        write_shape_json(path, shape)
        out = str(tmp_path / "cube.obj")
        assert main(["export", "--shape", path, "--out", out]) == 0
        text = open(out).read()
        assert text.count("\nv ") + text.startswith("v ") == 8 or len([l for l in text.splitlines() if l.startswith("v ")]) == 8
        assert len([l for l in text.splitlines() if l.startswith("f ")]) == 12

    def test_malformed_json_error(self, tmp_path, capsys):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            fh.write('{"format_version": 1, "parts": [')
        assert main(["export", "--shape", bad, "--out", str(tmp_path / "o.obj")]) == 2
        assert "line" in capsys.readouterr().err

    def test_missing_field_error(self, tmp_path, capsys):
        bad = str(tmp_path / "bad2.json")
        with open(bad, "w") as fh:
            json.dump({"format_version": 1, "parts": [{"center": [0, 0, 0]}]}, fh)
        assert main(["export", "--shape", bad, "--out", str(tmp_path / "o.obj")]) == 2
        err = capsys.readouterr().err
        assert "missing" in err


class TestShapeIO:
    def test_shape_json_round_trip(self, tmp_path):
        shape = generate_shape("cabinet", 13)
        path = str(tmp_path / "s.json")
        write_shape_json(path, shape)
        loaded = read_shape_json(path)
        assert loaded.archetype == shape.archetype
        assert loaded.edges == shape.edges
        assert loaded.groups == shape.groups
        for a, b in zip(shape.parts, loaded.parts):
            assert np.abs(a.center - b.center).max() == 0.0
            assert np.abs(a.size - b.size).max() == 0.0
