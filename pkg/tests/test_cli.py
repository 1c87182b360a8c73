import hashlib

import numpy as np
import pytest

from floorplan_net.cli import run
from floorplan_net.data import decode_label_png, default_palette
from floorplan_net.metrics import MetricsReport
from floorplan_net.reconstruct import read_obj
from floorplan_net.training import load_checkpoint


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(["--out", str(out), "gen-data", "--seed", "7", "--train", "2", "--test", "1"]) == 0
    assert run(["--out", str(out), "train", "--iterations", "3", "--seed", "1"]) == 0
    return out


def test_gen_data_deterministic_layout(tmp_path):
    for name in ("a", "b"):
        assert run(["--out", str(tmp_path / name), "gen-data", "--seed", "7", "--train", "4", "--test", "2"]) == 0
    a, b = tmp_path / "a" / "data", tmp_path / "b" / "data"
    assert tree_digest(a) == tree_digest(b)
    for sub in ("images", "labels_boundary", "labels_room"):
        assert len(list((a / sub).glob("*.png"))) == 6
    assert len((a / "manifest.csv").read_text().splitlines()) == 6


def test_invalid_spec_names_constraint(tmp_path, capsys):
    code = run(["--out", str(tmp_path), "--set", "generation.min_room=4", "gen-data"])
    assert code == 2
    assert "min_room" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("# comment\nmodel.alpha=0.5\nmodel.bogus=1\n")
    assert run(["--out", str(tmp_path), "--config", str(cfg), "gen-data"]) == 2
    assert "model.bogus" in capsys.readouterr().err


def test_bad_usage_exit_code(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["--out", str(tmp_path), "frobnicate"])
    assert exc.value.code == 2


def test_train_outputs_and_replay(workspace, tmp_path):
    ck = workspace / "model" / "checkpoint.bin"
    lines = (workspace / "model" / "train_log.csv").read_text().splitlines()
    assert lines[0] == "iter,loss_rb,loss_rt,loss_total" and len(lines) == 4
    resolved = workspace / "model" / "run.cfg"
    assert "training.iterations=3" in resolved.read_text()
    # replaying the archived config reproduces the checkpoint byte for byte
    replay = tmp_path / "replay"
    replay.mkdir()
    (replay / "data").symlink_to(workspace / "data")
    assert run(["--out", str(replay), "--config", str(resolved), "train"]) == 0
    assert (replay / "model" / "checkpoint.bin").read_bytes() == ck.read_bytes()
    assert load_checkpoint(ck).iteration == 3


def test_eval_report_and_ablation_label(workspace, capsys):
    before = tree_digest(workspace / "data")
    assert run(["--out", str(workspace), "eval", "--split", "train"]) == 0
    rep = MetricsReport.from_text((workspace / "reports" / "full.txt").read_text())
    assert rep.label == "full" and 0 <= rep.overall_accu <= 1
    assert (workspace / "reports" / "full.csv").exists()
    assert run(["--out", str(workspace), "eval", "--ablation", "no_attention"]) == 3
    assert "trained as 'full'" in capsys.readouterr().err
    assert tree_digest(workspace / "data") == before


def test_eval_ablation_checkpoint(workspace):
    args = ["--out", str(workspace), "--set", "paths.checkpoint=abl/ck.bin"]
    assert run(args + ["train", "--iterations", "2", "--ablation", "no_attention"]) == 0
    assert run(args + ["eval", "--ablation", "no_attention", "--postprocess"]) == 0
    rep = MetricsReport.from_text((workspace / "reports" / "no_attention+postprocess.txt").read_text())
    assert rep.label == "no_attention+postprocess"


def test_missing_checkpoint(tmp_path, capsys):
    assert run(["--out", str(tmp_path), "eval"]) == 3
    assert "does not exist" in capsys.readouterr().err


def test_infer_postprocess_reconstruct(workspace):
    assert run(["--out", str(workspace), "infer", "--split", "all"]) == 0
    pred = workspace / "predictions"
    assert {p.name for p in pred.glob("test_000_*.png")} == {
        "test_000_boundary.png", "test_000_room.png", "test_000_composite.png"}
    assert run(["--out", str(workspace), "postprocess"]) == 0
    assert len(list((workspace / "refined").glob("*_room.png"))) == 3

    gt = workspace / "data" / "labels_boundary" / "train_000.png"
    assert run(["--out", str(workspace), "reconstruct", "--labels", "data/labels_boundary/train_000.png",
                "--cell-size", "0.1", "--height", "3"]) == 0
    walls = decode_label_png(gt, default_palette(), "boundary") == 1
    mesh = read_obj(workspace / "walls.obj")
    v = mesh.vertices.reshape(-1, 8, 3)
    area = np.sum(np.ptp(v[:, :, 0], axis=1) * np.ptp(v[:, :, 1], axis=1))
    assert area == pytest.approx(walls.sum() * 0.01, rel=1e-6)


def test_infer_rejects_wrong_size(workspace, tmp_path):
    from PIL import Image
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(workspace / "small.png")
    assert run(["--out", str(workspace), "infer", "--image", "small.png"]) == 3
