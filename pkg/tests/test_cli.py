import json

import pytest

from qrvos import cli
from qrvos.engine import EVAL_COLUMNS

TINY = ["--dim", "32", "--heads", "4", "--enc-layers", "1", "--dec-layers", "1", "--num-queries", "2",
        "--epochs", "1", "--max-steps", "2", "--no-hflip", "--jitter", "0"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["gen-data", "--out", str(data), "--num", "2", "--frames", "2", "--size", "64"]) == 0
    run = root / "run"
    assert cli.main(["train", "--data-dir", str(data), "--out-dir", str(run), *TINY]) == 0
    return data, run


def test_train_outputs(workspace):
    _, run = workspace
    for name in ("checkpoint.qrv", "config.txt", "loss.csv", "loss.png"):
        assert (run / name).exists(), name
    assert (run / "loss.csv").read_text().splitlines()[0] == "step,total,cls,l1,giou,dice,mask_focal"


def test_eval_writes_reports_and_is_idempotent(workspace, tmp_path, capsys):
    data, run = workspace
    assert cli.main(["eval", "--run", str(run), "--data", str(data), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["eval", "--run", str(run), "--data", str(data), "--out", str(tmp_path / "b")]) == 0
    header = (tmp_path / "a" / "report.csv").read_text().splitlines()[0]
    assert header == ",".join(EVAL_COLUMNS)
    assert header == "J,F,J&F,P@0.5,P@0.6,P@0.7,P@0.8,P@0.9,overall_iou,mean_iou,mAP,selection_acc"
    for name in ("report.csv", "report.txt", "samples.csv"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    assert (tmp_path / "a" / "metrics.png").stat().st_size > 0
    assert "selection_acc" in capsys.readouterr().out


def test_infer_and_visualize(workspace, tmp_path, capsys):
    data, run = workspace
    assert cli.main(["infer", "--run", str(run), "--data", str(data), "--out", str(tmp_path / "inf")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["selected"] in (0, 1) and len(summary["boxes"]) == 2
    assert (tmp_path / "inf" / "pred_mask_01.pgm").exists()
    assert cli.main(["infer", "--run", str(run), "--data", str(data), "--expression", "the red circle"]) == 0
    assert cli.main(["visualize", "--run", str(run), "--data", str(data), "--index", "1",
                     "--out", str(tmp_path / "vis")]) == 0
    assert sorted(p.name for p in (tmp_path / "vis").iterdir()) == ["overlay_00.ppm", "overlay_01.ppm"]


def test_config_file_with_flag_override(workspace, tmp_path):
    data, _ = workspace
    conf = tmp_path / "run.txt"
    conf.write_text(f"data_dir = {data}\nout_dir = {tmp_path / 'r'}\nseed = 3\nvl_fusion = true\n")
    assert cli.main(["train", "--config", str(conf), *TINY, "--no-vl-fusion"]) == 0
    saved = (tmp_path / "r" / "config.txt").read_text()
    assert "seed = 3" in saved and "vl_fusion = false" in saved


@pytest.mark.parametrize("argv", [
    ["train", "--lr", "-1"],
    ["train", "--dim", "abc"],
    ["train", "--config", "/nonexistent/run.txt"],
    ["gen-data", "--out", "/tmp/unused", "--size", "50"],
])
def test_config_errors_exit_2(argv, capsys):
    assert cli.main(argv) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_config_file_unknown_key_exit_2(tmp_path):
    conf = tmp_path / "bad.txt"
    conf.write_text("learning_rate = 0.1\n")
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CONFIG


def test_data_errors_exit_3(workspace, tmp_path, capsys):
    data, run = workspace
    assert cli.main(["train", "--data-dir", str(tmp_path / "missing"), *TINY]) == cli.EXIT_DATA
    assert cli.main(["eval", "--run", str(run), "--data", str(tmp_path)]) == cli.EXIT_DATA
    assert cli.main(["infer", "--run", str(run), "--data", str(data), "--index", "9"]) == cli.EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_missing_checkpoint_exit_1(workspace, tmp_path):
    assert cli.main(["eval", "--run", str(tmp_path), "--data", str(workspace[0])]) == cli.EXIT_ERROR


def test_help_lists_verbs(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for verb in ("gen-data", "train", "eval", "infer", "visualize", "grad-check"):
        assert verb in out
