import csv
import json

import pytest

from radar_cs.cli import build_parser, main


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["gen-scene", "--out", str(out), "--frames", "6", "--shape", "100", "64",
                 "--targets", "2", "--seed", "4"]) == 0
    return out


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_scene_outputs(scene_dir):
    assert len(list((scene_dir / "frames").glob("*.png"))) == 6
    assert (scene_dir / "gt.jsonl").exists()
    assert json.loads((scene_dir / "scene.json").read_text())["seed"] == 4


def test_run_and_eval_full_rate(scene_dir, tmp_path, capsys):
    run_dir, ev = tmp_path / "run", tmp_path / "eval"
    assert main(["run", "--frames", str(scene_dir / "frames"), "--out", str(run_dir),
                 "--mode", "standard-cs", "--rate", "1.0", "--anchor-rate", "1.0",
                 "--block", "10", "16"]) == 0
    assert main(["eval", "--recon", str(run_dir / "frames"), "--reference",
                 str(scene_dir / "frames"), "--out", str(ev)]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert report["mean_psnr"] == "inf"


def test_comprpd_budget_csv(scene_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--frames", str(scene_dir / "frames"), "--out", str(out),
                 "--mode", "comprpd", "--rate", "0.2", "--anchor-period", "4",
                 "--block", "10", "16", "--det-k", "12", "--det-smooth", "1"]) == 0
    rows = list(csv.DictReader(open(out / "budget.csv")))
    n = 100 * 64
    assert [int(r["anchor"]) for r in rows] == [1, 0, 0, 0, 1, 0]
    total_budget = sum(float(r["budget"]) for r in rows)
    assert total_budget == pytest.approx(2 * 0.4 * n + 4 * 0.2 * n)
    assert sum(int(r["measurements"]) for r in rows) <= total_budget + 6 * 40
    assert (out / "tracks.jsonl").exists() and len(list((out / "plans").iterdir())) == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["target_rate"] == 0.2


def test_run_reproducible_from_manifest(scene_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--frames", str(scene_dir / "frames"), "--block", "10", "16", "--anchor-period", "3"]
    assert main(["run", "--out", str(a)] + args) == 0
    cfg = json.loads((a / "manifest.json").read_text())["config"]
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--out", str(b), "--frames", str(scene_dir / "frames"),
                 "--config", str(tmp_path / "cfg.json")]) == 0
    for p in (a / "frames").iterdir():
        assert p.read_bytes() == (b / "frames" / p.name).read_bytes()
    assert (a / "budget.csv").read_bytes() == (b / "budget.csv").read_bytes()


def test_eval_detections_equal_gt(scene_dir, tmp_path, capsys):
    gt = scene_dir / "gt.jsonl"
    assert main(["eval", "--detections", str(gt), "--gt", str(gt), "--out", str(tmp_path),
                 "--svg", str(tmp_path / "pr.svg")]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["ap50"] == 1.0
    assert (tmp_path / "pr.svg").read_text().startswith("<svg")


def test_invalid_config_reports_field(scene_dir, tmp_path, capsys):
    code = main(["run", "--frames", str(scene_dir / "frames"), "--out", str(tmp_path),
                 "--rate", "0.9"])
    assert code == 2
    err = _err(capsys)
    assert err["field"] == "target_rate" and err["error"] == "CliError"


def test_unknown_config_key(scene_dir, tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"speed": 3}')
    assert main(["run", "--frames", str(scene_dir / "frames"), "--out", str(tmp_path),
                 "--config", str(tmp_path / "c.json")]) == 2
    assert _err(capsys)["field"] == "speed"


def test_missing_input(tmp_path, capsys):
    assert main(["run", "--frames", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    assert _err(capsys)["error"] == "FileNotFoundError"


def test_plan_command(tmp_path, capsys):
    (tmp_path / "lp.json").write_text(json.dumps({"lp": "radar", "I": 20, "O": 140, "w": 16,
                                                  "h": 10, "S": 5120}))
    assert main(["plan", "--config", str(tmp_path / "lp.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["solution"] == pytest.approx({"x1": 0.55, "x2": 0.15})
    (tmp_path / "bad.json").write_text(json.dumps({"lp": "radar", "I": 100, "O": 10, "S": 100}))
    assert main(["plan", "--config", str(tmp_path / "bad.json")]) == 1
    assert _err(capsys)["field"].startswith("f(x)")


def test_track_and_cfar(scene_dir, tmp_path):
    assert main(["track", "--detections", str(scene_dir / "gt.jsonl"), "--out",
                 str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "tracks.jsonl").read_text()
    assert main(["cfar", "--frames", str(scene_dir / "frames"), "--block", "10", "16",
                 "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c" / "cfar.jsonl").read_text().splitlines()
    assert len(lines) == 6 and json.loads(lines[0])["blocks"]


def test_convert_round_trip(scene_dir, tmp_path):
    assert main(["convert", "--in", str(scene_dir / "frames"), "--to", "raw",
                 "--out", str(tmp_path / "raw")]) == 0
    assert main(["convert", "--in", str(tmp_path / "raw" / "frame_00001.bin"), "--to", "png",
                 "--out", str(tmp_path / "back.png")]) == 0
    assert (tmp_path / "back.png").exists() and (tmp_path / "back.json").exists()


def test_help_documents_formats(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--help"])
    text = capsys.readouterr().out
    assert "little-endian float32" in text and "budget.csv" in text


@pytest.mark.parametrize("rate, lowest", [(1.0, float("inf")), (0.3, 20.0)])
def test_compress_reconstruct_round_trip(scene_dir, tmp_path, rate, lowest):
    meas, rec, ev = tmp_path / "m", tmp_path / "r", tmp_path / "e"
    assert main(["compress", "--frames", str(scene_dir / "frames"), "--out", str(meas),
                 "--rate", str(rate), "--block", "10", "16"]) == 0
    assert len(list(meas.glob("*.rcsm"))) == 6
    assert main(["reconstruct", "--measurements", str(meas), "--out", str(rec)]) == 0
    assert main(["eval", "--recon", str(rec), "--reference", str(scene_dir / "frames"),
                 "--out", str(ev)]) == 0
    psnr = json.loads((ev / "report.json").read_text())["mean_psnr"]
    assert float(psnr) >= lowest


def test_reconstruct_rejects_empty_dir(tmp_path, capsys):
    assert main(["reconstruct", "--measurements", str(tmp_path), "--out",
                 str(tmp_path / "r")]) == 2
    assert _err(capsys)["field"] == "measurements"
