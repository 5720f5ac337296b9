import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from detkit.cli import build_parser, run
from detkit.data_io import PipelineConfig, load_image
from fixtures.make_fixture import run_pipeline

FIX = Path(__file__).parent / "fixtures"
ANN = str(FIX / "annotations.json")


def test_eval_dispatch(tmp_path, capsys):
    out = tmp_path / "report.json"
    code = run(["eval", "--results", str(FIX / "model0_view0.json"), "--annotations", ANN, "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report) >= {"ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large", "per_class"}
    stdout = capsys.readouterr().out
    assert "AP@0.50:0.95" in stdout
    assert f"{100 * report['ap']:.1f}" in stdout


def test_eval_figures(tmp_path):
    code = run(["eval", "--results", str(FIX / "model0_view0.json"), "--annotations", ANN,
                "--out", str(tmp_path / "r.json"), "--figures", str(tmp_path / "fig")])
    assert code == 0
    for name in ("pr_curves.png", "ap_by_threshold.png"):
        assert (tmp_path / "fig" / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_fuse_without_results_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["fuse", "--results", "--annotations", ANN, "--out", str(tmp_path / "f.json")])
    assert exc.value.code == 1


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run(["eval", "--bogus"])
    assert exc.value.code == 1


def test_missing_file_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = run(["eval", "--results", str(missing), "--annotations", ANN, "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "nope.json" in capsys.readouterr().err


def test_corrupt_file_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[{\"image_id\": 1,")
    code = run(["eval", "--results", str(bad), "--annotations", ANN, "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_weight_count_mismatch(tmp_path):
    code = run(["fuse", "--results", str(FIX / "model0_view0.json"), "--annotations", ANN,
                "--weights", "1,2", "--out", str(tmp_path / "f.json")])
    assert code == 1


def test_view_count_mismatch(tmp_path):
    code = run(["tta-merge", "--results", str(FIX / "model0_view0.json"), "--views", str(FIX / "views.json"),
                "--annotations", ANN, "--out", str(tmp_path / "m.json")])
    assert code == 1


@pytest.mark.parametrize("command", ["augment", "mask", "tta-merge", "fuse", "select", "eval"])
def test_help_shows_config_defaults(command, capsys):
    with pytest.raises(SystemExit) as exc:
        run([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--config" in text and "--threads" in text
    d = PipelineConfig()
    expected = {
        "mask": [str(d.mask_ratio), str(d.patch_size)],
        "fuse": [str(d.wbf_iou_thr), str(d.wbf_skip_thr)],
        "tta-merge": [str(d.wbf_iou_thr)],
        "select": [str(d.top_k)],
        "augment": [str(d.mixup_beta), str(d.mosaic_prob)],
        "eval": [],
    }[command]
    for value in expected:
        assert f"(default: {value})" in text


def test_subcommands_present():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"augment", "mask", "tta-merge", "fuse", "select", "eval"}


def test_config_merges_under_flags(tmp_path, monkeypatch):
    monkeypatch.delenv("DETKIT_SEED", raising=False)
    img = tmp_path / "img.png"
    from detkit.data_io import save_image

    save_image(np.zeros((128, 128, 3), np.uint8), img)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mask_ratio": 0.75, "patch_size": 32, "seed": 3}))
    assert run(["mask", "--config", str(cfg), "--image", str(img), "--out", str(tmp_path / "a.json")]) == 0
    plan = json.loads((tmp_path / "a.json").read_text())
    assert plan["ratio"] == 0.75 and len(plan["masked"]) == 12 and plan["seed"] == 3
    assert run(["mask", "--config", str(cfg), "--ratio", "0.5", "--image", str(img), "--out", str(tmp_path / "b.json")]) == 0
    assert len(json.loads((tmp_path / "b.json").read_text())["masked"]) == 8


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    img = tmp_path / "img.png"
    from detkit.data_io import save_image

    save_image(np.zeros((64, 64, 3), np.uint8), img)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3}))
    monkeypatch.setenv("DETKIT_SEED", "42")
    assert run(["mask", "--config", str(cfg), "--image", str(img), "--patch", "8", "--out", str(tmp_path / "p.json")]) == 0
    assert json.loads((tmp_path / "p.json").read_text())["seed"] == 42
    assert run(["mask", "--config", str(cfg), "--seed", "7", "--image", str(img), "--patch", "8", "--out", str(tmp_path / "q.json")]) == 0
    assert json.loads((tmp_path / "q.json").read_text())["seed"] == 7


def test_mask_viz(tmp_path, monkeypatch):
    monkeypatch.delenv("DETKIT_SEED", raising=False)
    img = FIX / "images" / "img_2.png"
    code = run(["mask", "--image", str(img), "--ratio", "0.60", "--patch", "40", "--mode", "cut",
                "--region", "0,0,0.8,0.8", "--seed", "1", "--out", str(tmp_path / "p.json"), "--viz", str(tmp_path / "v.png")])
    assert code == 0
    plan = json.loads((tmp_path / "p.json").read_text())
    assert (plan["grid_w"], plan["grid_h"]) == (4, 4) and len(plan["masked"]) == 10
    viz = load_image(tmp_path / "v.png")
    src = load_image(img)
    gray = (viz != src).any(-1)
    assert gray.sum() <= 10 * 40 * 40 and (viz[gray] == 128).all()


def test_mask_region_too_small(tmp_path):
    code = run(["mask", "--image", str(FIX / "images" / "img_1.png"), "--mode", "cut", "--region", "0,0,0.1,0.1",
                "--out", str(tmp_path / "p.json")])
    assert code == 1


def test_augment(tmp_path, monkeypatch):
    monkeypatch.setenv("DETKIT_SEED", "42")
    out = tmp_path / "aug"
    code = run(["augment", "--annotations", ANN, "--images", str(FIX / "images"), "--out", str(out), "--n", "5", "--size", "96"])
    assert code == 0
    ann = json.loads((out / "annotations.json").read_text())
    assert len(ann["images"]) == 5
    for im in ann["images"]:
        assert load_image(out / im["file_name"]).shape == (96, 96, 3)
    for a in ann["annotations"]:
        x, y, w, h = a["bbox"]
        assert 0 <= x and 0 <= y and x + w <= 96 + 1e-9 and y + h <= 96 + 1e-9 and w > 0 and h > 0


def test_select(tmp_path, capsys):
    reports = tmp_path / "reports"
    reports.mkdir()
    for mid, view in enumerate(range(4)):
        assert run(["eval", "--results", str(FIX / f"model0_view{view}.json"), "--annotations", ANN,
                    "--model-id", str(mid), "--out", str(reports / f"m{mid}.json")]) == 0
    capsys.readouterr()
    code = run(["select", "--reports", str(reports), "--k", "2", "--out", str(tmp_path / "models.txt"),
                "--figure", str(tmp_path / "rank.png")])
    assert code == 0
    chosen = (tmp_path / "models.txt").read_text().split()
    aps = {m: json.loads((reports / f"m{m}.json").read_text())["ap"] for m in range(4)}
    assert [int(c) for c in chosen] == sorted(aps, key=lambda m: (-aps[m], m))[:2]
    assert capsys.readouterr().out.split() == chosen
    assert (tmp_path / "rank.png").exists()


def test_tta_merge_concat_identity_view(tmp_path):
    # with only the identity view and no fusion, tta-merge is a plain copy
    views = tmp_path / "views.json"
    views.write_text('[{"kind": "identity"}]')
    out = tmp_path / "m.json"
    assert run(["tta-merge", "--results", str(FIX / "model0_view0.json"), "--views", str(views),
                "--annotations", ANN, "--concat", "--out", str(out)]) == 0
    got = sorted(json.loads(out.read_text()), key=lambda r: (r["image_id"], -r["score"]))
    want = sorted(json.loads((FIX / "model0_view0.json").read_text()), key=lambda r: (r["image_id"], -r["score"]))
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g["category_id"] == w["category_id"] and g["score"] == w["score"]
        np.testing.assert_allclose(g["bbox"], w["bbox"], atol=1e-6)


def test_golden_report(tmp_path):
    report = run_pipeline(FIX, tmp_path)
    assert report.read_bytes() == (FIX / "golden_report.json").read_bytes()


def test_entry_point():
    proc = subprocess.run([sys.executable, "-m", "detkit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "detkit" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "detkit", "nosuchcommand"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stdout == ""
