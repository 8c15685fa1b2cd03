import json
import shutil

import pytest

from ihforest.cli import build_parser, main

FAST = {
    "views": {"roll": [-30.0], "pitch": [30.0], "yaw": [0.0]},
    "descriptor": {"N": 40, "schedule": [1.0, 1.3]},
    "forest": {"n_trees": 1, "max_depth": 8, "n_candidate_splits": 10, "subsample_fraction": 1.0},
    "register": {"stride": 3},
    "scenes": {"n_scenes": 2},
}


def run(wd, *argv):
    return main(["--workdir", str(wd), "--config", "fast.json", *argv])


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def wd(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.json").write_text(json.dumps(FAST))
    assert run(d, "synth", "--out", "data") == 0
    assert run(d, "train", "--views", "data/views", "--out", "f.ihf") == 0
    return d


def test_help_for_every_subcommand(capsys):
    for cmd in ("synth", "train", "register", "evaluate", "inspect"):
        with pytest.raises(SystemExit) as e:
            build_parser().parse_args([cmd, "--help"])
        assert e.value.code == 0
        assert "usage:" in capsys.readouterr().out


def test_bad_flag_is_user_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == 1
    assert "usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_synth_writes_one_view_per_grid_rotation(wd):
    views = sorted((wd / "data" / "views").glob("*.png"))
    assert [p.name for p in views] == ["view_000.png"]
    meta = json.loads((wd / "data" / "views" / "view_000.json").read_text())
    assert meta["pose"]["translation"] == [0.0, 0.0, 750.0]
    assert len(list((wd / "data" / "scenes").glob("*.json"))) == 2


def test_synth_is_deterministic(wd):
    assert run(wd, "synth", "--out", "again") == 0
    assert tree_bytes(wd / "again") == tree_bytes(wd / "data")


def test_synth_missing_mesh(wd, capsys):
    assert run(wd, "synth", "--mesh", "nowhere.obj", "--out", "x") == 1
    assert "error" in capsys.readouterr().err


def test_train_rerun_is_byte_identical(wd):
    assert run(wd, "train", "--views", "data/views", "--out", "g.ihf") == 0
    assert (wd / "g.ihf").read_bytes() == (wd / "f.ihf").read_bytes()


def test_train_bad_dir(wd):
    assert run(wd, "train", "--views", "nope") == 1
    (wd / "empty").mkdir(exist_ok=True)
    assert run(wd, "train", "--views", "empty") == 1


@pytest.mark.parametrize("k_max", [0, 5])
def test_register_emits_k_plus_one(wd, k_max):
    meta = json.loads((wd / "data" / "scenes" / "scene_000.json").read_text())
    bbox = ",".join(map(str, meta["bbox"]))
    out = f"r{k_max}.json"
    assert run(wd, "register", "--forest", "f.ihf", "--image", "data/scenes/scene_000.png", "--bbox", bbox,
               "--out", out, "--set", f"register.k_max={k_max}") == 0
    rec = json.loads((wd / out).read_text())
    assert rec["scene_id"] == "scene_000" and not rec["truncated"]
    assert len(rec["iterations"]) == k_max + 1


def test_register_bbox_outside(wd, capsys):
    assert run(wd, "register", "--forest", "f.ihf", "--image", "data/scenes/scene_000.png",
               "--bbox", "600,400,100,100") == 1
    assert "outside" in capsys.readouterr().err
    assert run(wd, "register", "--forest", "f.ihf", "--image", "data/scenes/scene_000.png") == 1
    assert run(wd, "register", "--forest", "f.ihf", "--dataset", "data/scenes") == 1


def perfect_results(src, dst):
    dst.mkdir(exist_ok=True)
    for js in sorted(src.glob("*.json")):
        pose = json.loads(js.read_text())["pose"]
        it = {"center_mm": pose["translation"], "theta_rad": pose["rotation"], "confidence": 1.0}
        (dst / js.name).write_text(json.dumps({"iterations": [it]}))


def test_evaluate_perfect_results(wd):
    perfect_results(wd / "data" / "scenes", wd / "perfect")
    assert run(wd, "evaluate", "--results", "perfect", "--gt", "data/scenes", "--out", "rep") == 0
    s = json.loads((wd / "rep" / "summary.json").read_text())
    assert all(v["success_rate"] == 1.0 for v in s["per_k"].values())
    first = tree_bytes(wd / "rep")
    assert run(wd, "evaluate", "--results", "perfect", "--gt", "data/scenes", "--out", "rep") == 0
    assert tree_bytes(wd / "rep") == first


def test_evaluate_mismatched_ids(wd, capsys):
    perfect_results(wd / "data" / "scenes", wd / "partial")
    (wd / "partial" / "scene_001.json").unlink()
    assert run(wd, "evaluate", "--results", "partial", "--gt", "data/scenes") == 1
    assert "differ" in capsys.readouterr().err


def test_inspect(wd, capsys):
    assert run(wd, "inspect", "f.ihf", "--json") == 0
    s = json.loads(capsys.readouterr().out)
    assert s["n_trees"] == 1 and s["trees"][0]["depth"] <= 8
    assert s["descriptor"]["N"] == 40
    assert run(wd, "inspect", "f.ihf") == 0
    assert "1 trees" in capsys.readouterr().out


def test_inspect_corrupt(wd, capsys):
    (wd / "bad.ihf").write_bytes(b"NOTAFRST" + (wd / "f.ihf").read_bytes()[8:])
    assert run(wd, "inspect", "bad.ihf") == 1
    assert "error" in capsys.readouterr().err


def test_global_flags_after_subcommand(wd):
    dst = wd / "late"
    shutil.rmtree(dst, ignore_errors=True)
    assert main(["synth", "--workdir", str(wd), "--config", "fast.json", "--what", "views", "--out", "late"]) == 0
    assert (dst / "views" / "view_000.png").exists()
