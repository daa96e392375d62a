import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_reference, write_mesh_files
from retexkit.cli import main, parse_size, resolve_threads
from retexkit.conditioning import deserialize_sample, read_tensor
from retexkit.imaging import load_image, save_clip, save_image, save_mask
from retexkit.metrics import validate_report


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    obj = write_mesh_files(root / "meshes")
    out = root / "pairs"
    assert run("render-pairs", obj, "--out", out, "--pairs-per-mesh", 2, "--frames", 5,
               "--size", "64x48", "--seed", 3) == 0
    return root, obj, out


@pytest.fixture
def reference_files(tmp_path, rng):
    img, mask = random_reference(rng, 60, 60)
    save_image(tmp_path / "ref.png", img)
    save_mask(tmp_path / "ref_mask.png", mask)
    return tmp_path / "ref.png", tmp_path / "ref_mask.png"


def lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def test_parse_size_and_threads(monkeypatch):
    assert parse_size("64x48") == (64, 48)
    monkeypatch.setenv("RETEXKIT_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.delenv("RETEXKIT_THREADS")
    assert resolve_threads(None) == 1


def test_render_pairs_layout(rendered):
    _, _, out = rendered
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["samples"]) == 2
    assert (manifest["width"], manifest["height"], manifest["num_frames"]) == (64, 48, 5)
    for s in manifest["samples"]:
        for rel in s["paths"].values():
            meta = json.loads((out / rel / "clip.json").read_text())
            assert (meta["width"], meta["height"], meta["num_frames"]) == (64, 48, 5)
    stage = lines(out / "manifest.jsonl")[-1]
    assert stage["command"] == "render-pairs" and stage["seed"] == 3


def test_render_pairs_reproducible(rendered, tmp_path):
    _, obj, out = rendered
    again = tmp_path / "again"
    assert run("render-pairs", obj, "--out", again, "--pairs-per-mesh", 2, "--frames", 5,
               "--size", "64x48", "--seed", 3, "--threads", 2) == 0

    def digest(d):
        return hashlib.sha256((d / "manifest.json").read_bytes()).hexdigest()
    assert digest(again) == digest(out)
    a = load_image(out / "mesh0000_pair01" / "textured" / "f0003.png")
    b = load_image(again / "mesh0000_pair01" / "textured" / "f0003.png")
    assert np.array_equal(a, b)


def test_render_pairs_missing_mesh(tmp_path, capsys):
    missing = tmp_path / "nope.obj"
    assert run("render-pairs", missing, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


def test_jigsaw_full_fraction_and_defaults(reference_files, tmp_path):
    ref, mask = reference_files
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "full.png",
               "--patch-fraction", 1.0, "--canvas-width", 40) == 0
    assert load_image(tmp_path / "full.png").shape[1] == 40
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "j.png") == 0
    assert load_image(tmp_path / "j.png").shape[1] == 832
    stage = lines(tmp_path / "manifest.jsonl")[-1]
    assert stage["command"] == "jigsaw" and stage["seed"] == 0


def test_jigsaw_config_file_and_override(reference_files, tmp_path):
    ref, mask = reference_files
    (tmp_path / "cfg.json").write_text(json.dumps({"canvas_width": 50, "patch_fraction": 0.2}))
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "a.png",
               "--config", tmp_path / "cfg.json") == 0
    assert load_image(tmp_path / "a.png").shape[1] == 50
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "b.png",
               "--config", tmp_path / "cfg.json", "--canvas-width", 30) == 0
    assert load_image(tmp_path / "b.png").shape[1] == 30
    (tmp_path / "bad.json").write_text(json.dumps({"nonsense": 1}))
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "c.png",
               "--config", tmp_path / "bad.json") == 4


def test_jigsaw_empty_foreground_is_domain_error(tmp_path, rng):
    save_image(tmp_path / "r.png", rng.random((20, 20, 3)))
    save_mask(tmp_path / "m.png", np.zeros((20, 20), bool))
    assert run("jigsaw", "--reference", tmp_path / "r.png", "--mask", tmp_path / "m.png",
               "--out", tmp_path / "o.png") == 3


def test_jigsaw_bad_config_value(reference_files, tmp_path):
    ref, mask = reference_files
    assert run("jigsaw", "--reference", ref, "--mask", mask, "--out", tmp_path / "o.png",
               "--patch-fraction", 0) == 4


def assemble_args(sample, ref, mask, out, *extra):
    return ("assemble", "--source", sample / "textured", "--mask", sample / "coverage",
            "--untextured", sample / "untextured", "--reference", ref, "--ref-mask", mask,
            "--out", out, "--canvas-width", 64, *extra)


def test_assemble_roundtrip(rendered, reference_files, tmp_path):
    _, _, out = rendered
    ref, mask = reference_files
    dest = tmp_path / "s"
    assert run(*assemble_args(out / "mesh0000_pair00", ref, mask, dest, "--drop-prob", 0,
                              "--verify")) == 0
    packed = read_tensor(dest / "conditions.rtk")
    assert packed.shape == (5, 48, 64, 7)
    sample = deserialize_sample(dest)
    assert not sample.dropped and sample.reference.shape[1] == 64
    meta = json.loads((dest / "sample.json").read_text())
    assert meta["seed"] == 0


def test_assemble_dropout_recorded(rendered, reference_files, tmp_path):
    _, _, out = rendered
    ref, mask = reference_files
    dest = tmp_path / "s"
    assert run(*assemble_args(out / "mesh0000_pair00", ref, mask, dest, "--drop-prob", 1)) == 0
    sample = deserialize_sample(dest)
    assert sample.dropped and (sample.reference == 1).all() and (sample.mask_clip == 0).all()
    assert json.loads((dest / "sample.json").read_text())["dropped"] is True


def test_assemble_dimension_mismatch(rendered, reference_files, tmp_path, rng):
    _, _, out = rendered
    ref, mask = reference_files
    save_clip(tmp_path / "small", rng.random((5, 40, 64, 3)))
    args = list(assemble_args(out / "mesh0000_pair00", ref, mask, tmp_path / "s"))
    args[args.index("--untextured") + 1] = tmp_path / "small"
    assert run(*args) == 4


def test_evaluate_identity_and_null_slots(rendered, tmp_path):
    _, _, out = rendered
    s = out / "mesh0000_pair00"
    report = tmp_path / "r.json"
    assert run("evaluate", "--source", s / "textured", "--edited", s / "textured",
               "--mask", s / "coverage", "--dilation", 2, "--flow-iterations", 30,
               "--out", report) == 0
    d = json.loads(report.read_text())
    validate_report(d)
    assert d["background"]["mse"] == 0 and d["background"]["psnr"] == 99
    assert d["background"]["ssim"] == pytest.approx(1.0)
    assert all(v is None for v in d["foreground"].values())
    assert d["metadata"]["frames_evaluated"] == 5 and d["motion"]["ewarp"] >= 0


def test_evaluate_with_embeddings(rendered, tmp_path):
    _, _, out = rendered
    s = out / "mesh0000_pair00"
    (tmp_path / "e.json").write_text(json.dumps({"clip": [1, 2, 3], "dino": [1, 0]}))
    (tmp_path / "r.json").write_text(json.dumps({"clip": [1, 2, 3], "dino": [0, 1]}))
    assert run("evaluate", "--source", s / "textured", "--edited", s / "untextured",
               "--mask", s / "coverage", "--dilation", 2, "--flow-iterations", 30,
               "--embeddings", tmp_path / "e.json", "--reference-embeddings",
               tmp_path / "r.json", "--out", tmp_path / "rep.json") == 0
    d = json.loads((tmp_path / "rep.json").read_text())
    assert d["foreground"]["clip_slot"] == pytest.approx(1.0)
    assert d["foreground"]["dino_slot"] == pytest.approx(0.0)
    assert d["foreground"]["lpips_slot"] is None


def test_evaluate_malformed_clip(rendered, tmp_path):
    _, _, out = rendered
    s = out / "mesh0000_pair00"
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "clip.json").write_text("{not json")
    assert run("evaluate", "--source", bad, "--edited", s / "textured", "--mask",
               s / "coverage", "--out", tmp_path / "r.json") == 2


def test_fmcheck(tmp_path, capsys):
    assert run("fmcheck", "--out", tmp_path) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and "euler round trip, 3 steps" in text
    assert all(r["passed"] for r in json.loads((tmp_path / "fmcheck.json").read_text()))
    assert run("fmcheck", "--steps", 7, "--trials", 2) == 0
    assert "7 steps" in capsys.readouterr().out
    assert run("fmcheck", "--inject-fault", 1e-3) != 0


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "retexkit.cli", "fmcheck", "--trials", "1"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "all invariants hold" in proc.stdout
