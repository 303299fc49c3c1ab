import hashlib
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from smallobj import __version__
from smallobj.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, run
from smallobj.det_eval import Detection, write_detections
from smallobj.voc_io import dataset_stats, load_annotations


def _digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def test_stats_csv_matches_library(voc_root, capsys):
    assert run(["stats", "--annotations", str(voc_root / "Annotations")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out == dataset_stats(load_annotations(voc_root / "Annotations")).to_csv()
    assert "car,small,1,1" in out
    assert "bird,small,1,0" in out


def test_stats_uses_environment_root_and_image_set(voc_root, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SMALLOBJ_VOC_ROOT", str(voc_root))
    code = run(["stats", "--image-set", str(voc_root / "trainval.txt"), "--out", str(tmp_path / "s"), "--label", "tv"])
    assert code == EXIT_OK
    assert "images 2 objects 5" in capsys.readouterr().out
    assert "| tv small |" in (tmp_path / "s" / "stats.md").read_text()
    assert (tmp_path / "s" / "stats.csv").read_text().startswith("class,size,all_count,non_difficult_count")


def test_split(voc_root, tmp_path, capsys):
    assert run(["split", "--annotations", str(voc_root / "Annotations"), "--size", "small",
                "--out", str(tmp_path / "sp")]) == EXIT_OK
    written = load_annotations(tmp_path / "sp" / "annotations")
    assert [a.image_id for a in written] == ["000001", "000002"]
    assert all(o.size.value == "small" for a in written for o in a.objects)


def _augment(voc_root, out, *extra):
    return run(["augment", "--annotations", str(voc_root / "Annotations"), "--images", str(voc_root / "JPEGImages"),
                "--out", str(out), *extra])


def _attempts(out):
    _, pasted, failed = (out / "manifest.csv").read_text().splitlines()[-1].split(",")
    return int(pasted) + int(failed)


def test_augment_reruns_are_byte_identical(voc_root, tmp_path, capsys):
    assert _augment(voc_root, tmp_path / "a", "--strategy", "2", "--seed", "5") == EXIT_OK
    assert _augment(voc_root, tmp_path / "b", "--strategy", "2", "--seed", "5", "--jobs", "3") == EXIT_OK
    assert "seed: 5" in capsys.readouterr().out
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    # 3 small objects x ratio 3 x 5 repetitions; large pool crops may not find room
    assert _attempts(tmp_path / "a") == 45


def test_augment_without_seed_prints_one(voc_root, tmp_path, capsys):
    assert _augment(voc_root, tmp_path / "a", "--strategy", "1") == EXIT_OK
    seed_line = capsys.readouterr().out.splitlines()[0]
    seed = int(seed_line.split(": ")[1])
    assert _augment(voc_root, tmp_path / "b", "--strategy", "1", "--seed", str(seed)) == EXIT_OK
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_augment_config_file_and_override(voc_root, tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("# custom\nstrategy = 2\nrepetitions = 2\nseed = 3\noversampling-ratio = 1\n")
    assert _augment(voc_root, tmp_path / "a", "--strategy-config", str(cfg)) == EXIT_OK
    assert _attempts(tmp_path / "a") == 6
    assert "seed: 3" in capsys.readouterr().out
    assert _augment(voc_root, tmp_path / "b", "--strategy-config", str(cfg), "--seed", "4") == EXIT_OK
    assert "seed: 4" in capsys.readouterr().out


def test_augment_conflicting_flags(voc_root, tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("repetitions = 2\n")
    assert _augment(voc_root, tmp_path / "a", "--strategy", "2", "--strategy-config", str(cfg)) == EXIT_USAGE
    assert "not allowed with" in capsys.readouterr().err


def test_augment_bad_config_key(voc_root, tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("colour = red\n")
    assert _augment(voc_root, tmp_path / "a", "--strategy-config", str(cfg)) == EXIT_VALIDATION


def test_augment_generated_pool_missing_class(voc_root, tmp_path, capsys):
    gen = tmp_path / "gen" / "bird"
    gen.mkdir(parents=True)
    Image.fromarray(np.zeros((32, 32, 3), np.uint8)).save(gen / "0.png")
    code = _augment(voc_root, tmp_path / "a", "--strategy", "4", "--seed", "1", "--generated-pool", str(tmp_path / "gen"))
    assert code == EXIT_VALIDATION
    assert "car (generated pool)" in capsys.readouterr().err
    assert not (tmp_path / "a" / "manifest.csv").exists()


def _perfect_detections(voc_root, path):
    dets = [Detection(a.image_id, o.class_name, 0.9, o.bbox)
            for a in load_annotations(voc_root / "Annotations") for o in a.objects if not o.difficult]
    write_detections(dets, path)


def test_eval_perfect_detector(voc_root, tmp_path, capsys):
    _perfect_detections(voc_root, tmp_path / "dets")
    args = ["eval", "--annotations", str(voc_root / "Annotations"), "--detections", str(tmp_path / "dets")]
    assert run(args + ["--out", str(tmp_path / "r")]) == EXIT_OK
    assert "mAP 100.00 (5 classes, 15 excluded)" in capsys.readouterr().out
    assert (tmp_path / "r" / "report.csv").read_text().splitlines()[-1] == "mAP,100.0000,6"
    assert run(args + ["--size", "small", "--out", str(tmp_path / "s")]) == EXIT_OK
    assert "mAP 100.00 (2 classes" in capsys.readouterr().out
    for name in ("report.csv", "report.md", "pr_curves.csv"):
        assert (tmp_path / "s" / name).is_file()


def test_eval_unknown_image_is_validation_error(voc_root, tmp_path, capsys):
    (tmp_path / "dets").mkdir()
    (tmp_path / "dets" / "car.txt").write_text("999999 0.5 1 1 10 10\n")
    code = run(["eval", "--annotations", str(voc_root / "Annotations"), "--detections", str(tmp_path / "dets")])
    assert code == EXIT_VALIDATION
    assert "999999" in capsys.readouterr().err


def test_gan_demo(tmp_path, capsys):
    args = ["gan-demo", "--dim", "2", "--offset", "1.0", "--samples", "200", "--iterations", "300", "--seed", "3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert run(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "seed: 3" in out and "gradient check error" in out
    history = (tmp_path / "a" / "history.csv").read_text().splitlines()
    assert history[0] == "iteration,d_loss,g_loss" and len(history) == 301
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


@pytest.mark.parametrize("argv, code", [
    ([], EXIT_USAGE),
    (["frobnicate"], EXIT_USAGE),
    (["stats"], EXIT_USAGE),
    (["stats", "--annotations", "/nonexistent/dir"], EXIT_IO),
    (["split", "--annotations", "/tmp", "--size", "huge", "--out", "/tmp/x"], EXIT_USAGE),
])
def test_exit_codes(argv, code, monkeypatch):
    monkeypatch.delenv("SMALLOBJ_VOC_ROOT", raising=False)
    assert run(argv) == code


def test_malformed_annotation_exit_code(tmp_path, capsys):
    (tmp_path / "bad.xml").write_text("<annotation><size>")
    assert run(["stats", "--annotations", str(tmp_path)]) == EXIT_VALIDATION
    assert "bad" in capsys.readouterr().err


def test_version(capsys):
    assert run(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "smallobj.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
