from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from smallobj.voc_io import AnnotatedObject, BoundingBox, ImageAnnotation, save_annotation

DATA = Path(__file__).parent / "data"

_acceptance = []


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def voc_000001():
    return (DATA / "000001.xml").read_text()


def scene(image_id, width, height, objects, color=(90, 120, 150)):
    """Annotation plus a flat-colour image whose objects are painted in distinct colours."""
    objs = []
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = color
    for k, (name, box, *flags) in enumerate(objects):
        bbox = BoundingBox(*box)
        difficult = bool(flags[0]) if flags else False
        objs.append(AnnotatedObject(name, bbox, difficult=difficult))
        image[bbox.ymin:bbox.ymax + 1, bbox.xmin:bbox.xmax + 1] = ((37 * k + 11) % 256, (91 * k + 7) % 256, 200)
    return ImageAnnotation(image_id, width, height, 3, tuple(objs)), image


@pytest.fixture
def voc_root(tmp_path):
    """Three-image VOC-style tree: Annotations/, JPEGImages/ (PNG) and a two-id trainval.txt."""
    root = tmp_path / "voc"
    (root / "Annotations").mkdir(parents=True)
    (root / "JPEGImages").mkdir()
    specs = [
        ("000001", 120, 100, [("car", (0, 0, 9, 9)), ("person", (30, 20, 99, 99)), ("bird", (100, 0, 109, 14), True)]),
        ("000002", 90, 80, [("car", (10, 10, 49, 49)), ("bus", (60, 60, 69, 69))]),
        ("000003", 96, 64, [("dog", (0, 0, 63, 63)), ("bird", (64, 0, 95, 40))]),
    ]
    for image_id, w, h, objs in specs:
        ann, img = scene(image_id, w, h, objs)
        save_annotation(ann, root / "Annotations")
        Image.fromarray(img).save(root / "JPEGImages" / f"{image_id}.png")
    (root / "trainval.txt").write_text("000001\n000002\n")
    return root


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((marker, report.outcome, report.nodeid))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    by_number = {}
    for (number, text), outcome, nodeid in _acceptance:
        by_number.setdefault((number, text), []).append(outcome)
    for (number, text), outcomes in sorted(by_number.items()):
        if any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {text}")
