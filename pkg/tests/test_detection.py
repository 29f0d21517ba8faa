import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radar_cs.detection import (Detection, FileDetections, ThresholdDetector, detect, read_jsonl,
                                write_jsonl)
from radar_cs.geometry import CartesianImage


def _image(px):
    return CartesianImage(np.asarray(px, float), 0.5)


def test_zero_image_has_no_detections():
    assert ThresholdDetector().detect(0, _image(np.zeros((41, 41)))) == []


def test_single_blob():
    px = np.zeros((41, 41))
    px[10:15, 20:25] = 200.0
    (d,) = ThresholdDetector().detect(0, _image(px))
    assert d.bbox == (20.0, 10.0, 5.0, 5.0)
    assert d.score == pytest.approx(200 / 255)


def test_min_area_filter():
    px = np.zeros((41, 41))
    px[5, 5] = 200.0
    px[20:23, 20:23] = 200.0
    dets = ThresholdDetector(min_area=4).detect(0, _image(px))
    assert [d.bbox for d in dets] == [(20.0, 20.0, 3.0, 3.0)]


def test_eight_connectivity():
    px = np.zeros((41, 41))
    px[10:12, 10:12] = 200.0
    px[12:14, 12:14] = 200.0  # touches diagonally
    dets = ThresholdDetector(min_area=1).detect(0, _image(px))
    assert len(dets) == 1 and dets[0].bbox == (10.0, 10.0, 4.0, 4.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 28), st.integers(8, 28), st.integers(-4, 4), st.integers(-4, 4))
def test_translation_equivariance(r, c, dr, dc):
    rng = np.random.default_rng(0)
    base = rng.exponential(5.0, (41, 41))
    a, b = base.copy(), base.copy()
    a[r:r + 3, c:c + 3] = 250.0
    b[r + dr:r + dr + 3, c + dc:c + dc + 3] = 250.0
    det = ThresholdDetector(k=20, min_area=9)
    da, db = det.detect(0, _image(a)), det.detect(0, _image(b))
    assert len(da) == len(db) == 1
    assert db[0].bbox[0] - da[0].bbox[0] == dc and db[0].bbox[1] - da[0].bbox[1] == dr


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_boxes_inside_image(seed):
    px = np.random.default_rng(seed).exponential(10.0, (33, 33))
    for d in ThresholdDetector(k=3, min_area=1).detect(0, _image(px)):
        x, y, w, h = d.bbox
        assert x >= 0 and y >= 0 and x + w <= 33 and y + h <= 33


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection((0, 0, 0, 1))
    with pytest.raises(ValueError):
        Detection((0, 0, 1, 1), score=1.5)


def test_file_round_trip_and_passthrough(tmp_path, caplog):
    path = tmp_path / "d.jsonl"
    dets = {7: [Detection((1, 2, 3, 4), 0.9), Detection((5, 6, 7, 8), 0.4)]}
    write_jsonl(path, dets)
    provider = FileDetections(path)
    assert detect(provider, 7) == dets[7]
    with caplog.at_level("WARNING"):
        assert provider.detect(8) == []
    assert "no detections for frame 8" in caplog.text


def test_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        FileDetections(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"frame": 1, "bbox": [0, 0, 1, 1]}) + "\n{\"frame\": 2}\n")
    with pytest.raises(ValueError, match=":2:"):
        read_jsonl(bad)


def test_ground_truth_schema_without_score(tmp_path):
    path = tmp_path / "gt.jsonl"
    write_jsonl(path, {3: [Detection((1, 1, 2, 2))]}, with_score=False)
    rec = json.loads(path.read_text())
    assert "score" not in rec and rec["class"] == "vehicle"
    assert read_jsonl(path)[3][0].score == 1.0
