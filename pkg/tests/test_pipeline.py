import numpy as np
import pytest

from radar_cs import pipeline
from radar_cs.allocator import LpInfeasibleError, uniform_plan
from radar_cs.detection import Detection, ThresholdDetector
from radar_cs.geometry import CameraCalibration, RadarFrame, partition
from radar_cs.pipeline import (ConfigError, ImageDetection, PipelineConfig, anchor_schedule,
                               azimuth_categories, budget_slack, run, run_cfar_baseline,
                               run_compradimg, run_comprpd, run_rd, run_standard_cs)
from radar_cs.sensing import compress_frame, reconstruct_frame

BLOCK = (10, 16)
DET = ThresholdDetector(k=12, min_area=8, smooth=1.0)


class NoDetections:
    def detect(self, frame_index, image=None):
        return []


class FixedDetections:
    def __init__(self, boxes):
        self.boxes = boxes

    def detect(self, frame_index, image=None):
        return [Detection(b) for b in self.boxes]


def _cfg(**kw):
    kw.setdefault("block_shape", BLOCK)
    kw.setdefault("anchor_period", 4)
    return PipelineConfig(**kw)


@pytest.mark.parametrize("t,period,expected", [(21, 20, True), (3, 5, False), (1, 7, True),
                                               (6, 5, True), (20, 20, False)])
def test_anchor_schedule(t, period, expected):
    assert anchor_schedule(t, period) is expected


def test_anchor_schedule_rejects_zero():
    with pytest.raises(ValueError):
        anchor_schedule(0, 5)


def test_config_validation():
    with pytest.raises(ConfigError) as err:
        PipelineConfig(target_rate=0.5, anchor_rate=0.4)
    assert err.value.field == "target_rate"
    with pytest.raises(ConfigError) as err:
        PipelineConfig(mode="nope")
    assert err.value.field == "mode"
    with pytest.raises(ConfigError) as err:
        PipelineConfig.from_dict({"colour": 1})
    assert err.value.field == "colour"
    cfg = PipelineConfig(cameras=({"theta_min": -45, "theta_max": 45},), tracker={"min_age": 2})
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_comprpd_budget_accounting(small_scene):
    frames = small_scene.frames
    res = run_comprpd(frames, DET, _cfg())
    g = partition(frames[0], *BLOCK)
    n = frames[0].data.size
    assert [r.is_anchor for r in res] == [True, False, False, False, True, False, False, False]
    for r in res:
        rate = 0.4 if r.is_anchor else 0.2
        assert r.budget == pytest.approx(rate * n)
        assert r.measurements <= r.budget + g.n_blocks
    assert budget_slack(res, g) >= 0
    assert sum(r.budget for r in res) == pytest.approx(2 * 0.4 * n + 6 * 0.2 * n)


def test_empty_detections_give_uniform_plans(small_scene):
    res = run_comprpd(small_scene.frames, NoDetections(), _cfg())
    for r in res:
        assert np.ptp(r.plan.rates) == 0
        assert not r.important and r.final_bb == []


def test_rd_uses_raw_detections(small_scene):
    res = run_rd(small_scene.frames, DET, _cfg())
    for prev, cur in zip(res, res[1:]):
        if not cur.is_anchor:
            assert cur.final_bb == [d.bbox for d in prev.detections]


def test_tracker_lookahead_used_after_min_age():
    frames = [RadarFrame(np.zeros((100, 64)), 3.6, 0.5, t) for t in range(1, 9)]
    boxes = [(30.0, 30.0, 8.0, 8.0)]
    res = run_comprpd(frames, FixedDetections(boxes), _cfg(anchor_period=20))
    # static box: the lookahead equals the detection once the track is old enough
    for r in res[1:]:
        assert len(r.final_bb) == 1
        np.testing.assert_allclose(r.final_bb[0], boxes[0], atol=1e-6)
        assert r.important


def test_plan_locality(small_scene):
    res = run_comprpd(small_scene.frames, DET, _cfg())
    for r in res:
        if r.important:
            rates = r.plan.rates
            mask = np.zeros(rates.shape, bool)
            for idx in r.important:
                mask[idx] = True
            if (~mask).any():
                assert rates[mask].min() >= 1.1 * rates[~mask].max() - 1e-12


def test_determinism(small_scene):
    a = run_comprpd(small_scene.frames, DET, _cfg())
    b = run_comprpd(small_scene.frames, DET, _cfg())
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.reconstruction.data, rb.reconstruction.data)
        np.testing.assert_array_equal(ra.plan.rates, rb.plan.rates)


def test_anchor_independence(small_scene):
    frames = small_scene.frames
    res = run_comprpd(frames, DET, _cfg())
    f = frames[4]
    g = partition(f, *BLOCK)
    cfg = _cfg()
    alone = reconstruct_frame(compress_frame(f, g, uniform_plan(g, 0.4), "bpd", 0), g,
                              frame_index=f.frame_index, tol=cfg.solver_tol,
                              max_iter=cfg.solver_max_iter, strict=False)
    np.testing.assert_array_equal(res[4].reconstruction.data, alone.data)


def test_quantized_anchors(small_scene):
    res = run_comprpd(small_scene.frames, DET, _cfg(anchor_kind="quantize3bit"))
    for r in res:
        if r.is_anchor:
            assert r.plan is None and r.bits_per_sample == 3.0
            assert r.bits <= r.bit_budget
        else:
            assert r.bits_per_sample == pytest.approx(8 * r.measurements / r.samples)


def test_lp_failure_falls_back(monkeypatch, small_scene):
    def boom(inputs):
        raise LpInfeasibleError("forced", "f(x) <= 0")
    monkeypatch.setattr(pipeline, "solve_lp2", boom)
    res = run_comprpd(small_scene.frames[:3], DET, _cfg())
    assert [r.lp_fallback for r in res] == [False, True, True]
    assert np.all(res[1].plan.rates == 0.2)


def test_standard_cs_full_rate_identity(small_scene):
    res = run_standard_cs(small_scene.frames[:2], _cfg(target_rate=1.0, anchor_rate=1.0), DET)
    for r, f in zip(res, small_scene.frames):
        assert np.abs(r.reconstruction.data - f.data).max() <= 1e-8
        assert not r.is_anchor


def test_standard_cs_budget(small_scene):
    res = run_standard_cs(small_scene.frames[:2], _cfg(), DET)
    g = partition(small_scene.frames[0], *BLOCK)
    for r in res:
        assert abs(r.measurements - round(0.2 * r.samples)) <= g.n_blocks


def test_cfar_baseline_zero_noise_is_uniform():
    frames = [RadarFrame(np.zeros((100, 64)), 3.6, 0.5, t) for t in range(1, 4)]
    res = run_cfar_baseline(frames, _cfg(), NoDetections())
    assert all(not r.important for r in res)
    assert all(np.ptp(r.plan.rates) == 0 for r in res)


def test_cfar_baseline_flags_targets(small_scene):
    res = run_cfar_baseline(small_scene.frames[:3], _cfg(), DET)
    assert res[1].important


CAM = CameraCalibration(-45.0, 45.0, 0, 1280)


def test_azimuth_categories():
    g = partition(RadarFrame(np.zeros((100, 64)), 3.6, 0.5), *BLOCK)
    dets = [ImageDetection((620, 0, 40, 40), "pedestrian"), ImageDetection((620, 0, 40, 40), "car"),
            ImageDetection((1200, 0, 40, 40), "car"), ImageDetection((0, 0, 10, 10), "tree")]
    cats = azimuth_categories(dets, g, [CAM])
    assert cats[0] == "a1" and cats[1] == "a2"  # 42 deg lands in the 36-72 block
    assert cats.count("a3") == 8


def test_compradimg_pedestrian_at_boresight():
    frames = [RadarFrame(np.zeros((100, 64)), 3.6, 0.5, t) for t in range(1, 4)]
    dets = {1: [ImageDetection((620, 0, 40, 40), "pedestrian")],
            2: [ImageDetection((620, 0, 40, 40), "pedestrian")]}
    res = run_compradimg(frames, dets, _cfg(cameras=(CAM,)), NoDetections())
    rates = res[1].plan.rates
    r1 = pipeline.near_range_blocks(_cfg(), partition(frames[0], *BLOCK))
    assert rates[0, 0] == pytest.approx(3 * rates[1, 0])
    assert np.all(rates[:, r1:] <= 0.025 + 1e-12)


def test_compradimg_without_priors():
    frames = [RadarFrame(np.zeros((100, 64)), 3.6, 0.5, t) for t in range(1, 3)]
    res = run_compradimg(frames, {}, _cfg(cameras=(CAM,)), NoDetections())
    rates = res[1].plan.rates
    assert len(np.unique(rates[:, 0])) == 1
    assert res[1].measurements <= res[1].budget + 40


def test_compradimg_requires_camera(small_scene):
    with pytest.raises(ConfigError):
        run_compradimg(small_scene.frames, {}, _cfg())


def test_run_dispatch(small_scene):
    res = run(small_scene.frames[:2], _cfg(mode="standard-cs"), DET)
    assert len(res) == 2 and not res[0].is_anchor
