"""Per-frame acquisition loops: prior-guided modes and their baselines.

Frames are numbered ``t = 1..T`` by their position in the input sequence.
Frame ``t`` is planned from what was seen on the reconstruction of frame
``t - 1``; anchor frames ignore priors and are acquired uniformly.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .allocator import (LpInfeasibleError, Lp2Inputs, SamplingPlan, lp1_categories, lp1_inputs,
                        lp2_categories, plan_from_solution, solve_lp1, solve_lp2, uniform_plan)
from .cfar import CfarParams, cfar_important_blocks
from .detection import Detection, ThresholdDetector
from .geometry import (BlockGrid, CameraCalibration, CartesianImage, GeometryError, RadarFrame,
                       cartesian_bbox_to_polar_block, image_bbox_to_azimuth,
                       mark_important_blocks, partition, polar_to_cartesian)
from .sensing import MatrixKind, compress_frame, quantize_frame, reconstruct_frame
from .tracking import Tracker, TrackerConfig, step_tracker

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    COMPRPD = "comprpd"
    COMPRADIMG = "compradimg"
    RD = "rd"
    STANDARD_CS = "standard-cs"
    CFAR = "cfar"


class AnchorKind(str, enum.Enum):
    CS = "cs"
    QUANTIZE3BIT = "quantize3bit"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class PipelineConfig:
    mode: Mode = Mode.COMPRPD
    target_rate: float = 0.2
    anchor_period: int = 20
    anchor_rate: float = 0.4
    anchor_kind: AnchorKind = AnchorKind.CS
    quant_bits: int = 3
    sample_bits: int = 8
    matrix_kind: MatrixKind = MatrixKind.BPD
    base_seed: int = 0
    block_shape: tuple = (20, 48)
    shadow: bool = True
    x1_upper: float = 0.55
    x2_lower: float = 0.07
    near_range_blocks: int | None = None
    cameras: tuple = ()
    cfar: CfarParams = field(default_factory=CfarParams)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    meters_per_pixel: float = 0.5
    solver_tol: float = 1e-2
    solver_max_iter: int = 3000

    def __post_init__(self):
        for name, enum_cls in (("mode", Mode), ("anchor_kind", AnchorKind),
                               ("matrix_kind", MatrixKind)):
            try:
                object.__setattr__(self, name, enum_cls(getattr(self, name)))
            except ValueError:
                choices = ", ".join(e.value for e in enum_cls)
                raise ConfigError(name, f"must be one of {choices}") from None
        if not 0.0 < self.target_rate <= self.anchor_rate <= 1.0:
            raise ConfigError("target_rate", "need 0 < target_rate <= anchor_rate <= 1")
        if self.anchor_period < 1:
            raise ConfigError("anchor_period", "must be >= 1")
        if not 1 <= self.quant_bits <= 16:
            raise ConfigError("quant_bits", "must lie in [1, 16]")
        if len(self.block_shape) != 2 or min(self.block_shape) < 1:
            raise ConfigError("block_shape", "must be two positive integers")
        if self.meters_per_pixel <= 0:
            raise ConfigError("meters_per_pixel", "must be positive")
        object.__setattr__(self, "block_shape", tuple(int(v) for v in self.block_shape))
        object.__setattr__(self, "cameras", tuple(
            c if isinstance(c, CameraCalibration) else CameraCalibration(**c)
            for c in self.cameras))
        if isinstance(self.cfar, Mapping):
            object.__setattr__(self, "cfar", CfarParams(**self.cfar))
        if isinstance(self.tracker, Mapping):
            object.__setattr__(self, "tracker", TrackerConfig(**self.tracker))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("mode", "anchor_kind", "matrix_kind"):
            d[k] = getattr(self, k).value
        d["block_shape"] = list(self.block_shape)
        d["cameras"] = [dataclasses.asdict(c) for c in self.cameras]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        return cls(**d)


@dataclass
class FrameResult:
    t: int
    reconstruction: RadarFrame
    plan: SamplingPlan | None
    measurements: int
    budget: float
    bits: float
    bit_budget: float
    is_anchor: bool = False
    lp_fallback: bool = False
    converged: bool = True
    final_bb: list = field(default_factory=list)
    important: frozenset = frozenset()
    detections: list = field(default_factory=list)

    @property
    def samples(self) -> int:
        return self.reconstruction.data.size

    @property
    def bits_per_sample(self) -> float:
        return self.bits / self.samples

    def budget_row(self) -> dict:
        return {
            "t": self.t,
            "frame_index": self.reconstruction.frame_index,
            "anchor": int(self.is_anchor),
            "measurements": self.measurements,
            "budget": round(self.budget, 6),
            "bits_per_sample": round(self.bits_per_sample, 6),
            "lp_fallback": int(self.lp_fallback),
            "converged": int(self.converged),
        }


def anchor_schedule(t: int, period: int) -> bool:
    """True for frames ``1, period + 1, 2 * period + 1, ...``."""
    if t < 1:
        raise ValueError("frame numbers start at 1")
    return (t - 1) % period == 0


def budget_slack(results: Sequence[FrameResult], grid: BlockGrid) -> float:
    """``sum(budget) + T * n_blocks - sum(measurements)``; non-negative when honoured."""
    return (sum(r.budget for r in results) + len(results) * grid.n_blocks
            - sum(r.measurements for r in results))


class _Loop:
    """Shared acquisition machinery for one stream."""

    def __init__(self, frames: Sequence[RadarFrame], config: PipelineConfig, detector=None):
        if not frames:
            raise ValueError("need at least one frame")
        self.frames = list(frames)
        self.config = config
        self.grid = partition(self.frames[0], *config.block_shape)
        self.detector = detector if detector is not None else ThresholdDetector()
        first = self.frames[0]
        self.cart_side = int(2 * math.ceil(first.max_range / config.meters_per_pixel)) + 1

    # -- rendering / detection
    def cartesian(self, frame: RadarFrame) -> CartesianImage:
        return polar_to_cartesian(frame, self.cart_side, self.config.meters_per_pixel)

    def detect(self, frame: RadarFrame) -> list[Detection]:
        return list(self.detector.detect(frame.frame_index, self.cartesian(frame)))

    def blocks_for(self, boxes) -> list:
        geom = _GeometryOnly(self.cart_side, self.config.meters_per_pixel)
        out = []
        for b in boxes:
            try:
                out.append(cartesian_bbox_to_polar_block(b, geom, self.grid))
            except GeometryError:
                logger.debug("box %s lies outside the rendering, skipped", b)
        return out

    # -- acquisition
    def acquire(self, t: int, frame: RadarFrame, plan: SamplingPlan, *, anchor=False,
                fallback=False, final_bb=(), important=frozenset()) -> FrameResult:
        cfg = self.config
        sets = compress_frame(frame, self.grid, plan, cfg.matrix_kind, cfg.base_seed)
        recon, info = reconstruct_frame(sets, self.grid, peak_value=frame.peak_value,
                                        frame_index=frame.frame_index, tol=cfg.solver_tol,
                                        max_iter=cfg.solver_max_iter, strict=False,
                                        return_info=True)
        if not info.all_converged:
            logger.warning("frame %d: %d block(s) stopped at the iteration cap", t,
                           int((~info.converged).sum()))
        m = sum(s.m for s in sets)
        rate = cfg.anchor_rate if anchor else cfg.target_rate
        n = frame.data.size
        return FrameResult(t, recon, plan, m, rate * n, m * cfg.sample_bits,
                           rate * n * cfg.sample_bits, anchor, fallback, info.all_converged,
                           list(final_bb), frozenset(important))

    def anchor(self, t: int, frame: RadarFrame) -> FrameResult:
        cfg = self.config
        n = frame.data.size
        if cfg.anchor_kind is AnchorKind.QUANTIZE3BIT:
            recon = quantize_frame(frame, cfg.quant_bits)
            return FrameResult(t, recon, None, n, n, n * cfg.quant_bits,
                               cfg.anchor_rate * n * cfg.sample_bits, is_anchor=True)
        return self.acquire(t, frame, uniform_plan(self.grid, cfg.anchor_rate, anchor=True),
                            anchor=True)

    def lp2_plan(self, important) -> tuple[SamplingPlan, bool]:
        cfg = self.config
        inputs = Lp2Inputs.for_target(len(important), self.grid, cfg.target_rate,
                                      cfg.x1_upper, cfg.x2_lower)
        try:
            x1, x2 = solve_lp2(inputs)
        except LpInfeasibleError as exc:
            logger.warning("LP infeasible (%s); falling back to a uniform plan", exc.constraint)
            return uniform_plan(self.grid, cfg.target_rate, fallback=True), True
        labels = lp2_categories(self.grid, important)
        plan = plan_from_solution(self.grid, labels, {"important": x1, "other": x2},
                                  lp="radar", I=inputs.I, O=inputs.O, x1=x1, x2=x2)
        return plan, False


@dataclass(frozen=True)
class _GeometryOnly:
    """Stand-in for a Cartesian image when only its geometry is needed."""

    side: int
    meters_per_pixel: float

    @property
    def center(self) -> float:
        return self.side / 2.0

    def to_metric(self, px, py):
        return ((px - self.center) * self.meters_per_pixel,
                (self.center - py) * self.meters_per_pixel)


def run_comprpd(frames: Sequence[RadarFrame], provider=None,
                config: PipelineConfig = PipelineConfig(), *, use_tracker: bool = True,
                tracker_log: list | None = None) -> list[FrameResult]:
    """Radar-only prior-guided acquisition (detections + Kalman lookahead).

    ``use_tracker=False`` gives the detection-only variant.
    """
    loop = _Loop(frames, config, provider)
    tracker = Tracker(config.tracker)
    period = config.anchor_period
    results: list[FrameResult] = []
    for t, frame in enumerate(loop.frames, 1):
        if anchor_schedule(t, period):
            res = loop.anchor(t, frame)
        else:
            boxes = [d.bbox for d in results[-1].detections]
            if use_tracker:
                final = step_tracker(tracker, boxes, anchor_schedule(t - 1, period))
                if tracker_log is not None:
                    tracker_log.append((frame.frame_index, tracker.snapshot()))
            else:
                final = boxes
            important = mark_important_blocks(loop.blocks_for(final), loop.grid, config.shadow)
            plan, fallback = loop.lp2_plan(important)
            res = loop.acquire(t, frame, plan, fallback=fallback, final_bb=final,
                               important=important)
        res.detections = loop.detect(res.reconstruction)
        results.append(res)
    return results


def run_rd(frames, provider=None, config: PipelineConfig = PipelineConfig()):
    return run_comprpd(frames, provider, config, use_tracker=False)


def run_standard_cs(frames: Sequence[RadarFrame], config: PipelineConfig = PipelineConfig(),
                    provider=None) -> list[FrameResult]:
    """Uniform ``target_rate`` on every frame, no priors and no anchors."""
    loop = _Loop(frames, config, provider)
    results = []
    for t, frame in enumerate(loop.frames, 1):
        res = loop.acquire(t, frame, uniform_plan(loop.grid, config.target_rate))
        res.detections = loop.detect(res.reconstruction)
        results.append(res)
    return results


def run_cfar_baseline(frames: Sequence[RadarFrame], config: PipelineConfig = PipelineConfig(),
                      provider=None) -> list[FrameResult]:
    """Blocks flagged by CFAR on the previous reconstruction become important."""
    loop = _Loop(frames, config, provider)
    results: list[FrameResult] = []
    for t, frame in enumerate(loop.frames, 1):
        if anchor_schedule(t, config.anchor_period):
            res = loop.anchor(t, frame)
        else:
            important = cfar_important_blocks(results[-1].reconstruction, loop.grid, config.cfar)
            plan, fallback = loop.lp2_plan(important)
            res = loop.acquire(t, frame, plan, fallback=fallback, important=important)
        res.detections = loop.detect(res.reconstruction)
        results.append(res)
    return results


@dataclass(frozen=True)
class ImageDetection:
    """Camera detection: image-space box, object class and camera number."""

    bbox: tuple
    label: str = "car"
    camera: int = 0


_A1_LABELS = {"pedestrian", "bicycle", "person", "cyclist"}
_A2_LABELS = {"car", "vehicle", "van", "truck", "bus"}


def azimuth_categories(image_detections, grid: BlockGrid, cameras) -> list[str]:
    """``a1`` (pedestrian/bicycle) beats ``a2`` (car), everything else is ``a3``."""
    cats = ["a3"] * grid.n_az_blocks
    for det in image_detections:
        cam = cameras[det.camera]
        _, block = image_bbox_to_azimuth(det.bbox, cam, grid.deg_per_az_block)
        if det.label in _A1_LABELS:
            cats[block] = "a1"
        elif det.label in _A2_LABELS and cats[block] != "a1":
            cats[block] = "a2"
    return cats


def near_range_blocks(config: PipelineConfig, grid: BlockGrid) -> int:
    """Number of near-range blocks; 18 of 37 scaled to the grid unless configured."""
    if config.near_range_blocks is not None:
        return min(max(config.near_range_blocks, 0), grid.n_range_blocks)
    return min(grid.n_range_blocks, max(1, round(grid.n_range_blocks * 18 / 37)))


def run_compradimg(frames: Sequence[RadarFrame], image_detections: Mapping[int, Sequence],
                   config: PipelineConfig = PipelineConfig(), provider=None) -> list[FrameResult]:
    """Camera + radar prior-guided acquisition.

    ``image_detections`` maps frame index to :class:`ImageDetection` lists; the
    detections of frame ``t - 1`` and CFAR on its reconstruction plan frame ``t``.
    """
    if not config.cameras:
        raise ConfigError("cameras", "at least one camera calibration is required")
    loop = _Loop(frames, config, provider)
    grid = loop.grid
    r1 = near_range_blocks(config, grid)
    r2 = grid.n_range_blocks - r1
    results: list[FrameResult] = []
    for t, frame in enumerate(loop.frames, 1):
        if anchor_schedule(t, config.anchor_period):
            res = loop.anchor(t, frame)
        else:
            prev = results[-1].reconstruction
            cats = azimuth_categories(image_detections.get(prev.frame_index, ()), grid,
                                      config.cameras)
            flagged = cfar_important_blocks(prev, grid, config.cfar)
            inputs, promoted = lp1_inputs(cats, r1, r2, flagged, config.target_rate)
            try:
                x = solve_lp1(inputs)
                labels = lp1_categories(grid, cats, r1, promoted)
                plan = plan_from_solution(grid, labels, dict(zip(("x1", "x2", "x3", "x4"), x)),
                                          lp="image+radar", a=[inputs.a1, inputs.a2, inputs.a3],
                                          b=[inputs.b1, inputs.b2, inputs.b3], x=list(x))
                fallback = False
            except LpInfeasibleError as exc:
                logger.warning("LP infeasible (%s); falling back to a uniform plan",
                               exc.constraint)
                plan, fallback = uniform_plan(grid, config.target_rate, fallback=True), True
            important = frozenset(promoted) | frozenset(
                idx for idx in grid if idx.rng < r1 and cats[idx.az] == "a1")
            res = loop.acquire(t, frame, plan, fallback=fallback, important=important)
        res.detections = loop.detect(res.reconstruction)
        results.append(res)
    return results


def run(frames, config: PipelineConfig, provider=None, image_detections=None,
        tracker_log=None) -> list[FrameResult]:
    """Dispatch on ``config.mode``."""
    mode = config.mode
    if mode is Mode.COMPRPD:
        return run_comprpd(frames, provider, config, tracker_log=tracker_log)
    if mode is Mode.RD:
        return run_rd(frames, provider, config)
    if mode is Mode.STANDARD_CS:
        return run_standard_cs(frames, config, provider)
    if mode is Mode.CFAR:
        return run_cfar_baseline(frames, config, provider)
    return run_compradimg(frames, image_detections or {}, config, provider)
