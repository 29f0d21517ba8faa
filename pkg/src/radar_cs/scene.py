"""Synthetic range-azimuth sequences with moving targets over exponential clutter."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .detection import Detection
from .geometry import FULL_CIRCLE, CartesianImage, RadarFrame, polar_to_cartesian


@dataclass(frozen=True)
class Target:
    position: tuple  # (east, north) metres at frame 1
    velocity: tuple = (0.0, 0.0)  # metres per frame
    reflectivity: float = 150.0
    extent: float = 4.0  # metres, side of the square footprint

    def at(self, t: int) -> tuple[float, float]:
        return (self.position[0] + (t - 1) * self.velocity[0],
                self.position[1] + (t - 1) * self.velocity[1])


@dataclass(frozen=True)
class SceneConfig:
    n_frames: int = 40
    shape: tuple = (120, 192)
    range_res: float = 0.5
    targets: tuple = ()
    clutter_mean: float = 10.0
    seed: int = 0
    peak_value: float = 255.0
    occlusion: bool = False
    shadow_gain: float = 0.05
    meters_per_pixel: float = 0.5

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        object.__setattr__(self, "targets", tuple(
            t if isinstance(t, Target) else Target(**t) for t in self.targets))
        max_range = self.shape[1] * self.range_res
        for k, tg in enumerate(self.targets):
            if not any(math.hypot(*tg.at(t)) < max_range for t in range(1, self.n_frames + 1)):
                raise ValueError(f"target {k} never comes within the maximum range")

    @property
    def azimuth_res(self) -> float:
        return FULL_CIRCLE / self.shape[0]

    @property
    def max_range(self) -> float:
        return self.shape[1] * self.range_res

    @property
    def cart_side(self) -> int:
        return int(2 * math.ceil(self.max_range / self.meters_per_pixel)) + 1

    def to_json(self) -> str:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        d["shape"] = tuple(d.get("shape", cls.shape))
        d["targets"] = tuple(Target(tuple(t["position"]), tuple(t.get("velocity", (0, 0))),
                                    t.get("reflectivity", 150.0), t.get("extent", 4.0))
                             for t in d.get("targets", ()))
        return cls(**d)


@dataclass
class Scene:
    config: SceneConfig
    frames: list = field(default_factory=list)
    ground_truth: dict = field(default_factory=dict)

    def cartesian(self, frame: RadarFrame) -> CartesianImage:
        return polar_to_cartesian(frame, self.config.cart_side, self.config.meters_per_pixel)


def _cell_coordinates(cfg: SceneConfig):
    rows, cols = cfg.shape
    az = np.radians((np.arange(rows) + 0.5) * cfg.azimuth_res)[:, None]
    rng = ((np.arange(cols) + 0.5) * cfg.range_res)[None, :]
    return rng * np.sin(az), rng * np.cos(az), np.degrees(az), rng


def _angle_diff(a, b):
    return np.abs((a - b + 180.0) % 360.0 - 180.0)


def gen_scene(cfg: SceneConfig) -> Scene:
    """Render ``cfg.n_frames`` polar frames and their Cartesian ground truth.

    Targets are Gaussian blobs (standard deviation a third of the extent).
    With ``occlusion`` enabled, everything radially behind a target within its
    angular footprint is attenuated by ``shadow_gain`` and targets whose centre
    lies in such a shadow are left out of the ground truth.
    """
    rng = np.random.default_rng(cfg.seed)
    east, north, az_deg, r_m = _cell_coordinates(cfg)
    scene = Scene(cfg)
    side = cfg.cart_side
    centre = side / 2.0
    for t in range(1, cfg.n_frames + 1):
        data = rng.exponential(cfg.clutter_mean, size=cfg.shape)
        positions = [tg.at(t) for tg in cfg.targets]
        for tg, (e, n) in zip(cfg.targets, positions):
            sigma = tg.extent / 3.0
            data += tg.reflectivity * np.exp(-((east - e) ** 2 + (north - n) ** 2) / (2 * sigma**2))
        shadows = []
        if cfg.occlusion:
            for tg, (e, n) in zip(cfg.targets, positions):
                rt = math.hypot(e, n)
                if rt == 0:
                    continue
                bearing = math.degrees(math.atan2(e, n)) % FULL_CIRCLE
                half = math.degrees(math.atan2(tg.extent / 2.0, rt))
                shadows.append((rt + tg.extent / 2.0, bearing, half))
                behind = (r_m > rt + tg.extent / 2.0) & (_angle_diff(az_deg, bearing) < half)
                data = np.where(behind, data * cfg.shadow_gain, data)
        data = np.clip(data, 0.0, cfg.peak_value)
        scene.frames.append(RadarFrame(data, cfg.azimuth_res, cfg.range_res, t, cfg.peak_value))

        gts = []
        for tg, (e, n) in zip(cfg.targets, positions):
            rt = math.hypot(e, n)
            if rt >= cfg.max_range:
                continue
            bearing = math.degrees(math.atan2(e, n)) % FULL_CIRCLE
            if any(rt > r0 and _angle_diff(bearing, b0) < h0 for r0, b0, h0 in shadows):
                continue
            size = tg.extent / cfg.meters_per_pixel
            cx, cy = centre + e / cfg.meters_per_pixel, centre - n / cfg.meters_per_pixel
            gts.append(Detection((cx - size / 2.0, cy - size / 2.0, size, size), 1.0))
        scene.ground_truth[t] = gts
    return scene
