"""Constant-velocity Kalman tracks with IOU association (greedy by default).

State per track is ``(cx, cy, w, h, vx, vy)`` in Cartesian pixels (velocity in
pixels per frame); measurements are ``(cx, cy, w, h)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .evaluation import iou

BBox = tuple  # (x, y, width, height)

_F = np.eye(6)
_F[0, 4] = _F[1, 5] = 1.0
_H = np.eye(4, 6)
ASSOCIATIONS = ("greedy", "hungarian")


@dataclass(frozen=True)
class TrackerConfig:
    min_age: int = 3
    max_age: int = 5
    process_noise_pos: float = 1e-2
    process_noise_size: float = 1e-4
    process_noise_vel: float = 1e-2
    measurement_noise: float = 1.0
    initial_velocity_var: float = 100.0
    association: str = "greedy"

    def __post_init__(self):
        if self.min_age < 1 or self.max_age < 1:
            raise ValueError("min_age and max_age must be >= 1")
        if self.association not in ASSOCIATIONS:
            raise ValueError(f"association must be one of {', '.join(ASSOCIATIONS)}")

    @property
    def Q(self) -> np.ndarray:
        p, s, v = self.process_noise_pos, self.process_noise_size, self.process_noise_vel
        return np.diag([p, p, s, s, v, v])

    @property
    def R(self) -> np.ndarray:
        return self.measurement_noise * np.eye(4)


def _to_z(bbox) -> np.ndarray:
    x, y, w, h = (float(v) for v in bbox)
    return np.array([x + w / 2.0, y + h / 2.0, w, h])


def _to_bbox(state) -> tuple:
    cx, cy, w, h = (float(v) for v in state[:4])
    return (cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass
class Track:
    id: int
    state: np.ndarray
    covariance: np.ndarray
    age: int = 0
    time_since_update: int = 0

    @classmethod
    def start(cls, track_id: int, bbox, config: TrackerConfig) -> "Track":
        z = _to_z(bbox)
        if z[2] <= 0 or z[3] <= 0:
            raise ValueError("detection width and height must be positive")
        state = np.concatenate([z, [0.0, 0.0]])
        r = config.measurement_noise
        P = np.diag([r, r, r, r, config.initial_velocity_var, config.initial_velocity_var])
        return cls(track_id, state, P)

    @property
    def bbox(self) -> tuple:
        return _to_bbox(self.state)

    def lookahead(self) -> tuple:
        """Box one frame ahead, without touching the track."""
        return _to_bbox(_F @ self.state)


def predict(track: Track, config: TrackerConfig = TrackerConfig()) -> tuple:
    """Advance the track one frame and return the predicted box."""
    track.state = _F @ track.state
    track.covariance = _F @ track.covariance @ _F.T + config.Q
    return track.bbox


def update(track: Track, bbox, config: TrackerConfig = TrackerConfig()) -> None:
    z = _to_z(bbox)
    if z[2] <= 0 or z[3] <= 0:
        raise ValueError("detection width and height must be positive")
    P = track.covariance
    S = _H @ P @ _H.T + config.R
    K = np.linalg.solve(S, _H @ P).T
    track.state = track.state + K @ (z - _H @ track.state)
    # Joseph form keeps the covariance symmetric positive-definite
    A = np.eye(6) - K @ _H
    track.covariance = A @ P @ A.T + K @ config.R @ K.T
    track.state[2:4] = np.maximum(track.state[2:4], 1e-6)
    track.age += 1
    track.time_since_update = 0


def _split(matches, n_pred, n_det):
    used_p = {i for i, _ in matches}
    used_d = {j for _, j in matches}
    return (sorted(matches), [i for i in range(n_pred) if i not in used_p],
            [j for j in range(n_det) if j not in used_d])


def associate(predictions, detections, method: str = "greedy"):
    """Greedy matching by descending IOU; pairs need IOU > 0.

    Equal IOUs resolve towards the lower prediction index, then the lower
    detection index.  Returns ``(matches, unmatched_predictions,
    unmatched_detections)`` with matches as ``(pred_idx, det_idx)``.
    ``method="hungarian"`` maximises the summed IOU instead.
    """
    if method == "hungarian":
        if not predictions or not detections:
            return _split([], len(predictions), len(detections))
        m = np.array([[iou(p, d) for d in detections] for p in predictions])
        rows, cols = linear_sum_assignment(m, maximize=True)
        return _split([(int(i), int(j)) for i, j in zip(rows, cols) if m[i, j] > 0],
                      len(predictions), len(detections))
    pairs = []
    for i, p in enumerate(predictions):
        for j, d in enumerate(detections):
            v = iou(p, d)
            if v > 0:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_d, matches = set(), set(), []
    for _, i, j in pairs:
        if i in used_p or j in used_d:
            continue
        used_p.add(i)
        used_d.add(j)
        matches.append((i, j))
    return _split(matches, len(predictions), len(detections))


@dataclass
class Tracker:
    """Multi-object tracker for one stream of frames (not thread-safe)."""

    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracks: list = field(default_factory=list)
    next_id: int = 0

    def _spawn(self, bbox) -> Track:
        t = Track.start(self.next_id, bbox, self.config)
        self.next_id += 1
        self.tracks.append(t)
        return t

    def reset(self, detections) -> None:
        self.tracks = []
        for d in detections:
            self._spawn(d)

    def snapshot(self) -> list[dict]:
        return [{"id": t.id, "bbox": list(t.bbox), "velocity": t.state[4:].tolist(),
                 "age": t.age, "time_since_update": t.time_since_update}
                for t in self.tracks]


def step_tracker(tracker: Tracker, detections, is_post_anchor: bool) -> list[tuple]:
    """Advance ``tracker`` with this frame's detections and return the boxes to sample.

    After an anchor frame the tracks are rebuilt from the detections, which are
    returned unchanged.  Otherwise each matched track contributes its one-frame
    lookahead once its age exceeds ``min_age`` and the raw detection before
    that; unmatched detections start new tracks and contribute themselves.
    """
    detections = [tuple(float(v) for v in d) for d in detections]
    cfg = tracker.config
    if is_post_anchor:
        tracker.reset(detections)
        return list(detections)
    preds = [predict(t, cfg) for t in tracker.tracks]
    matches, lost, fresh = associate(preds, detections, cfg.association)
    final: list[tuple] = []
    for i, j in matches:
        t = tracker.tracks[i]
        update(t, detections[j], cfg)
        final.append(t.lookahead() if t.age > cfg.min_age else detections[j])
    for i in lost:
        tracker.tracks[i].time_since_update += 1
    tracker.tracks = [t for t in tracker.tracks if t.time_since_update <= cfg.max_age]
    for j in fresh:
        tracker._spawn(detections[j])
        final.append(detections[j])
    return final


def dump_tracks_jsonl(history, fh) -> None:
    """Write ``(frame, tracker.snapshot())`` pairs as JSON Lines."""
    for frame, snap in history:
        for rec in snap:
            fh.write(json.dumps({"frame": frame, **rec}, sort_keys=True) + "\n")
