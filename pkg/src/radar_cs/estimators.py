"""scikit-learn style wrappers around the acquisition code.

Inputs are sequences of :class:`RadarFrame`; ``transform`` returns the
reconstructed frames in the same order.
"""

from __future__ import annotations

from typing import Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .allocator import uniform_plan
from .detection import ThresholdDetector
from .geometry import RadarFrame, partition
from .pipeline import PipelineConfig, run
from .sensing import compress_frame, reconstruct_frame


def check_frames(frames) -> list[RadarFrame]:
    """Validate a non-empty frame sequence with one geometry throughout."""
    if isinstance(frames, RadarFrame):
        frames = [frames]
    frames = list(frames)
    if not frames:
        raise ValueError("expected at least one frame")
    for f in frames:
        if not isinstance(f, RadarFrame):
            raise TypeError(f"expected RadarFrame, got {type(f).__name__}")
    first = frames[0]
    for f in frames[1:]:
        if (f.shape, f.azimuth_res, f.range_res, f.peak_value) != (
                first.shape, first.azimuth_res, first.range_res, first.peak_value):
            raise ValueError(f"frame {f.frame_index} differs in geometry from frame "
                             f"{first.frame_index}")
    return frames


def _check_geometry(est, frames):
    if frames[0].shape != est.frame_shape_:
        raise ValueError(f"fitted for frames of shape {est.frame_shape_}, got {frames[0].shape}")


class CSFrameCodec(TransformerMixin, BaseEstimator):
    """Uniform-rate block compressed sensing of independent frames."""

    def __init__(self, rate=0.2, block_shape=(20, 48), matrix_kind="bpd", seed=0,
                 tol=1e-2, max_iter=3000):
        self.rate = rate
        self.block_shape = block_shape
        self.matrix_kind = matrix_kind
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        frames = check_frames(X)
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        self.grid_ = partition(frames[0], *self.block_shape)
        self.plan_ = uniform_plan(self.grid_, self.rate)
        self.frame_shape_ = frames[0].shape
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        frames = check_frames(X)
        _check_geometry(self, frames)
        out, self.measurements_ = [], []
        for f in frames:
            sets = compress_frame(f, self.grid_, self.plan_, self.matrix_kind, self.seed)
            self.measurements_.append(sum(s.m for s in sets))
            out.append(reconstruct_frame(sets, self.grid_, peak_value=f.peak_value,
                                         frame_index=f.frame_index, tol=self.tol,
                                         max_iter=self.max_iter, strict=False))
        return out


class AdaptiveRadarSampler(TransformerMixin, BaseEstimator):
    """Prior-guided acquisition of a frame stream.

    ``transform`` runs the configured mode over the whole stream; per-frame
    plans and budgets end up in ``results_``.
    """

    def __init__(self, mode="comprpd", target_rate=0.2, anchor_period=20, anchor_rate=0.4,
                 anchor_kind="cs", matrix_kind="bpd", block_shape=(20, 48), shadow=True,
                 seed=0, detector=None, cameras=()):
        self.mode = mode
        self.target_rate = target_rate
        self.anchor_period = anchor_period
        self.anchor_rate = anchor_rate
        self.anchor_kind = anchor_kind
        self.matrix_kind = matrix_kind
        self.block_shape = block_shape
        self.shadow = shadow
        self.seed = seed
        self.detector = detector
        self.cameras = cameras

    def fit(self, X, y=None):
        frames = check_frames(X)
        self.config_ = PipelineConfig(
            mode=self.mode, target_rate=self.target_rate, anchor_period=self.anchor_period,
            anchor_rate=self.anchor_rate, anchor_kind=self.anchor_kind,
            matrix_kind=self.matrix_kind, block_shape=tuple(self.block_shape),
            shadow=self.shadow, base_seed=self.seed, cameras=tuple(self.cameras))
        self.grid_ = partition(frames[0], *self.config_.block_shape)
        self.frame_shape_ = frames[0].shape
        return self

    def transform(self, X, image_detections=None) -> list[RadarFrame]:
        check_is_fitted(self, "config_")
        frames = check_frames(X)
        _check_geometry(self, frames)
        detector = self.detector if self.detector is not None else ThresholdDetector()
        self.results_ = run(frames, self.config_, detector, image_detections)
        return [r.reconstruction for r in self.results_]

    def fit_transform(self, X, y=None, image_detections=None):
        return self.fit(X).transform(X, image_detections)

    @property
    def measurements_(self) -> Sequence[int]:
        check_is_fitted(self, "results_")
        return [r.measurements for r in self.results_]
