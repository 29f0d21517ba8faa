"""Reconstruction and detection metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical frames give ``math.inf``."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.peak_value != b.peak_value:
        raise ValueError("frames have different peak values")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(a.peak_value ** 2 / mse)


def masked_psnr(a, b, mask: np.ndarray) -> float:
    """PSNR over the cells selected by ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return math.nan
    mse = float(np.mean((a.data[mask] - b.data[mask]) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(a.peak_value ** 2 / mse)


def iou(b1, b2) -> float:
    """Intersection over union of two ``(x, y, w, h)`` boxes."""
    x1, y1, w1, h1 = b1
    x2, y2, w2, h2 = b2
    iw = min(x1 + w1, x2 + w2) - max(x1, x2)
    ih = min(y1 + h1, y2 + h2) - max(y1, y2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (w1 * h1 + w2 * h2 - inter))


def _match(dets, gts, threshold):
    """TP flags and scores for detections ranked by descending score."""
    ranked = []
    for frame, items in dets.items():
        for k, (box, score) in enumerate(items):
            ranked.append((-float(score), frame, k, box))
    ranked.sort(key=lambda r: (r[0], r[1], r[2]))
    used = {frame: np.zeros(len(g), bool) for frame, g in gts.items()}
    tp = np.zeros(len(ranked), bool)
    for n, (_, frame, _, box) in enumerate(ranked):
        best, best_iou = -1, threshold
        for g, gbox in enumerate(gts.get(frame, ())):
            if used[frame][g]:
                continue
            v = iou(box, gbox)
            if v >= best_iou:
                best, best_iou = g, v
        if best >= 0:
            used[frame][best] = True
            tp[n] = True
    return tp


def precision_recall(dets, gts, threshold=0.5):
    """Cumulative precision and recall over score-ranked detections."""
    n_gt = sum(len(g) for g in gts.values())
    tp = _match(dets, gts, threshold)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt if n_gt else np.zeros(len(tp))
    return precision, recall


def _ap_at(dets, gts, threshold) -> float:
    precision, recall = precision_recall(dets, gts, threshold)
    if not len(precision):
        return 0.0
    # monotone envelope, then 101-point sampling
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


def average_precision(detections: Mapping, ground_truth: Mapping,
                      thresholds: Sequence[float] = IOU_THRESHOLDS) -> tuple[float, float]:
    """COCO-style single-class ``(AP, AP50)``.

    ``detections`` maps frame -> list of ``(bbox, score)``; ``ground_truth`` maps
    frame -> list of bboxes.  Without ground truth the result is ``(0, 0)`` if
    anything was detected and ``(nan, nan)`` otherwise.
    """
    gts = {f: [tuple(b) for b in g] for f, g in ground_truth.items()}
    dets = {f: [(tuple(b), s) for b, s in d] for f, d in detections.items()}
    n_gt = sum(len(g) for g in gts.values())
    n_det = sum(len(d) for d in dets.values())
    if n_gt == 0:
        return (0.0, 0.0) if n_det else (math.nan, math.nan)
    per = {round(t, 2): _ap_at(dets, gts, t) for t in thresholds}
    ap = float(np.mean(list(per.values())))
    ap50 = per.get(0.5, _ap_at(dets, gts, 0.5))
    return ap, ap50


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


@dataclass
class EvalReport:
    psnr: list = field(default_factory=list)
    ap: float = math.nan
    ap50: float = math.nan
    total_measurements: int = 0
    total_samples: int = 0
    mode: str = ""
    config: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        finite = [p for p in self.psnr if math.isfinite(p)]
        if not finite:
            return math.inf if self.psnr else math.nan
        return float(np.mean(finite))

    @property
    def average_rate(self) -> float:
        return self.total_measurements / self.total_samples if self.total_samples else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr"] = [_finite(float(p)) for p in self.psnr]
        d["ap"], d["ap50"] = _finite(float(self.ap)), _finite(float(self.ap50))
        d["mean_psnr"] = _finite(self.mean_psnr)
        d["average_rate"] = _finite(self.average_rate)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pr_curve_svg(precision, recall, width=320, height=240) -> str:
    """Minimal SVG polyline of a precision-recall curve."""
    pts = " ".join(f"{20 + r * (width - 40):.1f},{height - 20 - p * (height - 40):.1f}"
                   for p, r in zip(precision, recall))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect x="20" y="20" width="{width - 40}" height="{height - 40}" fill="none" '
        f'stroke="#888"/><polyline points="{pts}" fill="none" stroke="#c33"/>'
        f'<text x="{width / 2}" y="{height - 4}" font-size="10">recall</text>'
        f'<text x="2" y="14" font-size="10">precision</text></svg>'
    )
