"""Detection sources: offline detector exports and a built-in blob detector."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import CartesianImage

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    bbox: tuple
    score: float = 1.0
    label: str = "vehicle"

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
            raise ValueError(f"invalid box {self.bbox}: need (x, y, w, h) with w, h > 0")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "bbox", bbox)

    def to_record(self, frame: int, with_score: bool = True) -> dict:
        rec = {"frame": int(frame), "bbox": list(self.bbox), "class": self.label}
        if with_score:
            rec["score"] = float(self.score)
        return rec


def read_jsonl(path) -> dict[int, list[Detection]]:
    """Load a detection / ground-truth JSON Lines file keyed by frame."""
    out: dict[int, list[Detection]] = defaultdict(list)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                det = Detection(rec["bbox"], float(rec.get("score", 1.0)),
                                rec.get("class", "vehicle"))
                out[int(rec["frame"])].append(det)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad detection record ({exc})") from exc
    return dict(out)


def write_jsonl(path, detections: dict, with_score: bool = True) -> None:
    with open(path, "w") as fh:
        for frame in sorted(detections):
            for det in detections[frame]:
                fh.write(json.dumps(det.to_record(frame, with_score), sort_keys=True) + "\n")


class FileDetections:
    """Detections exported by an external network, read once at construction."""

    def __init__(self, path):
        self.path = Path(path)
        self.records = read_jsonl(self.path)

    def detect(self, frame_index: int, image: CartesianImage | None = None) -> list[Detection]:
        if frame_index not in self.records:
            logger.warning("%s has no detections for frame %d", self.path, frame_index)
            return []
        return list(self.records[frame_index])


_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ThresholdDetector:
    """Connected components above ``median + k * MAD`` of the in-range pixels.

    ``score`` is the component's mean intensity relative to the image peak.
    """

    k: float = 8.0
    min_area: int = 4
    smooth: float = 0.0

    def detect(self, frame_index: int, image: CartesianImage) -> list[Detection]:
        px = image.pixels
        if self.smooth > 0:
            px = ndimage.gaussian_filter(px, self.smooth)
        valid = image.range_mask()
        vals = px[valid]
        if vals.size == 0:
            return []
        med = float(np.median(vals))
        mad = float(np.median(np.abs(vals - med)))
        fg = (px > med + self.k * mad) & valid
        labels, count = ndimage.label(fg, structure=_EIGHT)
        if count == 0:
            return []
        idx = np.arange(1, count + 1)
        areas = ndimage.sum_labels(np.ones_like(px), labels, idx)
        energy = ndimage.sum_labels(px, labels, idx)
        out = []
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            if areas[lab - 1] < self.min_area:
                continue
            rows, cols = sl
            score = min(1.0, energy[lab - 1] / areas[lab - 1] / image.peak_value)
            out.append(Detection((float(cols.start), float(rows.start),
                                  float(cols.stop - cols.start), float(rows.stop - rows.start)),
                                 score))
        return out


def detect(provider, frame_index: int, image: CartesianImage | None = None) -> list[Detection]:
    return provider.detect(frame_index, image)
