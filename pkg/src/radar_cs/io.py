"""Frame files, detection streams and run outputs.

Frames are stored either as 16-bit greyscale PNG (intensity scaled by
``65535 / peak_value``) or as raw little-endian float32, row-major.  Every
frame file has a JSON sidecar next to it (``<stem>.json``) carrying the
metadata the pixels cannot.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import RadarFrame
from .pipeline import ImageDetection

FORMATS = ("png", "raw")
_SUFFIX = {"png": ".png", "raw": ".bin"}


class FormatError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_frame(path, frame: RadarFrame, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("raw" if path.suffix == ".bin" else "png")
    if fmt not in FORMATS:
        raise FormatError(f"unknown frame format {fmt!r}; use one of {', '.join(FORMATS)}")
    rows, cols = frame.shape
    meta = {"azimuth_res": frame.azimuth_res, "range_res": frame.range_res,
            "frame_index": frame.frame_index, "peak_value": frame.peak_value,
            "rows": rows, "cols": cols, "format": fmt}
    if fmt == "png":
        scaled = np.rint(frame.data * (65535.0 / frame.peak_value)).astype(np.uint16)
        Image.fromarray(scaled).save(path, format="PNG")
    else:
        path.write_bytes(np.ascontiguousarray(frame.data, dtype="<f4").tobytes())
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_frame(path) -> RadarFrame:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text())
    try:
        fmt = meta.get("format", "raw" if path.suffix == ".bin" else "png")
        rows, cols = int(meta["rows"]), int(meta["cols"])
        peak = float(meta["peak_value"])
        if fmt == "png":
            px = np.asarray(Image.open(path), dtype=np.float64)
            data = px * (peak / 65535.0)
        elif fmt == "raw":
            raw = np.frombuffer(path.read_bytes(), dtype="<f4")
            if raw.size != rows * cols:
                raise FormatError(f"{path}: expected {rows * cols} float32 values, "
                                  f"found {raw.size}")
            data = raw.reshape(rows, cols).astype(np.float64)
        else:
            raise FormatError(f"{path}: unknown format {fmt!r}")
        if data.shape != (rows, cols):
            raise FormatError(f"{path}: pixel shape {data.shape} disagrees with sidecar")
        data = np.clip(data, 0.0, peak)
        return RadarFrame(data, float(meta["azimuth_res"]), float(meta["range_res"]),
                          int(meta["frame_index"]), peak)
    except KeyError as exc:
        raise FormatError(f"{side}: missing field {exc.args[0]!r}") from None


def frame_name(frame: RadarFrame, fmt: str) -> str:
    return f"frame_{frame.frame_index:05d}{_SUFFIX[fmt]}"


def write_frames(directory, frames, fmt: str = "png") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_frame(directory / frame_name(f, fmt), f, fmt) for f in frames]


def read_frames(directory) -> list[RadarFrame]:
    """All frames in ``directory``, ordered by frame index."""
    directory = Path(directory)
    paths = [p for p in directory.iterdir()
             if p.suffix in (".png", ".bin") and _sidecar(p).exists()]
    if not paths:
        raise FormatError(f"{directory}: no frame files with sidecars")
    frames = [read_frame(p) for p in paths]
    return sorted(frames, key=lambda f: f.frame_index)


def read_image_detections(path) -> dict[int, list[ImageDetection]]:
    """Camera detections: ``{"frame", "bbox", "class", "camera"}`` per line."""
    out: dict[int, list[ImageDetection]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                det = ImageDetection(tuple(float(v) for v in rec["bbox"]),
                                     str(rec.get("class", "car")), int(rec.get("camera", 0)))
                if len(det.bbox) != 4:
                    raise ValueError("bbox needs four numbers")
                out.setdefault(int(rec["frame"]), []).append(det)
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad image detection ({exc})") from None
    return out


BUDGET_FIELDS = ("t", "frame_index", "anchor", "measurements", "budget", "bits_per_sample",
                 "lp_fallback", "converged")


def write_budget_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BUDGET_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(r.budget_row())


def read_budget_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_plans(directory, results) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in results:
        doc = {"t": r.t, "frame_index": r.reconstruction.frame_index, "anchor": r.is_anchor,
               "lp_fallback": r.lp_fallback,
               "important": sorted([list(map(int, idx)) for idx in r.important]),
               "final_bb": [list(b) for b in r.final_bb],
               "plan": json.loads(r.plan.to_json()) if r.plan is not None else
               {"kind": "quantized", "bits": r.bits_per_sample}}
        (directory / f"plan_{r.reconstruction.frame_index:05d}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n")

