"""Command-line interface: ``radar-cs <command> [options]``.

Every command accepts ``--seed``, ``--config <json>`` and ``--out <dir>``.
Values from ``--config`` act as defaults; explicit flags win.  Failures print
one JSON object ``{"error": ..., "message": ..., "field": ...}`` on stderr and
exit with status 2 (bad input or configuration) or 1 (runtime failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import (Lp1Inputs, Lp2Inputs, LpInfeasibleError, describe, solve_lp1,
                        solve_lp2)
from .cfar import CfarParams, cfar_important_blocks
from .detection import FileDetections, ThresholdDetector, read_jsonl, write_jsonl
from .evaluation import EvalReport, average_precision, pr_curve_svg, precision_recall, psnr
from .geometry import BlockGrid, RadarFrame, partition
from .allocator import uniform_plan
from .io import (FORMATS, FormatError, read_frame, read_frames, read_image_detections,
                 write_budget_csv, write_frame, write_frames, write_plans)
from .pipeline import ConfigError, PipelineConfig, anchor_schedule, run
from .scene import SceneConfig, Target, gen_scene
from .sensing import compress_frame, read_measurements, reconstruct_frame, write_measurements
from .tracking import Tracker, TrackerConfig, dump_tracks_jsonl, step_tracker

logger = logging.getLogger("radar_cs")

FORMATS_HELP = """\
file formats
  frame PNG   16-bit greyscale, one pixel per cell, rows = azimuth bins (0 deg =
              north, clockwise), cols = range bins; value = round(I * 65535 / peak)
  frame raw   .bin, little-endian float32, row-major, rows x cols values
  sidecar     <stem>.json next to each frame: {"azimuth_res", "range_res",
              "frame_index", "peak_value", "rows", "cols", "format"}
  detections  JSON Lines {"frame": int, "bbox": [x, y, w, h], "score": float,
              "class": str}; pixels of the Cartesian rendering (vehicle at the
              centre, x east, y south); ground truth omits "score"
  image dets  JSON Lines {"frame": int, "bbox": [x, y, w, h], "class": str,
              "camera": int}; image pixels of the given camera
  budget.csv  t,frame_index,anchor,measurements,budget,bits_per_sample,
              lp_fallback,converged
  .rcsm       measurements of one frame, little-endian. Header (28 bytes,
              struct "<4sHHqIII"): magic "RCSF", version 1, reserved 0,
              frame_index, record count, block_rows, block_cols.  Each record
              (28 bytes, "<B3xIIIIQ"): kind (0 gaussian, 1 bpbd, 2 bpd), 3 pad
              bytes, az block, range block, m, n, seed; then m float32 values.
              A <stem>.json sidecar holds the frame sidecar fields.
"""


class CliError(Exception):
    def __init__(self, message, field=None, code=2):
        super().__init__(message)
        self.field = field
        self.code = code


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON ({exc})", "config") from None
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object", "config")
    return data


def _merge(config: dict, args, mapping: dict) -> dict:
    """Overlay explicitly given flags (``mapping``: flag dest -> config key)."""
    out = dict(config)
    for dest, key in mapping.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[key] = value
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scene(args) -> int:
    cfg = _load_config(args.config)
    cfg = _merge(cfg, args, {"frames": "n_frames", "clutter": "clutter_mean",
                             "occlusion": "occlusion"})
    if args.shape is not None:
        cfg["shape"] = list(args.shape)
    cfg["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    if "targets" not in cfg:
        n = args.targets if args.targets is not None else 3
        cfg["targets"] = _random_targets(n, cfg)
    try:
        scene_cfg = SceneConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid scene configuration: {exc}", "scene") from None
    scene = gen_scene(scene_cfg)
    out = _out_dir(args)
    write_frames(out / "frames", scene.frames, args.format)
    write_jsonl(out / "gt.jsonl", scene.ground_truth, with_score=False)
    (out / "scene.json").write_text(scene_cfg.to_json() + "\n")
    print(json.dumps({"frames": len(scene.frames), "out": str(out)}))
    return 0


def _random_targets(n: int, cfg: dict) -> list[dict]:
    rng = np.random.default_rng(cfg.get("seed", 0))
    shape = cfg.get("shape", SceneConfig.shape)
    reach = 0.7 * shape[1] * cfg.get("range_res", SceneConfig.range_res)
    return [{"position": rng.uniform(-reach, reach, 2).tolist(),
             "velocity": rng.uniform(-0.5, 0.5, 2).tolist(),
             "reflectivity": float(rng.uniform(60, 120)), "extent": 4.0} for _ in range(n)]


_RUN_FLAGS = {"mode": "mode", "rate": "target_rate", "anchor_period": "anchor_period",
              "anchor_rate": "anchor_rate", "anchor_kind": "anchor_kind",
              "matrix": "matrix_kind", "block": "block_shape", "shadow": "shadow",
              "seed": "base_seed", "tol": "solver_tol", "max_iter": "solver_max_iter"}


def _detector(args, section: dict):
    if args.detections:
        try:
            return FileDetections(args.detections)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load detections: {exc}", "detections") from None
    params = dict(section)
    for dest, key in (("det_k", "k"), ("det_min_area", "min_area"), ("det_smooth", "smooth")):
        if getattr(args, dest) is not None:
            params[key] = getattr(args, dest)
    try:
        return ThresholdDetector(**params)
    except TypeError as exc:
        raise CliError(f"invalid detector settings: {exc}", "detector") from None


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    det_section = cfg.pop("detector", {})
    cfg = _merge(cfg, args, _RUN_FLAGS)
    try:
        config = PipelineConfig.from_dict(cfg)
    except ConfigError as exc:
        raise CliError(str(exc), exc.field) from None
    except TypeError as exc:
        raise CliError(f"invalid configuration: {exc}", "config") from None
    frames = read_frames(args.frames)
    provider = _detector(args, det_section)
    image_dets = read_image_detections(args.image_detections) if args.image_detections else None
    tracker_log: list = []
    results = run(frames, config, provider, image_dets, tracker_log)

    out = _out_dir(args)
    fmt = args.format or _input_format(args.frames)
    write_frames(out / "frames", [r.reconstruction for r in results], fmt)
    write_plans(out / "plans", results)
    write_budget_csv(out / "budget.csv", results)
    write_jsonl(out / "detections.jsonl",
                {r.reconstruction.frame_index: r.detections for r in results})
    if tracker_log:
        with open(out / "tracks.jsonl", "w") as fh:
            dump_tracks_jsonl(tracker_log, fh)
    manifest = {"config": config.to_dict(), "frames": str(args.frames),
                "detector": (
                    {"file": str(args.detections)} if args.detections else
                    {"k": provider.k, "min_area": provider.min_area, "smooth": provider.smooth}),
                "version": __version__}
    _write_json(out / "manifest.json", manifest)
    n = sum(r.samples for r in results)
    print(json.dumps({"frames": len(results), "measurements": sum(r.measurements for r in results),
                      "average_rate": round(sum(r.measurements for r in results) / n, 6),
                      "lp_fallbacks": sum(r.lp_fallback for r in results),
                      "unconverged_frames": sum(not r.converged for r in results)}))
    return 0


def _input_format(directory) -> str:
    return "raw" if any(Path(directory).glob("*.bin")) else "png"


def cmd_cfar(args) -> int:
    cfg = _load_config(args.config)
    cfg = _merge(cfg, args, {"train": "n_train", "guard": "n_guard", "pfa": "pfa"})
    block = cfg.pop("block_shape", args.block or (20, 48))
    try:
        params = CfarParams(**cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid CFAR settings: {exc}", "cfar") from None
    frames = read_frames(args.frames)
    out = _out_dir(args)
    with open(out / "cfar.jsonl", "w") as fh:
        for f in frames:
            blocks = cfar_important_blocks(f, partition(f, *block), params)
            fh.write(json.dumps({"frame": f.frame_index,
                                 "blocks": sorted([list(map(int, b)) for b in blocks])}) + "\n")
    print(json.dumps({"frames": len(frames), "out": str(out / "cfar.jsonl")}))
    return 0


def cmd_plan(args) -> int:
    """Solve one allocation programme given as JSON (``--config``)."""
    cfg = _load_config(args.config)
    if not cfg:
        raise CliError("plan needs --config with an LP instance", "config")
    kind = cfg.pop("lp", None)
    try:
        if kind == "radar":
            inputs = Lp2Inputs(**cfg)
            x = solve_lp2(inputs)
            names = ("x1", "x2")
        elif kind == "image+radar":
            inputs = Lp1Inputs(**cfg)
            x = solve_lp1(inputs)
            names = ("x1", "x2", "x3", "x4")
        else:
            raise CliError('"lp" must be "radar" or "image+radar"', "lp")
    except LpInfeasibleError as exc:
        raise CliError(str(exc), exc.constraint, code=1) from None
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid LP instance: {exc}", "lp") from None
    doc = {"lp": kind, "inputs": describe(inputs),
           "solution": {k: float(v) for k, v in zip(names, x)}}
    if args.out:
        _write_json(_out_dir(args) / "plan.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_track(args) -> int:
    cfg = _load_config(args.config)
    cfg = _merge(cfg, args, {"min_age": "min_age", "max_age": "max_age",
                             "association": "association"})
    try:
        tcfg = TrackerConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid tracker settings: {exc}", "tracker") from None
    dets = read_jsonl(args.detections)
    frames = range(min(dets), max(dets) + 1) if dets else range(0)
    tracker = Tracker(tcfg)
    history, final = [], {}
    period = args.anchor_period
    for t, frame in enumerate(frames, 1):
        boxes = [d.bbox for d in dets.get(frame, [])]
        post_anchor = t == 1 or (period is not None and anchor_schedule(t - 1, period))
        final[frame] = step_tracker(tracker, boxes, post_anchor)
        history.append((frame, tracker.snapshot()))
    out = _out_dir(args)
    with open(out / "tracks.jsonl", "w") as fh:
        dump_tracks_jsonl(history, fh)
    with open(out / "final_bb.jsonl", "w") as fh:
        for frame, boxes in final.items():
            for b in boxes:
                fh.write(json.dumps({"frame": frame, "bbox": list(b)}) + "\n")
    print(json.dumps({"frames": len(history), "tracks": tracker.next_id}))
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    report = EvalReport(mode=args.mode or "")
    rows = []
    if args.recon:
        recon = {f.frame_index: f for f in read_frames(args.recon)}
        if args.reference:
            ref = {f.frame_index: f for f in read_frames(args.reference)}
            missing = sorted(set(recon) - set(ref))
            if missing:
                raise CliError(f"reference lacks frame {missing[0]}", "reference")
            for k in sorted(recon):
                p = psnr(recon[k], ref[k])
                report.psnr.append(p)
                rows.append({"frame": k, "psnr": p})
        report.total_samples = sum(f.data.size for f in recon.values())
    if args.budget:
        with open(args.budget, newline="") as fh:
            report.total_measurements = sum(int(r["measurements"]) for r in csv.DictReader(fh))
    if args.detections and args.gt:
        dets = {k: [(d.bbox, d.score) for d in v] for k, v in read_jsonl(args.detections).items()}
        gts = {k: [d.bbox for d in v] for k, v in read_jsonl(args.gt).items()}
        report.ap, report.ap50 = average_precision(dets, gts)
        if args.svg:
            p, r = precision_recall(dets, gts, 0.5)
            Path(args.svg).write_text(pr_curve_svg(p, r))
    (out / "report.json").write_text(report.to_json() + "\n")
    with open(out / "per_frame.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("frame", "psnr"), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"frame": r["frame"],
                        "psnr": "inf" if math.isinf(r["psnr"]) else f"{r['psnr']:.6f}"})
    print(json.dumps({k: report.to_dict()[k] for k in ("mean_psnr", "ap", "ap50")}))
    return 0


_CODEC_FLAGS = {"rate": "target_rate", "matrix": "matrix_kind", "block": "block_shape",
                "seed": "base_seed", "tol": "solver_tol", "max_iter": "solver_max_iter"}


def _codec_config(args) -> PipelineConfig:
    cfg = _merge(_load_config(args.config), args, _CODEC_FLAGS)
    cfg["mode"] = "standard-cs"
    # anchors are unused here; keep the rate ordering check satisfied
    cfg["anchor_rate"] = max(float(cfg.get("anchor_rate", 0.4)),
                             float(cfg.get("target_rate", 0.2)))
    try:
        return PipelineConfig.from_dict(cfg)
    except ConfigError as exc:
        raise CliError(str(exc), exc.field) from None


def cmd_compress(args) -> int:
    config = _codec_config(args)
    frames = read_frames(args.frames)
    grid = partition(frames[0], *config.block_shape)
    plan = uniform_plan(grid, config.target_rate)
    out = _out_dir(args)
    total = 0
    for f in frames:
        sets = compress_frame(f, grid, plan, config.matrix_kind, config.base_seed)
        total += sum(s.m for s in sets)
        path = out / f"meas_{f.frame_index:05d}.rcsm"
        write_measurements(path, sets, grid, f.frame_index)
        rows, cols = f.shape
        _write_json(path.with_suffix(".json"), {
            "azimuth_res": f.azimuth_res, "range_res": f.range_res,
            "frame_index": f.frame_index, "peak_value": f.peak_value, "rows": rows,
            "cols": cols, "format": "rcsm"})
    print(json.dumps({"frames": len(frames), "measurements": total}))
    return 0


def cmd_reconstruct(args) -> int:
    config = _codec_config(args)
    paths = sorted(Path(args.measurements).glob("*.rcsm"))
    if not paths:
        raise CliError(f"{args.measurements}: no .rcsm files", "measurements")
    frames = []
    for p in paths:
        side = p.with_suffix(".json")
        if not side.exists():
            raise FormatError(f"{p}: missing sidecar {side.name}")
        meta = json.loads(side.read_text())
        frame_index, (br, bc), sets = read_measurements(p)
        grid = BlockGrid.for_shape((meta["rows"], meta["cols"]), br, bc, meta["azimuth_res"],
                                   meta["range_res"])
        rec = reconstruct_frame(sets, grid, peak_value=meta["peak_value"],
                                frame_index=frame_index, tol=config.solver_tol,
                                max_iter=config.solver_max_iter, strict=False)
        frames.append(RadarFrame(rec.data, meta["azimuth_res"], meta["range_res"],
                                 frame_index, meta["peak_value"]))
    write_frames(_out_dir(args), frames, args.format)
    print(json.dumps({"frames": len(frames)}))
    return 0


def cmd_convert(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    if src.is_dir():
        write_frames(out, read_frames(src), args.to)
        return 0
    frame = read_frame(src)
    if out.suffix in (".png", ".bin"):
        out.parent.mkdir(parents=True, exist_ok=True)
        write_frame(out, frame, args.to)
    else:
        write_frames(out, [frame], args.to)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p, out_required=True):
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--config", help="JSON file whose values act as defaults")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radar-cs", description="Prior-guided compressed sensing for radar frames.",
        epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=FORMATS_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("gen-scene", cmd_gen_scene, "render a synthetic scene and its ground truth")
    _common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--shape", type=int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--targets", type=int, help="number of random targets (default 3)")
    p.add_argument("--clutter", type=float, help="mean of the exponential clutter")
    p.add_argument("--occlusion", action="store_true", default=None)
    p.add_argument("--format", choices=FORMATS, default="png")

    p = add("run", cmd_run, "acquire and reconstruct a frame sequence")
    _common(p)
    p.add_argument("--frames", required=True, help="directory of input frames")
    p.add_argument("--mode", choices=("comprpd", "compradimg", "rd", "standard-cs", "cfar"))
    p.add_argument("--rate", type=float, help="target sampling rate")
    p.add_argument("--anchor-period", type=int)
    p.add_argument("--anchor-rate", type=float)
    p.add_argument("--anchor-kind", choices=("cs", "quantize3bit"))
    p.add_argument("--matrix", choices=("bpd", "bpbd", "gaussian"))
    p.add_argument("--block", type=int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--no-shadow", dest="shadow", action="store_false", default=None)
    p.add_argument("--tol", type=float, help="solver duality-gap tolerance")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--detections", help="detection JSONL (otherwise the built-in detector)")
    p.add_argument("--image-detections", help="camera detection JSONL (compradimg)")
    p.add_argument("--det-k", type=float)
    p.add_argument("--det-min-area", type=int)
    p.add_argument("--det-smooth", type=float)
    p.add_argument("--format", choices=FORMATS, help="output frame format (default: input's)")

    p = add("cfar", cmd_cfar, "CA-CFAR important blocks per frame")
    _common(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--train", type=int)
    p.add_argument("--guard", type=int)
    p.add_argument("--pfa", type=float)
    p.add_argument("--block", type=int, nargs=2, metavar=("ROWS", "COLS"))

    p = add("plan", cmd_plan, 'solve an allocation LP; --config holds {"lp": "radar" | '
                              '"image+radar", ...inputs}')
    _common(p, out_required=False)

    p = add("track", cmd_track, "run the tracker over a detection stream")
    _common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--anchor-period", type=int)
    p.add_argument("--min-age", type=int)
    p.add_argument("--max-age", type=int)
    p.add_argument("--association", choices=("greedy", "hungarian"))

    p = add("eval", cmd_eval, "PSNR and AP/AP50 of a run")
    _common(p)
    p.add_argument("--recon", help="directory of reconstructed frames")
    p.add_argument("--reference", help="directory of original frames")
    p.add_argument("--detections")
    p.add_argument("--gt")
    p.add_argument("--budget", help="budget.csv of the run")
    p.add_argument("--mode")
    p.add_argument("--svg", help="write the AP50 precision-recall curve here")

    p = add("compress", cmd_compress, "uniform-rate CS of frames into .rcsm files")
    _common(p)
    p.add_argument("--frames", required=True, help="directory of input frames")
    p.add_argument("--rate", type=float)
    p.add_argument("--matrix", choices=("bpd", "bpbd", "gaussian"))
    p.add_argument("--block", type=int, nargs=2, metavar=("ROWS", "COLS"))

    p = add("reconstruct", cmd_reconstruct, "recover frames from .rcsm files")
    _common(p)
    p.add_argument("--measurements", required=True, help="directory of .rcsm files")
    p.add_argument("--tol", type=float, help="solver duality-gap tolerance")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--format", choices=FORMATS, default="png")

    p = add("convert", cmd_convert, "convert frames between PNG and raw")
    _common(p)
    p.add_argument("--in", dest="input", required=True, help="frame file or directory")
    p.add_argument("--to", choices=FORMATS, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "field": exc.field}
        code = exc.code
    except (FormatError, FileNotFoundError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "field": None}
        code = 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        logger.debug("unhandled error", exc_info=True)
        err = {"error": type(exc).__name__, "message": str(exc), "field": None}
        code = 1
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
