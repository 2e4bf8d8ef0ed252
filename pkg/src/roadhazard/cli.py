"""Command-line entry point: ``roadhazard <command> [options]``.

Exit codes: 0 success, 1 pipeline failure, 2 usage or input error.
Machine-readable results go to files; a short summary goes to stdout.
"""

from __future__ import annotations

import argparse
import logging
import math
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_assignments, read_config_file
from .metrics import confusion, report, table_report
from .pipeline import detect
from .pointcloud import (
    CloudFormatError,
    LabeledCloud,
    NormalEstimationError,
    downsample,
    load_cloud,
    save_cloud,
    write_columns,
)
from .projection import fill_gaps, render_classes, write_image
from .saliency import export_saliency
from .segmentation import (
    NoRoadError,
    VehicleState,
    export_segmented,
    load_segmented,
    write_obstacle_manifest,
)
from .synth import generate_scene, write_manifest

log = logging.getLogger("roadhazard")


class UsageError(Exception):
    pass


FORMATS = ("xyz-ascii", "ply-ascii", "labeled-xyz")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override any config key (repeatable)")
    p.add_argument("--seed", type=str, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadhazard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="saliency, segmentation and obstacle extraction for one cloud")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=FORMATS, help="input format (guessed from extension if omitted)")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--k", type=str)
    p.add_argument("--w1", type=str)
    p.add_argument("--w2", type=str)
    p.add_argument("--ratio", type=str, help="keep this fraction of vertices before detection")
    p.add_argument("--saliency", action="store_true", help="also write x y z s saliency rows")

    p = sub.add_parser("synth", help="generate a labelled road patch with potholes")
    _common(p)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--potholes", type=str, help="number of potholes")

    p = sub.add_parser("eval", help="compare predicted and ground-truth labelled clouds")
    _common(p)
    p.add_argument("--input", required=True, action="append",
                   help="predicted labelled-xyz (repeat for several densities)")
    p.add_argument("--truth", required=True, action="append",
                   help="ground-truth labelled-xyz, one per --input")
    p.add_argument("--ratio", action="append", help="density label per --input pair")
    p.add_argument("--model", default="model")
    p.add_argument("--output", help="write the table as CSV here")

    p = sub.add_parser("render", help="project a segmented cloud to a class pixmap")
    _common(p)
    p.add_argument("--input", required=True, help="x y z class_id rows")
    p.add_argument("--output", required=True, help="pixmap path")
    p.add_argument("--camera", nargs="*", metavar="KEY=VALUE", default=[],
                   help="camera settings, e.g. fx=100 fy=100 x0=64 y0=64 width=128 height=128 tz=-10")
    p.add_argument("--fill", type=str, help="gap-filling iterations")
    p.add_argument("--binary", action="store_true", help="write P6 instead of P3")

    p = sub.add_parser("serve", help="run the obstacle registry service")
    _common(p)
    p.add_argument("--endpoint", type=str, help="host:port to bind")
    p.add_argument("--duration", type=float, help="stop after this many seconds")

    p = sub.add_parser("replay", help="drive an agent over recorded frames against a registry")
    _common(p)
    p.add_argument("--input", required=True,
                   help="route file: one '<cloud> <x> <y> <yaw> <steering>' line per frame")
    p.add_argument("--endpoint", type=str)
    p.add_argument("--agent", default="ego")
    p.add_argument("--output", help="write the replay log here")
    p.add_argument("--wait", type=float, default=0.0,
                   help="seconds to keep listening for alerts after the last frame")
    return parser


def _flag_values(args) -> dict[str, str]:
    out = parse_assignments(args.set)
    for flag in ("seed", "k", "w1", "w2", "ratio", "endpoint"):
        value = getattr(args, flag, None)
        if isinstance(value, str):
            out[flag] = value
    if getattr(args, "potholes", None) is not None:
        out["synth.potholes"] = args.potholes
    if getattr(args, "fill", None) is not None:
        out["fill_iterations"] = args.fill
    for key, value in parse_assignments(getattr(args, "camera", [])).items():
        out[f"camera.{key}"] = value
    return out


def load_run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    return RunConfig.from_sources(file_values, _flag_values(args))


def _input_path(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {p}")
    return p


def _guess_format(path: Path) -> str:
    """PLY by extension; otherwise four columns on the first data row mean labelled xyz."""
    if path.suffix.lower() == ".ply":
        return "ply-ascii"
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                return "labeled-xyz" if len(line.split()) == 4 else "xyz-ascii"
    return "xyz-ascii"


def cmd_detect(args, cfg: RunConfig) -> int:
    path = _input_path(args.input)
    fmt = args.format or _guess_format(path)
    cloud = load_cloud(path, fmt)
    if isinstance(cloud, LabeledCloud):
        cloud = cloud.cloud
    if cfg["ratio"] < 1.0:
        cloud = downsample(cloud, cfg["ratio"], cfg["seed"])
    result = detect(cloud, cfg.vehicle(), cfg.detection())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    seg = result.segmented
    export_segmented(seg, out / "segmented.txt")
    write_columns(out / "predicted.xyz", cloud.vertices, seg.negative_mask().astype(int), lambda v: str(int(v)))
    write_obstacle_manifest(seg.obstacles, out / "obstacles.txt")
    if args.saliency:
        export_saliency(cloud, result.saliency.fused, out / "saliency.txt")
    counts = np.bincount(seg.classes, minlength=5)
    print(f"{cloud.m} vertices, {len(seg.obstacles)} obstacles; class counts {counts.tolist()}")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    patch = cfg.patch()
    scene, truth = generate_scene(cfg["seed"], cfg["synth.potholes"], cfg.scene_ranges(), patch)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(scene, out / "scene.xyz", "labeled-xyz")
    write_manifest(truth, out / "manifest.txt")
    print(f"{scene.cloud.m} vertices, {len(truth)} potholes, {int(scene.labels.sum())} pothole vertices")
    return 0


def _labels(path: str):
    cloud = load_cloud(_input_path(path), "labeled-xyz")
    return cloud.labels


def cmd_eval(args, cfg: RunConfig) -> int:
    if len(args.input) != len(args.truth):
        raise UsageError("give one --truth per --input")
    ratios = [float(r) for r in args.ratio] if args.ratio else [1.0] * len(args.input)
    if len(ratios) != len(args.input) or len(set(ratios)) != len(ratios):
        raise UsageError("give one distinct --ratio per --input pair")
    by_density = {}
    for pred_path, truth_path, ratio in zip(args.input, args.truth, ratios):
        pred, truth = _labels(pred_path), _labels(truth_path)
        if len(pred) != len(truth):
            raise UsageError(f"{pred_path} and {truth_path} differ in vertex count")
        by_density[ratio] = report(confusion(pred == 1, truth == 1))
    reports = {args.model: by_density}
    print(table_report(reports, ratios), end="")
    for ratio, rep in by_density.items():
        vals = rep.as_floats()
        shown = " ".join(f"{k}={'n/a' if v is None else f'{v:.4f}'}"
                         for k, v in vals.items() if k in ("precision", "recall", "accuracy", "f_score"))
        print(f"ratio {ratio:g}: {shown}")
    if args.output:
        Path(args.output).write_text(table_report(reports, ratios, fmt="csv"))
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    vertices, classes = load_segmented(_input_path(args.input))
    image = render_classes(vertices, classes, cfg.camera())
    image = fill_gaps(image, cfg["fill_iterations"], cfg["connectivity"])
    write_image(image, args.output, cfg.palette(), binary=args.binary)
    print(f"{int(image.filled().sum())} of {image.width * image.height} pixels painted")
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    from .registry import serve

    try:
        server = serve(cfg.registry())
    except OSError as exc:
        print(f"error: cannot bind {cfg['endpoint']}: {exc.strerror}", file=sys.stderr)
        return 1
    print(f"listening on {server.endpoint}", flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait(args.duration)
    server.stop()
    print(f"stopped with {len(server.registry.state.records)} records")
    return 0


def read_route(path: Path):
    """Frames from a route file; cloud paths are relative to the route file."""
    frames = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise UsageError(f"{path}:{lineno}: expected '<cloud> <x> <y> <yaw> <steering>'")
        try:
            x, y, yaw, steer = map(float, parts[1:])
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric pose") from None
        cloud_path = _input_path(str(path.parent / parts[0]))
        cloud = load_cloud(cloud_path, _guess_format(cloud_path))
        if isinstance(cloud, LabeledCloud):
            cloud = cloud.cloud
        frames.append((cloud, VehicleState((x, y, 0.0), (math.cos(yaw), math.sin(yaw)), steer)))
    return frames


def cmd_replay(args, cfg: RunConfig) -> int:
    from .registry import RegistryClient, agent_replay

    frames = read_route(_input_path(args.input))
    with RegistryClient(cfg["endpoint"]) as client:
        result = agent_replay(frames, client, cfg.detection(), args.agent, cfg["alert_radius"])
        if args.wait > 0:
            rec = client.wait_alert(args.wait)
            late = ([rec] if rec else []) + client.drain_alerts()
            result.alerts.extend((result.frames, r) for r in late)
    lines = [f"agent {result.agent_id} frames {result.frames}"]
    lines += [f"report frame {f} record {rid} {action}" for f, rid, action in result.reports]
    lines += [f"alert frame {f} record {rec.id} revision {rec.revision}" for f, rec in result.alerts]
    lines += [f"early record {rid} alert_frame {af} detection_frame {'none' if df is None else df}"
              for rid, af, df in result.early_alerts()]
    if args.output:
        Path(args.output).write_text("\n".join(lines) + "\n")
    print(f"{result.frames} frames, {len(result.reports)} reports, {len(result.alerts)} alerts, "
          f"{len(result.early_alerts())} early warnings")
    if result.aborted:
        print(f"error: replay aborted: {result.error}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "detect": cmd_detect,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "render": cmd_render,
    "serve": cmd_serve,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, CloudFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NoRoadError, NormalEstimationError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
