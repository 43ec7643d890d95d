"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus import EmptyCorpusError, evaluate_corpus, per_frame_csv
from .errors import ConfigurationError, PanofuseError
from .formats import write_labels, write_voxels
from .geometry import Transform4
from .metrics import ClassTable, evaluate
from .pipeline import (
    BASE_FILE,
    FUSED_GRID_FILE,
    FUSED_FILE,
    PIXEL_MAP_FILE,
    PRED_FILE,
    PROPAGATED_FILE,
    PipelineParams,
    dump_result,
    load_frame,
    load_grids,
    read_fused,
    read_pixel_map,
    run_pipeline,
    save_frame,
    stage_fuse,
    stage_postprocess,
    stage_project,
    stage_propagate,
    stage_voxelize,
    write_fused,
    write_pixel_map,
)
from .scene import DEFAULT_CLASSES, SceneConfig, generate_scene
from .voxel import PRESETS, CylinderGridSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(Exception):
    pass


def _floats(text: str, n: int):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(parts)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline")
    g.add_argument("--grid", choices=[*PRESETS, "custom"], default=None, help="cylinder grid preset")
    g.add_argument("--grid-shape", type=lambda s: tuple(int(x) for x in _floats(s, 3)), default=None, metavar="R,A,Z")
    g.add_argument("--radial-range", type=lambda s: _floats(s, 2), default=None, metavar="MIN,MAX")
    g.add_argument("--z-range", type=lambda s: _floats(s, 2), default=None, metavar="MIN,MAX")
    g.add_argument("--tau", type=float, default=0.7, help="CAM gate threshold")
    g.add_argument("--nms-kernel", type=int, default=5)
    g.add_argument("--nms-threshold", type=float, default=0.1)
    g.add_argument("--fog-threshold", type=float, default=0.5)
    g.add_argument("--pool", choices=("mean", "max"), default="mean")
    g.add_argument("--dump", type=Path, default=None, help="directory for stage artifacts")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-compensate", action="store_true", help="skip ego-motion compensation")
    g.add_argument("--no-vote", action="store_true", help="skip majority voting")
    g.add_argument("--no-fog", action="store_true", help="ignore the foreground gate")
    g.add_argument("--config", type=Path, default=None, help="key = value file; overrides flags")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="panofuse", description="LiDAR-camera panoptic fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic frame directory")
    s.add_argument("out", type=Path)
    s.add_argument("--objects", type=int, default=5)
    s.add_argument("--stuff", type=int, default=4)
    s.add_argument("--cameras", type=int, default=6)
    s.add_argument("--jitter", type=float, default=0.0, help="position jitter (m)")
    s.add_argument("--feature-noise", type=float, default=0.05)
    s.add_argument("--ego-yaw", type=float, default=0.03, help="ego yaw change over the camera sweep (rad)")
    s.add_argument("--ego-shift", type=lambda t: _floats(t, 3), default=(0.6, 0.05, 0.0), metavar="X,Y,Z")
    s.add_argument("--camera-gap", type=float, default=0.05, help="LiDAR-to-last-camera delay (s)")

    for name, text in (
        ("project", "LiDAR points to pixels"),
        ("fuse", "region-aligned fusion"),
        ("voxelize", "base and fused voxel grids"),
        ("propagate", "point-to-voxel attention"),
        ("postprocess", "panoptic labels from BEV heads"),
    ):
        c = sub.add_parser(name, parents=[common], help=text)
        c.add_argument("frame", type=Path)
        if name == "postprocess":
            c.add_argument("--out", type=Path, default=None, help="write labels here as well")

    r = sub.add_parser("run", parents=[common], help="end-to-end pipeline")
    r.add_argument("frame", type=Path)
    r.add_argument("--out", type=Path, default=None, help="prediction file (default: FRAME/pred.lcpl)")

    e = sub.add_parser("evaluate", parents=[common], help="pooled metrics over a corpus directory")
    e.add_argument("corpus", type=Path)
    e.add_argument("--classes", type=Path, default=None, help="class table JSON")
    e.add_argument("--csv", type=Path, default=None, help="write class-wise CSV here")
    e.add_argument("--per-frame", type=Path, default=None, help="write a per-frame CSV here")
    e.add_argument("--format", choices=("keyvalue", "table"), default="keyvalue")
    e.add_argument("--workers", type=int, default=4)
    return parser


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Overlay a ``key = value`` file on parsed flags; '#' starts a comment."""
    if args.config is None:
        return args
    try:
        text = args.config.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{args.config}:{n}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config", "command"):
            raise UsageError(f"{args.config}:{n}: unknown key {key!r}")
        action = actions[dest]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                val = _BOOL[value.lower()]
            else:
                val = action.type(value) if action.type else value
        except (KeyError, ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{args.config}:{n}: bad value for {key}: {value!r}") from exc
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"{args.config}:{n}: {key} must be one of {list(action.choices)}")
        setattr(args, dest, val)
    return args


def _params(args) -> PipelineParams:
    return PipelineParams(
        tau=args.tau,
        nms_kernel=args.nms_kernel,
        nms_threshold=args.nms_threshold,
        fog_threshold=args.fog_threshold,
        pool=args.pool,
        compensate=not args.no_compensate,
        vote=not args.no_vote,
        use_fog=not args.no_fog,
    )


def _grid_spec(args) -> CylinderGridSpec | None:
    if args.grid is None:
        return None
    if args.grid != "custom":
        return PRESETS[args.grid]
    if args.grid_shape is None:
        raise UsageError("--grid custom needs --grid-shape")
    kw = {"radial_bins": args.grid_shape[0], "angular_bins": args.grid_shape[1], "z_bins": args.grid_shape[2]}
    if args.radial_range:
        kw["radial_range"] = args.radial_range
    if args.z_range:
        kw["z_range"] = args.z_range
    return CylinderGridSpec(**kw)


def _load(args):
    frame = load_frame(args.frame)
    spec = _grid_spec(args)
    if spec is not None and spec != frame.spec:
        raise UsageError(f"--grid {args.grid} does not match the grid stored with {args.frame}")
    return frame


def _work(args) -> Path:
    d = args.dump if args.dump is not None else args.frame / "stages"
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_synth(args) -> int:
    spec = _grid_spec(args)
    cfg = SceneConfig(
        seed=args.seed,
        n_objects=args.objects,
        n_stuff_regions=args.stuff,
        n_cameras=args.cameras,
        grid="custom" if spec is not None else "nuscenes-100m",
        custom_grid=spec,
        position_jitter=args.jitter,
        feature_noise=args.feature_noise,
        ego_motion=Transform4.from_yaw(args.ego_yaw, args.ego_shift),
        camera_gap=args.camera_gap,
    )
    frame = generate_scene(cfg)
    save_frame(frame, args.out)
    print(f"wrote {args.out}: {len(frame.lidar)} points, {frame.labels.n_instances} instances, {len(frame.rig)} cameras")
    return EXIT_OK


def cmd_project(args) -> int:
    frame, work = _load(args), _work(args)
    pm = stage_project(frame, _params(args))
    write_pixel_map(work / PIXEL_MAP_FILE, pm)
    print(f"{len(pm)} point-pixel pairs -> {work / PIXEL_MAP_FILE}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    frame, work = _load(args), _work(args)
    fused, _ = stage_fuse(frame, read_pixel_map(work / PIXEL_MAP_FILE), _params(args))
    write_fused(work / FUSED_FILE, fused)
    print(f"{len(fused.point_index)} fused rows -> {work / FUSED_FILE}")
    return EXIT_OK


def cmd_voxelize(args) -> int:
    frame, work = _load(args), _work(args)
    base, grid = stage_voxelize(frame, read_fused(work / FUSED_FILE), _params(args))
    write_voxels(work / BASE_FILE, base)
    write_voxels(work / FUSED_GRID_FILE, grid)
    print(f"{len(base)} base cells, {len(grid)} fused cells -> {work}")
    return EXIT_OK


def cmd_propagate(args) -> int:
    frame, work = _load(args), _work(args)
    base, grid = load_grids(work)
    if base.spec != frame.spec:
        raise ConfigurationError("dumped grids do not match the frame's cylinder grid")
    out = stage_propagate(base, grid)
    write_voxels(work / PROPAGATED_FILE, out)
    print(f"{len(out)} cells -> {work / PROPAGATED_FILE}")
    return EXIT_OK


def _report_against_gt(frame, labeling) -> None:
    if frame.labels is not None:
        rep = evaluate(frame.labels, labeling, frame.classes)
        print(f"pq = {rep.pq:.9f}\nmiou = {rep.miou:.9f}")


def cmd_postprocess(args) -> int:
    frame, work = _load(args), _work(args)
    labeling = stage_postprocess(frame, _params(args))
    write_labels(work / PRED_FILE, labeling)
    if args.out is not None:
        write_labels(args.out, labeling)
    print(f"{len(labeling)} points, {labeling.n_instances} instances -> {work / PRED_FILE}")
    _report_against_gt(frame, labeling)
    return EXIT_OK


def cmd_run(args) -> int:
    frame = _load(args)
    result = run_pipeline(frame, _params(args))
    if args.dump is not None:
        dump_result(result, args.dump)
    out = args.out if args.out is not None else args.frame / PRED_FILE
    write_labels(out, result.labeling)
    print(f"{len(result.labeling)} points, {result.labeling.n_instances} instances -> {out}")
    _report_against_gt(frame, result.labeling)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    classes = DEFAULT_CLASSES
    if args.classes is not None:
        try:
            classes = ClassTable.from_json(args.classes.read_text()).validate()
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"bad class table {args.classes}: {exc}") from exc
    result = evaluate_corpus(args.corpus, classes, per_frame=args.per_frame is not None, workers=args.workers)
    print(f"frames = {len(result.frames)}")
    if args.format == "table":
        print(result.report.to_table(classes), end="")
    else:
        print(result.report.to_keyvalue(), end="")
    if args.csv is not None:
        args.csv.write_text(result.report.to_csv(classes))
    if args.per_frame is not None:
        args.per_frame.write_text(per_frame_csv(result))
    if result.errors:
        for err in result.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "project": cmd_project,
    "fuse": cmd_fuse,
    "voxelize": cmd_voxelize,
    "propagate": cmd_propagate,
    "postprocess": cmd_postprocess,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = apply_config(args, parser)
        return COMMANDS[args.command](args)
    except (UsageError, EmptyCorpusError, ConfigurationError) as exc:
        print(f"panofuse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PanofuseError, OSError) as exc:
        print(f"panofuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
