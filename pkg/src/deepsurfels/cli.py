"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 validation
failure. Diagnostics go to stderr only.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path


from .baseline import ColorVolume, tsdf_color_fuse, tsdf_color_render
from .core import ChannelMismatchError, FormatError, load_model, save_model, validate_model
from .fitting import FitConfig, build
from .formats import list_frames, read_camera, read_frame, write_image
from .fusion import FusionConfig, check_frame, fuse_frame
from .metrics import ImageReport, evaluate_view
from .render import RenderConfig, render_view
from .scenegen import SCENES, generate_dataset, intrinsics, make_scene, orbit_cameras, read_scene
from .sdf import load_grid

log = logging.getLogger("deepsurfels")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _rgb(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected r,g,b, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected r,g,b, got {text!r}")
    return vals


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    gates = _Parser(add_help=False)
    gates.add_argument("--no-backface", action="store_true", help="keep back-facing texels")
    gates.add_argument("--no-depth-gate", action="store_true", help="skip the depth-consistency gate")

    parser = _Parser(prog="deepsurfels", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scenegen", parents=[common], help="render a synthetic RGB-D dataset")
    p.add_argument("--scene", required=True, choices=SCENES)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--size", type=_size, default=(128, 128), help="WxH (default 128x128)")
    p.add_argument("--radius", type=float, default=2.5, help="orbit radius")
    p.add_argument("--elevation", type=float, default=25.0, help="orbit elevation in degrees")
    p.add_argument("--azimuth-offset", type=float, default=0.0, help="azimuth shift in orbit steps")
    p.add_argument("--fov", type=float, default=40.0, help="horizontal field of view in degrees")
    p.add_argument("--checker-scale", type=float, default=4.0)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit surfel patches to a scene SDF")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene.json with an analytic SDF")
    src.add_argument("--sdf", help=".sdfg grid file")
    p.add_argument("--grid", type=int, required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--band", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", parents=[common, gates], help="fuse RGB-D frames into a model")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--weight-cap", type=float)
    p.add_argument("--shuffle-seed", type=int, help="fuse in a seeded random order (experiments only)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", parents=[common, gates], help="render a novel view")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--background", type=_rgb, default=(0.0, 0.0, 0.0))
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common, gates], help="score renders against held-out frames")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--report", required=True)
    p.add_argument("--mask-foreground", action=argparse.BooleanOptionalAction, default=True,
                   help="report PSNR over ground-truth foreground pixels (default on)")
    p.add_argument("--renders", help="optional directory for rendered images")

    p = sub.add_parser("baseline", help="run a baseline method")
    bsub = p.add_subparsers(dest="method", required=True, parser_class=_Parser)
    b = bsub.add_parser("tsdf-color", parents=[common], help="per-voxel running-mean coloring")
    b.add_argument("--grid", type=int, required=True)
    b.add_argument("--frames", required=True)
    b.add_argument("--scene", required=True)
    b.add_argument("--test-frames", help="held-out frames to score (default: the fused frames)")
    b.add_argument("--trilinear", action="store_true", help="trilinear color lookup")
    b.add_argument("--mask-foreground", action=argparse.BooleanOptionalAction, default=True)
    b.add_argument("--report", required=True)
    return parser


def _load_model(path):
    model = load_model(path)
    problems = validate_model(model)
    _require(not problems, f"{path}: invalid model: {'; '.join(problems)}")
    return model


def cmd_scenegen(args) -> None:
    _require(args.views >= 1, "--views must be >= 1")
    _require(args.radius > 0, "--radius must be positive")
    _require(args.supersample >= 1, "--supersample must be >= 1")
    _require(0 < args.fov < 180, "--fov must be in (0, 180)")
    w, h = args.size
    _require(w > 0 and h > 0, "--size must be positive")
    scene = make_scene(args.scene, args.checker_scale)
    cams = orbit_cameras(args.views, args.radius, (0.0, 0.0, 0.0), args.elevation,
                         intrinsics(w, h, args.fov), w, h, args.azimuth_offset)
    generate_dataset(scene, cams, args.out, args.supersample,
                     lambda i, n: log.debug("rendered view %d/%d", i, n))
    log.info("wrote %d views of %s to %s", len(cams), args.scene, args.out)


def cmd_fit(args) -> None:
    _require(args.grid >= 1, "--grid must be >= 1")
    _require(args.patch >= 1, "--patch must be >= 1")
    _require(args.channels >= 1, "--channels must be >= 1")
    _require(args.band > 0, "--band must be positive")
    if args.scene:
        field = read_scene(args.scene).field
    else:
        field = load_grid(args.sdf)
    cfg = FitConfig.for_bounds(field.lo, field.hi, args.grid, patch_res=args.patch,
                               channels=args.channels, band=args.band)
    model = build(field, cfg, threads=args.threads)
    save_model(model, args.out)
    log.info("fitted %d patches (%d texels, %d flagged)", len(model), model.num_texels,
             int(model.flagged.sum()))


def _frame_order(frames_root, seed):
    names = list_frames(frames_root)
    _require(bool(names), f"no frames found in {frames_root}")
    if seed is not None:
        random.Random(seed).shuffle(names)
        print("fusion order: " + " ".join(names), file=sys.stderr)
    return names


def cmd_fuse(args) -> None:
    _require(args.k >= 1, "--k must be >= 1")
    _require(args.weight_cap is None or args.weight_cap > 0, "--weight-cap must be positive")
    model = _load_model(args.model)
    cfg = FusionConfig(args.k, args.weight_cap, not args.no_backface, not args.no_depth_gate)
    names = _frame_order(args.frames, args.shuffle_seed)
    touched = 0
    for name in names:
        camera, frame = read_frame(args.frames, name)
        check_frame(model, camera, frame)
        stats = fuse_frame(model, camera, frame, cfg, threads=args.threads)
        touched += stats.texels_touched
        log.debug("%s: %s", name, stats)
    save_model(model, args.out)
    log.info("fused %d frames, %d texel updates", len(names), touched)


def _render_cfg(args, background=(0.0, 0.0, 0.0)):
    return RenderConfig(not args.no_backface, not args.no_depth_gate, background)


def cmd_render(args) -> None:
    _require(args.k >= 1, "--k must be >= 1")
    model = _load_model(args.model)
    scene = read_scene(args.scene)
    camera = read_camera(args.camera)
    view = render_view(model, scene.field, camera, args.k, _render_cfg(args, args.background),
                       threads=args.threads)
    write_image(args.out, view.rgb)


def cmd_eval(args) -> None:
    _require(args.k >= 1, "--k must be >= 1")
    model = _load_model(args.model)
    scene = read_scene(args.scene)
    cfg = _render_cfg(args, scene.background)
    report = ImageReport(config={"k": args.k, "grid": list(model.grid_dims), "patch": model.patch_res,
                                 "channels": model.channels, "backface": cfg.back_face_reject,
                                 "depth_gate": cfg.depth_gate, "mask_foreground": args.mask_foreground,
                                 "threads": args.threads})
    if args.renders:
        Path(args.renders).mkdir(parents=True, exist_ok=True)
    for name in _frame_order(args.frames, None):
        camera, gt = read_frame(args.frames, name)
        view = render_view(model, scene.field, camera, args.k, cfg, threads=args.threads)
        if args.renders:
            write_image(Path(args.renders) / f"{name}.ppm", view.rgb)
        report.views.append(evaluate_view(name, view.rgb, gt.rgb, gt.depth > 0, view.coverage,
                                          args.mask_foreground))
    report.write(args.report)
    log.info("mean PSNR %.2f dB, mean SSIM %.4f", report.mean_psnr, report.mean_ssim)


def cmd_baseline(args) -> None:
    _require(args.grid >= 1, "--grid must be >= 1")
    scene = read_scene(args.scene)
    vol = ColorVolume.for_bounds(*scene.bounds, args.grid)
    for name in _frame_order(args.frames, None):
        camera, frame = read_frame(args.frames, name)
        tsdf_color_fuse(vol, camera, frame)
    test = args.test_frames or args.frames
    report = ImageReport(config={"method": "tsdf-color", "grid": args.grid, "trilinear": args.trilinear,
                                 "mask_foreground": args.mask_foreground})
    for name in _frame_order(test, None):
        camera, gt = read_frame(test, name)
        rgb, coverage, _ = tsdf_color_render(vol, scene.field, camera, scene.background, args.trilinear)
        report.views.append(evaluate_view(name, rgb, gt.rgb, gt.depth > 0, coverage,
                                          args.mask_foreground))
    report.write(args.report)
    log.info("mean PSNR %.2f dB, mean SSIM %.4f", report.mean_psnr, report.mean_ssim)


COMMANDS = {"scenegen": cmd_scenegen, "fit": cmd_fit, "fuse": cmd_fuse, "render": cmd_render,
            "eval": cmd_eval, "baseline": cmd_baseline}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"deepsurfels: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        _require(args.threads >= 1, "--threads must be >= 1")
        COMMANDS[args.command](args)
    except (ValidationError, ChannelMismatchError) as exc:
        print(f"deepsurfels: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"deepsurfels: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"deepsurfels: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
