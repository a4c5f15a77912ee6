"""Command-line entry point: ``graffiti-cdpr <subcommand> ...``.

Exit status is 0 on success; failures map to one code per stage family:
2 usage, 3 parse/compose, 4 plan/trajectory, 5 optimize, 6 simulate,
7 calibrate, 8 report/render output.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from graffiti_cdpr import calibration, model as mdl, optimizer, pipeline, runtime, trajgen
from graffiti_cdpr.pathgen import PaintingSpec, compose, order_painting
from graffiti_cdpr.pipeline import (
    EXIT_CALIBRATE, EXIT_OK, EXIT_OPTIMIZE, EXIT_OUTPUT, EXIT_PARSE, EXIT_PLAN, EXIT_SIMULATE, StageError,
)
from graffiti_cdpr.render import STYLES, render_preview
from graffiti_cdpr.strokes import PaintPath, export_library, load_library

DATA_DIR = Path(__file__).parent / "data"


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--robot", type=Path, default=None,
                   help="robot config JSON (default: built-in 4-cable frame)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="random seed for sensor noise (default: %(default)s)")
    p.add_argument("--dt", type=float, default=0.01, help="trajectory/schedule step in s (default: %(default)s)")
    p.add_argument("--rate", type=float, default=1000.0, help="control rate in Hz (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="graffiti-cdpr", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capture", parents=[common], help="build a shape library from library/GML/SVG/mocap files")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--nozzle-offset", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"),
                   help="nozzle position in the can frame, m (default: 0 0 0)")
    p.add_argument("--closure", type=float, default=0.02, help="closure distance, m (default: %(default)s)")
    p.add_argument("--paint-speed", type=float, default=6.0, help="max paint speed, m/s (default: %(default)s)")
    p.add_argument("--min-arc", type=float, default=0.1, help="min paint arc length, m (default: %(default)s)")
    p.add_argument("--nms-window", type=int, default=5, help="min label run, samples (default: %(default)s)")

    p = sub.add_parser("compose", parents=[common], help="place library shapes per a painting spec")
    p.add_argument("painting", type=Path)
    p.add_argument("--library", type=Path, required=True)
    p.add_argument("--wfw-step", type=float, default=0.05, help="workspace grid step, m (default: %(default)s)")

    p = sub.add_parser("plan", parents=[common], help="infill + ordering into a continuous paint path")
    p.add_argument("composition", type=Path)
    p.add_argument("--line-spacing", type=float, default=0.025, help="infill pass spacing, m (default: %(default)s)")
    p.add_argument("--start", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"),
                   help="nozzle start position (default: 0 0)")

    p = sub.add_parser("trajectory", parents=[common], help="time-parameterize a paint path")
    p.add_argument("path", type=Path)
    p.add_argument("--lead-in", type=float, default=0.4,
                   help="rest before the first stroke, s; at least the paint latency (default: %(default)s)")

    p = sub.add_parser("optimize", parents=[common], help="iLQR feedforward and gains for a trajectory")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--r-scale", type=float, default=1.0, help="multiply R = I by this (default: %(default)s)")
    p.add_argument("--max-iterations", type=int, default=50, help="(default: %(default)s)")

    p = sub.add_parser("simulate", parents=[common], help="closed-loop run of a control schedule")
    p.add_argument("schedule", type=Path)
    p.add_argument("--encoder-noise", type=float, default=0.0, help="cable length noise std, m (default: 0)")
    p.add_argument("--rate-noise", type=float, default=0.0, help="cable rate noise std, m/s (default: 0)")
    p.add_argument("--latency", type=float, default=0.4, help="paint latency, s (default: %(default)s)")

    p = sub.add_parser("calibrate", parents=[common], help="fit pulleys and length scales from a calibration log")
    p.add_argument("log", type=Path)
    p.add_argument("--no-offset", action="store_true", help="freeze length offsets at 0")
    p.add_argument("--tie-scale", action="store_true", help="fit one shared length scale")

    p = sub.add_parser("render", parents=[common], help="SVG preview of a path (.json) or log (.csv)")
    p.add_argument("source", type=Path)
    p.add_argument("--style", choices=STYLES, default="dashed", help="travel rendering (default: %(default)s)")
    p.add_argument("--line-width", type=float, default=0.025, help="paint width, m (default: %(default)s)")

    p = sub.add_parser("report", parents=[common], help="metrics report for a simulation log")
    p.add_argument("log", type=Path)
    p.add_argument("--schedule", type=Path, required=True)

    p = sub.add_parser("pipeline", parents=[common], help="run all stages from a manifest")
    p.add_argument("manifest", type=Path, nargs="?", default=DATA_DIR / "atl_manifest.json",
                   help="pipeline manifest (default: bundled ATL demo)")
    p.add_argument("--reuse", action="store_true", help="skip stages whose artifact already exists")
    return parser


def _require(path: Path, code: int = EXIT_PARSE) -> Path:
    if not path.is_file():
        raise StageError(f"file not found: {path}", code)
    return path


def _guard(code: int, fn):
    try:
        return fn()
    except StageError:
        raise
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as exc:
        raise StageError(str(exc), code) from exc


def _robot(args) -> mdl.RobotModel:
    if args.robot is None:
        return mdl.RobotModel()
    return _guard(EXIT_PARSE, lambda: mdl.RobotModel.load(_require(args.robot)))


def cmd_capture(args) -> None:
    seg = dict(closure_dist_max=args.closure, paint_speed_max=args.paint_speed, arclength_min=args.min_arc,
               nms_window=args.nms_window)
    lib = _guard(EXIT_PARSE, lambda: pipeline.build_library([_require(p) for p in args.inputs], seg,
                                                            args.nozzle_offset))
    export_library(lib, args.out / "library.json")


def cmd_compose(args) -> None:
    model = _robot(args)

    def run():
        spec = PaintingSpec.load(_require(args.painting))
        placed = compose(spec, load_library(_require(args.library)), mdl.wfw_rectangle(model, args.wfw_step))
        pipeline.save_composition(placed, args.out / "composition.json")
    _guard(EXIT_PARSE, run)


def cmd_plan(args) -> None:
    def run():
        placed = pipeline.load_composition(_require(args.composition))
        order_painting(placed, args.line_spacing, args.start).save(args.out / "path.json")
    _guard(EXIT_PLAN, run)


def cmd_trajectory(args) -> None:
    def run():
        traj = trajgen.discretize(PaintPath.load(_require(args.path)), dt=args.dt, lead_in=args.lead_in)
        traj.to_csv(args.out / "trajectory.csv")
    _guard(EXIT_PLAN, run)


def cmd_optimize(args) -> None:
    model = _robot(args)

    def run():
        traj = trajgen.TimedTrajectory.from_csv(_require(args.trajectory))
        cfg = optimizer.ILQRConfig(R=args.r_scale * np.eye(4), max_iterations=args.max_iterations, dt=traj.dt)
        schedule, report = optimizer.solve(optimizer.build_problem(model, traj, cfg))
        logging.info("iLQR: %d iterations, cost %.6g, converged=%s", report.iterations, report.costs[-1],
                     report.converged)
        schedule.to_csv(args.out / "schedule.csv")
    _guard(EXIT_OPTIMIZE, run)


def cmd_simulate(args) -> None:
    model = _robot(args)

    def run():
        schedule = optimizer.ControlSchedule.from_csv(_require(args.schedule))
        cfg = runtime.RuntimeConfig(control_rate=args.rate, encoder_noise_std=args.encoder_noise,
                                    rate_noise_std=args.rate_noise, paint_latency=args.latency, seed=args.seed)
        runtime.simulate(model, schedule, cfg).to_csv(args.out / "log.csv")
    _guard(EXIT_SIMULATE, run)


def cmd_calibrate(args) -> None:
    model = _robot(args)

    def run():
        log = calibration.CalibLog.from_csv(_require(args.log))
        res = calibration.calibrate(log, calibration.CalibParams.from_model(model), model,
                                    fit_offset=not args.no_offset, tie_scale=args.tie_scale)
        res.params.save(args.out / "calibration.json")
        res.params.apply(model).save(args.out / "robot_calibrated.json")
        logging.info("calibration cost %.3e after %d iterations", res.cost, res.iterations)
    _guard(EXIT_CALIBRATE, run)


def cmd_render(args) -> None:
    model = _robot(args)

    def run():
        src = _require(args.source)
        source = runtime.SimulationLog.from_csv(src) if src.suffix == ".csv" else PaintPath.load(src)
        render_preview(source, args.out / "preview.svg", args.style, args.line_width, frame=model.frame)
    _guard(EXIT_OUTPUT, run)


def cmd_report(args) -> None:
    model = _robot(args)

    def run():
        log = runtime.SimulationLog.from_csv(_require(args.log))
        schedule = optimizer.ControlSchedule.from_csv(_require(args.schedule))
        pipeline.write_report(pipeline.build_report(log, schedule, model, seed=args.seed), args.out / "report.json")
    _guard(EXIT_OUTPUT, run)


def cmd_pipeline(args) -> None:
    manifest = pipeline.PipelineManifest.load(args.manifest)
    # command-line flags override the manifest only when given explicitly
    for flag in ("out", "seed", "dt", "rate", "robot"):
        if any(tok == f"--{flag}" or tok.startswith(f"--{flag}=") for tok in args.argv):
            value = getattr(args, flag)
            setattr(manifest, flag, str(value.resolve()) if isinstance(value, Path) else value)
    if args.reuse:
        manifest.reuse = True
    artifacts = pipeline.run_pipeline(manifest)
    for name, path in artifacts.items():
        print(f"{name}: {path}")


COMMANDS = {
    "capture": cmd_capture, "compose": cmd_compose, "plan": cmd_plan, "trajectory": cmd_trajectory,
    "optimize": cmd_optimize, "simulate": cmd_simulate, "calibrate": cmd_calibrate, "render": cmd_render,
    "report": cmd_report, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command != "pipeline":
        args.out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
