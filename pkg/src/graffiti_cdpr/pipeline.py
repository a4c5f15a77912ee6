"""End-to-end pipeline: each stage reads and writes a file artifact in the output directory."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import MultiPolygon, Polygon

from graffiti_cdpr import capture, model as mdl, optimizer, runtime, trajgen
from graffiti_cdpr.model import RobotModel
from graffiti_cdpr.pathgen import PaintingSpec, PlacedShape, compose, load_gml, load_svg_paths, order_painting
from graffiti_cdpr.render import render_preview
from graffiti_cdpr.strokes import PaintPath, Stroke, export_library, load_library

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_PLAN = 4
EXIT_OPTIMIZE = 5
EXIT_SIMULATE = 6
EXIT_CALIBRATE = 7
EXIT_OUTPUT = 8

STAGES = ("capture", "compose", "plan", "trajectory", "optimize", "simulate", "report", "render")
ARTIFACTS = {
    "capture": "library.json",
    "compose": "composition.json",
    "plan": "path.json",
    "trajectory": "trajectory.csv",
    "optimize": "schedule.csv",
    "simulate": "log.csv",
    "report": "report.json",
    "render": "preview.svg",
}
STAGE_EXIT = {
    "capture": EXIT_PARSE, "compose": EXIT_PARSE, "plan": EXIT_PLAN, "trajectory": EXIT_PLAN,
    "optimize": EXIT_OPTIMIZE, "simulate": EXIT_SIMULATE, "report": EXIT_OUTPUT, "render": EXIT_OUTPUT,
}


class StageError(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class PipelineManifest:
    """Inputs, stage toggles and settings for one pipeline run.

    Relative paths are resolved against ``base_dir`` (the manifest's folder).
    """

    painting: str
    library: str | None = None
    shapes: list = field(default_factory=list)
    robot: str | None = None
    out: str = "out"
    seed: int = 0
    stages: dict = field(default_factory=dict)
    reuse: bool = False
    dt: float = 0.01
    rate: float = 1000.0
    line_spacing: float = 0.025
    start: list | None = field(default_factory=lambda: [0.0, 0.0])
    wfw_step: float = 0.05
    encoder_noise_std: float = 0.0
    rate_noise_std: float = 0.0
    paint_latency: float = 0.4
    lead_in: float | None = None  # rest before the first stroke; defaults to paint_latency
    style: str = "dashed"
    segmentation: dict = field(default_factory=dict)
    nozzle_offset: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    base_dir: str = "."

    def __post_init__(self):
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise StageError(f"unknown stages in manifest: {sorted(unknown)}", EXIT_USAGE)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def enabled(self, stage: str) -> bool:
        return bool(self.stages.get(stage, True))

    def check_inputs(self) -> None:
        refs = [self.painting, self.library, self.robot, *self.shapes]
        for ref in refs:
            if ref is not None and not self.resolve(ref).is_file():
                raise StageError(f"input file not found: {self.resolve(ref)}", EXIT_PARSE)
        if self.library is None and not self.shapes:
            raise StageError("manifest needs a library or shape inputs", EXIT_PARSE)

    @classmethod
    def load(cls, path) -> "PipelineManifest":
        path = Path(path)
        if not path.is_file():
            raise StageError(f"manifest not found: {path}", EXIT_PARSE)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StageError(f"{path}: invalid JSON ({exc})", EXIT_PARSE) from None
        d.setdefault("base_dir", str(path.parent))
        try:
            return cls(**d)
        except TypeError as exc:
            raise StageError(f"{path}: {exc}", EXIT_PARSE) from None


def load_robot(path) -> RobotModel:
    return RobotModel() if path is None else RobotModel.load(path)


# --- shape inputs ------------------------------------------------------------------


def shapes_from_file(path, segmentation: dict | None = None, nozzle_offset=(0.0, 0.0, 0.0)) -> dict:
    """Named paint strokes from a library, GML, SVG or mocap CSV file."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        return load_library(path)
    if suffix == ".gml" or suffix == ".xml":
        return load_gml(path)
    if suffix == ".svg":
        merged = [s for strokes in load_svg_paths(path).values() for s in strokes]
        return {path.stem: merged}
    if suffix == ".csv":
        rec = capture.read_mocap(path)
        cTn = capture.RigidFrame(np.eye(3), nozzle_offset)
        trace = capture.nozzle_trace(rec, cTn)
        strokes = capture.segment_strokes(trace, capture.SegmentationConfig(**(segmentation or {})))
        return {path.stem: [s for s in strokes if s.paint]}
    raise ValueError(f"unsupported shape input {path.name!r}")


def build_library(inputs, segmentation=None, nozzle_offset=(0.0, 0.0, 0.0)) -> dict:
    library = {}
    for p in inputs:
        for name, strokes in shapes_from_file(p, segmentation, nozzle_offset).items():
            if name in library:
                raise ValueError(f"duplicate name: {name}")
            library[name] = strokes
    return library


# --- composition artifact ----------------------------------------------------------


def _region_to_json(region):
    if region is None:
        return None
    polys = region.geoms if isinstance(region, MultiPolygon) else [region]
    return [{"exterior": list(map(list, p.exterior.coords)), "holes": [list(map(list, r.coords)) for r in p.interiors]}
            for p in polys]


def _region_from_json(d):
    if d is None:
        return None
    polys = [Polygon(p["exterior"], p["holes"]) for p in d]
    return polys[0] if len(polys) == 1 else MultiPolygon(polys)


def save_composition(placed, path) -> None:
    doc = {"shapes": [{"id": s.id, "face": s.face, "outline": s.outline,
                       "strokes": [st.to_dict() for st in s.outlines], "region": _region_to_json(s.region)}
                      for s in placed]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_composition(path) -> list:
    doc = json.loads(Path(path).read_text())
    return [PlacedShape(s["id"], tuple(Stroke.from_dict(d) for d in s["strokes"]), _region_from_json(s["region"]),
                        s["face"], s["outline"]) for s in doc["shapes"]]


# --- report ------------------------------------------------------------------------


def build_report(log: runtime.SimulationLog, schedule: optimizer.ControlSchedule, model: RobotModel,
                 path: PaintPath | None = None, seed: int | None = None) -> dict:
    m = runtime.metrics(log, schedule)
    report = {
        "metrics": m.as_dict(),
        "painted_length_m": runtime.painted_length(log),
        "duration_s": float(schedule.duration),
        "schedule_steps": len(schedule),
        "control_ticks": len(log),
        "torque_violations": schedule.torque_violations(model),
        "model": model.digest(),
    }
    if path is not None:
        report["planned_paint_length_m"] = path.paint_length()
    if seed is not None:
        report["seed"] = seed
    return report


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# --- runner ------------------------------------------------------------------------


def _stage(name: str, fn):
    try:
        return fn()
    except StageError:
        raise
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as exc:
        raise StageError(f"{name} failed: {exc}", STAGE_EXIT[name]) from exc


def run_pipeline(manifest: PipelineManifest) -> dict:
    """Run every enabled stage in order and return the artifact paths.

    With ``manifest.reuse`` a stage whose artifact already exists is skipped.
    Raises StageError (carrying the exit code) at the first failing stage.
    """
    manifest.check_inputs()
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    art = {k: out / v for k, v in ARTIFACTS.items()}
    model = _stage("capture", lambda: load_robot(manifest.resolve(manifest.robot)))

    def needed(stage):
        if not manifest.enabled(stage):
            return False
        if manifest.reuse and art[stage].exists():
            logger.info("skipping %s: %s exists", stage, art[stage])
            return False
        return True

    def require(stage):
        if not art[stage].exists():
            raise StageError(f"missing artifact {art[stage]} (stage '{stage}' disabled?)", STAGE_EXIT[stage])
        return art[stage]

    if needed("capture"):
        def do_capture():
            inputs = ([manifest.resolve(manifest.library)] if manifest.library else []) + [
                manifest.resolve(p) for p in manifest.shapes]
            library = build_library(inputs, manifest.segmentation, manifest.nozzle_offset)
            export_library(library, art["capture"])
        _stage("capture", do_capture)

    if needed("compose"):
        def do_compose():
            library = load_library(require("capture"))
            spec = PaintingSpec.load(manifest.resolve(manifest.painting))
            placed = compose(spec, library, mdl.wfw_rectangle(model, manifest.wfw_step))
            save_composition(placed, art["compose"])
        _stage("compose", do_compose)

    if needed("plan"):
        def do_plan():
            placed = load_composition(require("compose"))
            order_painting(placed, manifest.line_spacing, manifest.start).save(art["plan"])
        _stage("plan", do_plan)

    if needed("trajectory"):
        def do_traj():
            lead = manifest.paint_latency if manifest.lead_in is None else manifest.lead_in
            traj = trajgen.discretize(PaintPath.load(require("plan")), dt=manifest.dt, lead_in=lead)
            traj.to_csv(art["trajectory"])
        _stage("trajectory", do_traj)

    if needed("optimize"):
        def do_opt():
            traj = trajgen.TimedTrajectory.from_csv(require("trajectory"))
            cfg = optimizer.ILQRConfig(dt=traj.dt)
            schedule, report = optimizer.solve(optimizer.build_problem(model, traj, cfg))
            if report.torque_violations:
                logger.warning("%d feedforward torques outside limits", report.torque_violations)
            schedule.to_csv(art["optimize"])
        _stage("optimize", do_opt)

    if needed("simulate"):
        def do_sim():
            schedule = optimizer.ControlSchedule.from_csv(require("optimize"))
            cfg = runtime.RuntimeConfig(control_rate=manifest.rate, encoder_noise_std=manifest.encoder_noise_std,
                                        rate_noise_std=manifest.rate_noise_std,
                                        paint_latency=manifest.paint_latency, seed=manifest.seed)
            runtime.simulate(model, schedule, cfg).to_csv(art["simulate"])
        _stage("simulate", do_sim)

    if needed("report"):
        def do_report():
            log = runtime.SimulationLog.from_csv(require("simulate"))
            schedule = optimizer.ControlSchedule.from_csv(require("optimize"))
            path = PaintPath.load(art["plan"]) if art["plan"].exists() else None
            write_report(build_report(log, schedule, model, path, manifest.seed), art["report"])
        _stage("report", do_report)

    if needed("render"):
        def do_render():
            source = (runtime.SimulationLog.from_csv(art["simulate"]) if art["simulate"].exists()
                      else PaintPath.load(require("plan")))
            render_preview(source, art["render"], manifest.style, frame=model.frame)
        _stage("render", do_render)

    return {k: v for k, v in art.items() if v.exists()}
