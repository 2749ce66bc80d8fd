"""Command-line entry point: ``bboxprop {track,eval,simulate,ablate,regions}``.

Settings resolve as built-in defaults < ``--config`` JSON file < flags.
Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .evaluation import EvalError, ablation_grid, ablation_text, evaluate
from .ingest import (
    DataError,
    load_config,
    read_detections,
    read_ground_truth,
    read_tracks,
    write_detections,
    write_ground_truth,
    write_tracks,
    write_tracks_jsonl,
)
from .pipeline import run_pipeline
from .propagation import ConfigError, ConstantValidator, OracleValidator, PropagationConfig
from .regions import PRESETS, RegionError, RegionSpec, SceneClass, fit_region_spec
from .sim import NOISE_PRESETS, corrupt_detections, generate_scene, random_scene, save_scene
from .tracker import Status, plan_segments

log = logging.getLogger("bboxprop")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


@dataclass
class RunConfig:
    detections: str | None = None
    ground_truth: str | None = None
    tracks: str | None = None
    output_dir: str = "out"
    regions: str | None = None
    preset: str | None = None
    format: str = "mot-csv"
    segment_size: int = 3
    n_frames: int | None = None
    scene: str = "both"
    validator: str = "oracle"
    flip_prob: float = 0.0
    seed: int = 0
    propagation: dict = field(default_factory=dict)
    # simulate / regions only
    n_cars: int = 24
    n_parked: int = 1
    dwell_prob: float = 0.3
    k: int = 3
    margin: float = 0.3
    boundaries: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _region_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--regions", help="fitted RegionSpec JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named RegionSpec preset")
    p.add_argument("--scene", choices=[s.value for s in SceneClass])


def _pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--detections")
    p.add_argument("--format", choices=["mot-csv", "jsonl"])
    p.add_argument("--segment-size", type=int)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--gt", dest="ground_truth", help="ground truth (oracle validator, scoring)")
    p.add_argument("--validator", choices=["oracle", "accept", "reject"])
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--no-kf-if", dest="kf_to_if", action="store_false", default=None)
    p.add_argument("--no-if-kf", dest="if_to_kf", action="store_false", default=None)
    p.add_argument("--no-hcc", dest="hcc", action="store_false", default=None)
    p.add_argument("--hcc-threshold", type=float)
    p.add_argument("--existing-limit", dest="attempt_limit_existing", type=int)
    p.add_argument("--failure-limit", dest="attempt_limit_failure", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bboxprop",
        description="Track, propagate and score vehicle detections from a fixed fisheye camera.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("track", help="run the detection post-processing pipeline")
    _common(p)
    _region_args(p)
    _pipeline_args(p)

    p = sub.add_parser("eval", help="score tracks against ground truth")
    _common(p)
    _region_args(p)
    p.add_argument("--tracks", help="tracks.csv or tracks.jsonl written by 'track'")
    p.add_argument("--gt", dest="ground_truth")

    p = sub.add_parser("simulate", help="generate a synthetic scene and its detections")
    _common(p)
    p.add_argument("--preset", choices=sorted(NOISE_PRESETS), help="detection-noise preset")
    p.add_argument("--n-cars", type=int)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-parked", type=int)
    p.add_argument("--dwell-prob", type=float)
    p.add_argument("--segment-size", type=int)
    p.add_argument("--format", choices=["mot-csv", "jsonl"])

    p = sub.add_parser("ablate", help="score all eight propagation toggle combinations")
    _common(p)
    _region_args(p)
    _pipeline_args(p)

    p = sub.add_parser("regions", help="fit a RegionSpec from ground truth")
    _common(p)
    p.add_argument("--gt", dest="ground_truth")
    p.add_argument("--k", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--boundaries", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma-separated fixed ring radii; only area bands are fitted")
    p.add_argument("--scene", choices=[s.value for s in SceneClass])
    return parser


_PROP_FLAGS = ("kf_to_if", "if_to_kf", "hcc", "hcc_threshold", "attempt_limit_existing", "attempt_limit_failure")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.command == "simulate":
        cfg.preset = "night"
    if getattr(args, "config", None):
        try:
            raw = load_config(args.config)
        except (FileNotFoundError, DataError) as exc:
            raise ConfigError(str(exc)) from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    over = {k: v for k, v in vars(args).items() if k in {f.name for f in fields(RunConfig)} and v is not None}
    cfg = replace(cfg, **over)
    prop = dict(cfg.propagation)
    for k in _PROP_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            prop[k] = v
    cfg.propagation = prop
    return cfg


def _load_regions(cfg: RunConfig) -> RegionSpec:
    if cfg.regions:
        return RegionSpec.load(cfg.regions)
    name = cfg.preset or "icip2020"
    if name not in PRESETS:
        raise ConfigError(f"unknown region preset {name!r}")
    return PRESETS[name]


def _validator(cfg: RunConfig, gt):
    if cfg.validator == "accept":
        return ConstantValidator(True)
    if cfg.validator == "reject":
        return ConstantValidator(False)
    if cfg.validator == "oracle":
        if gt is None:
            raise ConfigError("the oracle validator needs ground truth (--gt)")
        return OracleValidator(gt, flip_prob=cfg.flip_prob, seed=cfg.seed)
    raise ConfigError(f"unknown validator {cfg.validator!r}")


def _require(value, what: str):
    if not value:
        raise ConfigError(f"missing required setting: {what}")
    return value


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _pipeline_inputs(cfg: RunConfig):
    spec = _load_regions(cfg)
    prop = PropagationConfig.from_dict(cfg.propagation)
    dets = read_detections(_require(cfg.detections, "detections"), cfg.format, cfg.segment_size, cfg.n_frames)
    gt = read_ground_truth(cfg.ground_truth) if cfg.ground_truth else None
    return spec, prop, dets, gt


def cmd_track(cfg: RunConfig) -> int:
    spec, prop, dets, gt = _pipeline_inputs(cfg)
    needs_validator = prop.if_to_kf or prop.hcc
    validator = _validator(cfg, gt) if needs_validator else None
    res = run_pipeline(dets, spec, cfg.n_frames, cfg.segment_size, prop, validator, cfg.scene)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tracks(res.tracks, out / "tracks.csv")
    write_tracks_jsonl(res.tracks, out / "tracks.jsonl")
    summary = {
        "config": {**cfg.to_dict(), "propagation": prop.to_dict(), "region_spec": spec.to_dict()},
        **res.stats,
    }
    _write_json(out / "summary.json", summary)
    log.info("wrote %d tracks to %s", len(res.tracks), out)
    print(json.dumps(res.stats["box_sources"], sort_keys=True))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    spec = _load_regions(cfg)
    gt = read_ground_truth(_require(cfg.ground_truth, "ground truth (--gt)"))
    tracks = read_tracks(_require(cfg.tracks, "tracks"))
    moving = [t for t in tracks if t.status is not Status.STATIONARY]
    rep = evaluate(moving, gt, spec)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.txt").write_text(rep.to_text())
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.preset not in NOISE_PRESETS:
        raise ConfigError(f"unknown noise preset {cfg.preset!r}; choose from {sorted(NOISE_PRESETS)}")
    n_frames = cfg.n_frames or 600
    scene = random_scene(cfg.n_cars, n_frames, cfg.seed, dwell_prob=cfg.dwell_prob, n_parked=cfg.n_parked)
    gt = generate_scene(scene)
    noise = replace(NOISE_PRESETS[cfg.preset], seed=cfg.seed)
    plan = plan_segments(n_frames, cfg.segment_size)
    # the clean preset models a detector that sees every frame in full
    dets = corrupt_detections(gt, noise, None if cfg.preset == "clean" else plan, scene.geometry, n_frames)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ground_truth(gt, out / "gt.csv")
    suffix = "jsonl" if cfg.format == "jsonl" else "csv"
    write_detections(dets, out / f"detections.{suffix}", cfg.format)
    save_scene(scene, out / "scene.json")
    _write_json(out / "noise.json", noise.to_dict())
    print(f"{len(scene.cars)} cars, {len(gt)} ground-truth boxes, {len(dets)} detections -> {out}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    spec, prop, dets, gt = _pipeline_inputs(cfg)
    if gt is None:
        raise ConfigError("ablation needs ground truth (--gt)")
    _validator(cfg, gt)  # fail early on a bad validator choice
    rows = ablation_grid(
        dets, gt, spec, lambda: _validator(cfg, gt), cfg.n_frames, cfg.segment_size, prop, cfg.scene
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation.json", rows)
    (out / "ablation.txt").write_text(ablation_text(rows))
    print(ablation_text(rows), end="")
    return EXIT_OK


def cmd_regions(cfg: RunConfig) -> int:
    gt = read_ground_truth(_require(cfg.ground_truth, "ground truth (--gt)"))
    spec = fit_region_spec(
        [(g.box, cfg.scene) for g in gt], k=cfg.k, margin=cfg.margin, boundaries=cfg.boundaries
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "regions.json")
    print(json.dumps(spec.to_dict(), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "track": cmd_track,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "ablate": cmd_ablate,
    "regions": cmd_regions,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, TypeError) as exc:
        print(f"bboxprop: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, EvalError, RegionError, ValueError) as exc:
        print(f"bboxprop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
