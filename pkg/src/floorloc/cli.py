"""Command-line frontend: localize, evaluate, synth, render.

Config precedence is flags > config file > defaults, and the effective
configuration is echoed into every output for provenance. Exit codes:
0 success, 2 input error, 3 a degenerate fallback was taken.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields as dc_fields
from dataclasses import replace
from pathlib import Path

import numpy as np

from .eval import (
    SceneParams,
    build_benchmark,
    generate_scene,
    pose_error,
    run_benchmark,
    run_topk_timing,
    run_weight_sweep,
)
from .extraction import PipelineConfig, localize
from .floorplan import FloorplanError, load_floorplan, save_floorplan
from .probvolume import load_volume, save_volume
from .raycast import Pose, cast_bundle
from .rays import NoiseModel, load_predictions, perturb
from .render import heatmap_image, render_localization, write_pgm

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3


def _workers_default() -> int:
    env = os.environ.get("FLOORLOC_WORKERS")
    if env:
        return max(1, int(env))
    return 1


_CONFIG_FLAGS = {
    "coarse_rays": int, "ray_count": int, "fov_deg": float,
    "orientation_bins": int, "w_s": float, "t_room": float, "top_k": int,
    "delta_res": float, "delta_ang": float, "delta_max": float,
    "alpha": float, "lambda_d": float, "lambda_s": float,
    "max_range": float, "vote_window": int, "workers": int,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with pipeline config overrides")
    for name, typ in _CONFIG_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None,
                       dest=f"cfg_{name}")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--no-interior-mask", action="store_true")


def _build_config(args) -> PipelineConfig:
    overrides = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        allowed = {f.name for f in dc_fields(PipelineConfig)}
        bad = set(doc) - allowed
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        overrides.update(doc)
    for name in _CONFIG_FLAGS:
        val = getattr(args, f"cfg_{name}", None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "no_refine", False):
        overrides["refine_enabled"] = False
    if getattr(args, "no_interior_mask", False):
        overrides["use_interior_mask"] = False
    overrides.setdefault("workers", _workers_default())
    return PipelineConfig(**overrides)


def _dump_json(doc: dict, path: Path | None) -> str:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n")
    return text


def cmd_localize(args) -> int:
    cfg = _build_config(args)
    fp = load_floorplan(args.floorplan)
    gt = None
    room_hint = None
    if args.oracle:
        parts = [float(v) for v in args.oracle.split(",")]
        if len(parts) != 3:
            raise ValueError("--oracle expects x,y,theta_deg")
        gt = Pose(*parts)
        bundle = cast_bundle(fp, gt, cfg.cam_highres())
        if args.noise_depth or args.noise_flip:
            noise = NoiseModel(depth_sigma=args.noise_depth,
                               label_flip_prob=args.noise_flip,
                               rng_seed=args.noise_seed)
            bundle = perturb(bundle, noise)
    else:
        if not args.prediction:
            raise ValueError("provide a prediction file or --oracle x,y,theta")
        records = load_predictions(args.prediction)
        if not records:
            raise ValueError(f"{args.prediction}: no prediction records")
        if args.query_id:
            matches = [r for r in records if r.query_id == args.query_id]
            if not matches:
                raise ValueError(f"query id {args.query_id!r} not in file")
            record = matches[0]
        else:
            record = records[0]
        bundle = record.bundle(camera=cfg.cam_highres())
        room_hint = record.room_hint()
    if args.room_hint:
        label, _, conf = args.room_hint.rpartition(":")
        room_hint = (label, float(conf))

    want_volumes = bool(args.render or args.save_volumes)
    result = localize(fp, bundle, room_hint, cfg, return_volumes=want_volumes)
    doc = result.to_dict(config=cfg)
    if gt is not None:
        dist, ang = pose_error(result.pose, gt)
        doc["gt"] = {"x": gt.x, "y": gt.y, "theta_deg": gt.theta_deg}
        doc["error"] = {"dist_m": dist, "ang_deg": ang}
    text = _dump_json(doc, Path(args.out) if args.out else None)
    print(text)
    if args.render:
        render_localization(result.volumes, result.pose, args.render, gt=gt)
    if args.save_volumes:
        out_dir = Path(args.save_volumes)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, vol in result.volumes.items():
            save_volume(vol, out_dir / f"{name}.flpv")
    return EXIT_DEGENERATE if result.degenerate else EXIT_OK


def _scene_params_from_spec(doc: dict) -> SceneParams:
    kwargs = {}
    if "extent_m" in doc:
        kwargs["extent_m"] = tuple(doc["extent_m"])
    if "room_grid" in doc:
        kwargs["room_grid"] = tuple(doc["room_grid"])
    for key in ("opening_density", "seed", "resolution", "wall_jitter_cells",
                "extra_door_prob", "ambiguity_pair"):
        if key in doc:
            kwargs[key] = doc[key]
    return SceneParams(**kwargs)


def cmd_evaluate(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    scene_doc = spec.get("scenes", {})
    params = _scene_params_from_spec(scene_doc)
    n_scenes = int(scene_doc.get("count", 5))
    queries = int(spec.get("queries_per_scene", 10))
    noise_doc = spec.get("noise", {})
    noise = NoiseModel(depth_sigma=float(noise_doc.get("depth_sigma", 0.0)),
                       label_flip_prob=float(noise_doc.get("label_flip_prob", 0.0)),
                       rng_seed=int(noise_doc.get("rng_seed", 0)))
    cfg_doc = dict(spec.get("pipeline", {}))
    if args.workers is not None:
        cfg_doc["workers"] = args.workers
    cfg_doc.setdefault("workers", _workers_default())
    cfg = PipelineConfig(**cfg_doc)

    hint_conf = spec.get("hint_confidence")
    packs = build_benchmark(params, n_scenes, queries, cfg, noise,
                            query_seed=int(spec.get("query_seed", 1234)),
                            hint_confidence=hint_conf)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_benchmark(packs, cfg, use_hints=bool(spec.get("use_hints", False)))
    _dump_json(result.to_dict(), out_dir / "report.json")
    with open(out_dir / "per_query.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "scene_id", "dist_m", "ang_deg"])
        for o in result.outcomes:
            writer.writerow([o.query_id, o.scene_id,
                             f"{o.dist_m:.6f}", f"{o.ang_deg:.6f}"])

    if args.sweep:
        name, _, rng_spec = args.sweep.partition("=")
        if name != "ws":
            raise ValueError("only ws sweeps are supported, e.g. --sweep ws=0:1:0.1")
        start, stop, step = (float(v) for v in rng_spec.split(":"))
        weights = [round(v, 10) for v in np.arange(start, stop + step / 2, step)]
        rows = run_weight_sweep(packs, cfg, weights)
        with open(out_dir / "sweep_ws.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["w_s", "r_0.1m", "r_0.5m", "r_1m", "r_1m_30deg"])
            for w, rep in rows:
                writer.writerow([w, rep.recall_01, rep.recall_05,
                                 rep.recall_1, rep.recall_1_30])

    if args.topk:
        ks = [int(v) for v in args.topk.split(",")]
        rows = run_topk_timing(packs, cfg, ks)
        with open(out_dir / "timing_topk.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["top_k"]
            for stage in ("prediction", "localization", "refinement", "total"):
                header += [f"{stage}_mean_s", f"{stage}_std_s"]
            header += ["recall_1m_30deg"]
            writer.writerow(header)
            for row in rows:
                out = [row["top_k"]]
                for stage in ("prediction", "localization", "refinement", "total"):
                    out += [f"{row[f'{stage}_mean_s']:.6f}",
                            f"{row[f'{stage}_std_s']:.6f}"]
                out += [f"{row['recall_1m_30deg']:.4f}"]
                writer.writerow(out)
    print(f"report written to {out_dir}")
    return EXIT_OK


def _parse_pair(text: str, caster):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected AxB, got {text!r}")
    return caster(parts[0]), caster(parts[1])


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        params = SceneParams(
            extent_m=_parse_pair(args.extent, float),
            room_grid=_parse_pair(args.room_grid, int),
            opening_density=args.opening_density,
            seed=args.seed + i,
            resolution=args.resolution,
            ambiguity_pair=args.ambiguity_pair,
        )
        fp = generate_scene(params)
        save_floorplan(fp, out_dir / f"scene{i:03d}.json")
    print(f"wrote {args.count} scene(s) to {out_dir}")
    return EXIT_OK


def cmd_render(args) -> int:
    load_floorplan(args.floorplan)  # validates the pair belongs together
    values = load_volume(args.volume)
    proj = values.max(axis=2)
    peak = proj.max()
    img = (np.zeros(proj.shape, dtype=np.uint8) if peak <= 0
           else np.round(proj / peak * 255.0).astype(np.uint8))
    write_pgm(img, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floorloc",
        description="Floorplan localization from depth + semantic rays")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="localize one query against a plan")
    p.add_argument("floorplan")
    p.add_argument("prediction", nargs="?", help="JSONL prediction file")
    p.add_argument("--query-id", default=None)
    p.add_argument("--oracle", default=None,
                   help="cast ground-truth rays at x,y,theta instead of a file")
    p.add_argument("--noise-depth", type=float, default=0.0)
    p.add_argument("--noise-flip", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--room-hint", default=None, help="LABEL:CONFIDENCE")
    p.add_argument("--render", default=None, help="directory for heatmap images")
    p.add_argument("--save-volumes", default=None, help="directory for .flpv dumps")
    p.add_argument("--out", default=None, help="write the result JSON here too")
    _add_config_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="run a benchmark spec")
    p.add_argument("spec")
    p.add_argument("--out-dir", default="eval_out")
    p.add_argument("--sweep", default=None, help="e.g. ws=0:1:0.1")
    p.add_argument("--topk", default=None, help="e.g. 1,3,5")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", default="10x8")
    p.add_argument("--room-grid", default="2x3")
    p.add_argument("--opening-density", type=float, default=0.6)
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--ambiguity-pair", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render a saved volume to a PGM heatmap")
    p.add_argument("floorplan")
    p.add_argument("volume")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FloorplanError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
