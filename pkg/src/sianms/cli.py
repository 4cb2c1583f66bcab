"""Command-line interface.

Subcommands:
  generate   build a synthetic scene file from a rig/generator spec
  simulate   emit 2D detections for an existing scene file
  run        run one pipeline variant over a scene and write its artifacts
  compare    run all four variants and write side-by-side reports
  eval-reid  score a matches file against labeled detections
  eval-3d    score a 3D boxes file against scene ground truth

Exit codes: 0 success, 1 usage error, 2 schema error in an input file,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .matching import MissingEmbedding
from .metrics import (
    EvalConfig3D,
    Gt3D,
    Pred3D,
    evaluate_3d,
    overlap_region_filter,
    visible_camera_count,
)
from .pipeline import (
    VARIANT_ORDER,
    Variant,
    compare_variants,
    run_pipeline,
)
from .reid_eval import MissingTruth, accumulate, evaluate_frame
from .scene import CameraModel, CameraRig, Pose
from .sceneio import (
    SchemaError,
    detections_by_frame,
    load_config,
    load_detection_records,
    load_matches,
    load_boxes,
    load_scene,
    matches_against_detections,
    write_boxes,
    write_comparison,
    write_detections,
    write_matches,
    write_report,
    write_scene,
)
from .synthgen import GenSpec, RigSpec, generate_frame, make_rig, simulate_detections
from .pipeline import Frame, Scene


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A002 - argparse API
        raise _UsageError(message)


def _common_flags() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override generator seed")
    common.add_argument("--tau", type=float, default=None, help="match distance threshold")
    common.add_argument("--alpha", type=float, default=None, help="contrastive positive margin")
    common.add_argument("--beta", type=float, default=None, help="contrastive negative margin")
    common.add_argument("--emb-dim", type=int, default=None, help="embedding dimension")
    common.add_argument("--nms-iou", type=float, default=None, help="greedy NMS IoU threshold")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv")
    fmt.add_argument("--text", dest="format", action="store_const", const="text")
    common.set_defaults(format="text")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="sianms", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic scene")
    p.add_argument("--spec", default=None, help="JSON with 'rig' and 'gen' sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lidar-bin", action="store_true", help="write clouds as binary side files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", parents=[common], help="emit detections for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output detections file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", parents=[common], help="run one variant")
    p.add_argument("--scene", required=True)
    p.add_argument("--variant", required=True, choices=[v.value for v in VARIANT_ORDER])
    p.add_argument("--config", default=None)
    p.add_argument("--detections", default=None, help="bypass the simulator with this file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="run all four variants")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--detections", default=None, help="bypass the simulator with this file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval-reid", parents=[common], help="score a matches file")
    p.add_argument("--matches", required=True)
    p.add_argument("--detections", required=True)
    p.set_defaults(func=cmd_eval_reid)

    p = sub.add_parser("eval-3d", parents=[common], help="score a 3D boxes file")
    p.add_argument("--pred", required=True, help="boxes file")
    p.add_argument("--gt", required=True, help="scene file holding ground truth")
    p.add_argument("--region", default="all", choices=["all", "overlap"])
    p.set_defaults(func=cmd_eval_3d)
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["gen.seed"] = args.seed
    if args.tau is not None:
        out["tau"] = args.tau
    if args.alpha is not None:
        out["loss.alpha"] = args.alpha
    if args.beta is not None:
        out["loss.beta"] = args.beta
    if args.emb_dim is not None:
        out["gen.embed_dim"] = args.emb_dim
    if args.nms_iou is not None:
        out["nms_iou"] = args.nms_iou
    return out


def _emit(payload: dict, fmt: str, text: str, csv: str) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    elif fmt == "csv":
        print(csv, end="")
    else:
        print(text, end="")


def cmd_generate(args) -> int:
    rig_data, gen_data = {}, {}
    if args.spec is not None:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise SchemaError("spec: expected an object")
        rig_data = raw.get("rig", {})
        gen_data = raw.get("gen", {})
    if args.seed is not None:
        gen_data = dict(gen_data, seed=args.seed)
    if args.emb_dim is not None:
        gen_data = dict(gen_data, embed_dim=args.emb_dim)
    try:
        for key in ("objects_per_frame", "radius_range", "lidar_points_range"):
            if key in gen_data:
                gen_data[key] = tuple(gen_data[key])
        rig_spec = RigSpec(**rig_data)
        gen_spec = GenSpec(**gen_data)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"spec: {exc}") from exc
    rig = make_rig(rig_spec)
    frames = []
    for index in range(gen_spec.n_frames):
        objects, cloud = generate_frame(rig, gen_spec, index)
        frames.append(Frame(index=index, objects=tuple(objects), cloud=cloud))
    scene = Scene(rig=rig, frames=tuple(frames))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_path = out_dir / "scene.json"
    write_scene(scene_path, scene, lidar_bin=args.lidar_bin)
    n_objects = sum(len(f.objects) for f in frames)
    print(f"wrote {scene_path}: {len(frames)} frames, {n_objects} objects")
    return 0


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    cfg = load_config(args.config, _overrides(args))
    dets = {
        frame.index: simulate_detections(scene.rig, frame.objects, cfg.gen, frame.index)
        for frame in scene.frames
    }
    write_detections(args.out, dets)
    total = sum(len(v) for v in dets.values())
    print(f"wrote {args.out}: {total} detections over {len(dets)} frames")
    return 0


def _report_text(report) -> str:
    lines = [f"variant: {report.variant}  seed: {report.seed}"]
    counts = report.counts
    lines.append(
        "frames: {frames_processed}/{frames}  detections: {detections_2d}  "
        "boxes: {boxes_3d} (merged {merged_boxes})".format(**counts)
    )
    if report.ap_2d:
        parts = [f"{cls} {ap:.4f}" for cls, ap in sorted(report.ap_2d.items())]
        lines.append("2D AP: " + "  ".join(parts))
    if report.reid is not None:
        lines.append(
            "re-id: precision {precision:.4f}  recall {recall:.4f}  "
            "f_score {f_score:.4f}".format(**report.reid)
        )
    for region in ("all", "overlap"):
        block = report.metrics_3d[region]
        for cls in sorted(block["per_class"]):
            row = block["per_class"][cls]
            cells = []
            for key in ("ap", "ate", "ase", "aoe"):
                value = row[key]
                cells.append(f"{key} {'-' if value is None else format(value, '.4f')}")
            lines.append(f"3D {region:<8} {cls:<12} " + "  ".join(cells))
    if report.errors:
        lines.append(f"frame errors: {len(report.errors)}")
    return "\n".join(lines) + "\n"


def _report_csv(report) -> str:
    lines = ["section,region,class,metric,value"]
    for cls, ap in sorted(report.ap_2d.items()):
        lines.append(f"ap_2d,-,{cls},ap,{ap:.6f}")
    if report.reid is not None:
        for key in ("precision", "recall", "f_score", "tp", "fp", "fn", "tn"):
            lines.append(f"reid,-,-,{key},{float(report.reid[key]):.6f}")
    for region in ("all", "overlap"):
        block = report.metrics_3d[region]
        for cls in sorted(block["per_class"]):
            row = block["per_class"][cls]
            for key in ("ap", "ate", "ase", "aoe"):
                value = row[key]
                cell = "" if value is None else f"{value:.6f}"
                lines.append(f"3d,{region},{cls},{key},{cell}")
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    scene = load_scene(args.scene)
    cfg = load_config(args.config, _overrides(args))
    if args.detections is not None:
        dets = detections_by_frame(load_detection_records(args.detections))
    else:
        dets = {
            frame.index: simulate_detections(
                scene.rig, frame.objects, cfg.gen, frame.index
            )
            for frame in scene.frames
        }
    result = run_pipeline(scene, Variant(args.variant), cfg, detections=dets)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(out_dir / "report.json", result.report)
    write_boxes(out_dir / "boxes.json", result.boxes)
    write_detections(out_dir / "detections.json", dets)
    if result.matches:
        write_matches(out_dir / "matches.json", scene.rig, dets, result.matches)
    _emit(
        result.report.to_dict(),
        args.format,
        _report_text(result.report),
        _report_csv(result.report),
    )
    return 0


def cmd_compare(args) -> int:
    scene = load_scene(args.scene)
    cfg = load_config(args.config, _overrides(args))
    dets = None
    if args.detections is not None:
        dets = detections_by_frame(load_detection_records(args.detections))
    comparison = compare_variants(scene, cfg, detections=dets)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = write_comparison(out_dir / "compare", comparison)
    _emit(
        comparison.to_json_dict(),
        args.format,
        comparison.to_text(),
        comparison.to_csv(),
    )
    print(f"wrote {paths['json']}, {paths['csv']}, {paths['text']}", file=sys.stderr)
    return 0


def _dummy_rig(cameras, adjacency) -> CameraRig:
    models = tuple(
        CameraModel(
            id=cam_id, fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1,
            pose=Pose(q=(1.0, 0.0, 0.0, 0.0), t=(0.0, 0.0, 0.0)),
        )
        for cam_id in cameras
    )
    try:
        return CameraRig(cameras=models, adjacency=tuple(adjacency))
    except ValueError as exc:
        raise SchemaError(f"matches: {exc}") from exc


def cmd_eval_reid(args) -> int:
    payload = load_matches(args.matches)
    records = load_detection_records(args.detections)
    rig = _dummy_rig(payload["cameras"], payload["adjacency"])
    results = matches_against_detections(payload, records)
    frame_stats = []
    for frame in sorted(results):
        frame_dets = [det for f, det in records if f == frame]
        frame_stats.append(evaluate_frame(results[frame], frame_dets, rig))
    stats = accumulate(frame_stats).as_dict()
    text = (
        "precision {precision:.4f}\nrecall {recall:.4f}\nf_score {f_score:.4f}\n"
        "tp {tp}  fp {fp}  fn {fn}  tn {tn}\n".format(**stats)
    )
    csv = "metric,value\n" + "".join(
        f"{key},{float(stats[key]):.6f}\n"
        for key in ("precision", "recall", "f_score", "tp", "fp", "fn", "tn")
    )
    _emit(stats, args.format, text, csv)
    return 0


def cmd_eval_3d(args) -> int:
    boxes_by_frame = load_boxes(args.pred)
    scene = load_scene(args.gt)
    region = args.region
    cfg = EvalConfig3D(region=region)
    gts = []
    for frame in scene.frames:
        objects = frame.objects
        if region == "overlap":
            objects = overlap_region_filter(scene.rig, objects)
        gts.extend(
            Gt3D(group=frame.index, class_id=obj.class_id, box=obj.box)
            for obj in objects
        )
    preds = [
        Pred3D(group=b.frame, class_id=b.class_id, score=b.score, box=b.box)
        for frame_boxes in boxes_by_frame.values()
        for b in frame_boxes
    ]
    if region == "overlap":
        preds = [p for p in preds if visible_camera_count(scene.rig, p.box) >= 2]
    result = evaluate_3d(preds, gts, cfg)
    text_lines = [f"region: {region}"]
    csv_lines = ["class,ap,ate,ase,aoe,num_gt,num_pred,num_matched"]
    for cls in sorted(result):
        row = result[cls]
        cells = {
            key: ("-" if row[key] is None else f"{row[key]:.4f}")
            for key in ("ap", "ate", "ase", "aoe")
        }
        text_lines.append(
            f"{cls}: ap {cells['ap']}  ate {cells['ate']}  ase {cells['ase']}  "
            f"aoe {cells['aoe']}  (gt {row['num_gt']}, pred {row['num_pred']}, "
            f"matched {row['num_matched']})"
        )
        csv_cells = {
            key: ("" if row[key] is None else f"{row[key]:.6f}")
            for key in ("ap", "ate", "ase", "aoe")
        }
        csv_lines.append(
            f"{cls},{csv_cells['ap']},{csv_cells['ate']},{csv_cells['ase']},"
            f"{csv_cells['aoe']},{row['num_gt']},{row['num_pred']},{row['num_matched']}"
        )
    _emit(
        {"region": region, "classes": result},
        args.format,
        "\n".join(text_lines) + "\n",
        "\n".join(csv_lines) + "\n",
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except (MissingTruth, MissingEmbedding) as exc:
        print(f"schema error: input data incomplete: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"schema error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps everything to 3
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
