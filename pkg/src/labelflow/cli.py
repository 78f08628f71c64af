"""Command-line entry point for batch interpolation runs, metric reports,
flow utilities, overlays, and synthetic fixture generation.

Exit codes: 0 ok, 1 usage/config error, 2 data validation failure,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as dio
from .core import Detection, LabelMask
from .flow import (ConsistencyParams, FlowParams, estimate_flow,
                   forward_backward_check, load_flow, save_flow)
from .fuse import DEFAULT_PSEUDO_WEIGHT, FusionParams, emit_pseudo_label, fuse, refine
from .metrics import (AnticipationEval, GroundTruthInstance, classification_scores,
                      detection_ap, mae_e, mae_in, mciou, miou, pooled_class_iou)
from .viz import overlay_panels
from .warp import PropagationConfig, propagate_labels

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_INTERNAL = 3


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def _resolve_interpolate_config(args) -> dict:
    cfg = _load_config(args.config) if args.config else {}
    merged = {
        "dataset": args.dataset or cfg.get("dataset"),
        "out": args.out or cfg.get("out"),
        "flow_source": args.flow_source or cfg.get("flow_source", "builtin"),
        "max_hop": args.max_hop if args.max_hop is not None else cfg.get("max_hop", 15),
        "mode": cfg.get("mode", "direct"),
        "pseudo_weight": (args.pseudo_weight if args.pseudo_weight is not None
                          else cfg.get("pseudo_weight", DEFAULT_PSEUDO_WEIGHT)),
        "jobs": args.jobs if args.jobs is not None else cfg.get("jobs", 1),
        "fps": cfg.get("fps", 30.0),
        "flow": cfg.get("flow", {}),
        "fusion": cfg.get("fusion", {}),
        "consistency": cfg.get("consistency", {}),
    }
    for key in ("dataset", "out"):
        if not merged[key]:
            raise ConfigError(f"missing required config key: {key}")
    if merged["flow_source"] not in ("builtin", "files"):
        raise ConfigError(f"flow_source must be builtin or files, got {merged['flow_source']!r}")
    return merged


def _interpolate_frame(video, frame, propagated, fusion_params, pseudo_weight):
    mask, conf, prov = propagated[frame]
    if frame in video.timeline.key_frames:
        return emit_pseudo_label(mask, conf, video.timeline, frame,
                                 prov.source_key_frame, prov.hop_distance, pseudo_weight)
    prob = video.load_prob(frame)
    fused, fconf = fuse(mask, conf, prob, fusion_params)
    refined = refine(fused, fusion_params)
    # pixels dropped by refinement lose their confidence too
    c = np.where(refined.data == refined.void_id, 0.0, fconf.c).astype(np.float32)
    fconf = type(fconf)(fconf.width, fconf.height, c)
    return emit_pseudo_label(refined, fconf, video.timeline, frame,
                             prov.source_key_frame, prov.hop_distance, pseudo_weight)


def cmd_interpolate(args) -> int:
    cfg = _resolve_interpolate_config(args)
    try:
        flow_params = FlowParams(**cfg["flow"])
        fusion_params = FusionParams(**cfg["fusion"])
        prop_cfg = PropagationConfig(max_hop=cfg["max_hop"], mode=cfg["mode"],
                                     consistency=ConsistencyParams(**cfg["consistency"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    videos = dio.load_dataset(cfg["dataset"], fps=cfg["fps"])
    out_root = Path(cfg["out"])
    resolved = dict(cfg)
    resolved["flow"] = asdict(flow_params)
    resolved["fusion"] = asdict(fusion_params)
    resolved["consistency"] = asdict(prop_cfg.consistency)
    report = {"config": resolved, "videos": {}}

    for video in videos:
        if cfg["flow_source"] == "files":
            if video.flow_dir is None:
                raise dio.DatasetError(f"{video.root}: flow_source=files but no flows/ directory")
            source = dio.FileFlowSource(video.flow_dir)
        else:
            source = dio.EstimatorFlowSource(video.load_frame, flow_params)
        propagated = propagate_labels(video.timeline, video.key_masks, source, prop_cfg)

        frames = list(video.timeline.frames)
        with ThreadPoolExecutor(max_workers=max(cfg["jobs"], 1)) as pool:
            results = list(pool.map(
                lambda f: (f, _interpolate_frame(video, f, propagated,
                                                 fusion_params, cfg["pseudo_weight"])),
                frames))
        labels = dict(sorted(results))  # merge deterministically by frame index
        # jobs and the output path are execution details, not part of the
        # result; emitted files stay byte-identical across parallelism and
        # destination choices
        params_echo = {k: v for k, v in resolved.items() if k not in ("jobs", "out")}
        manifest = dio.write_pseudo_labels(out_root / video.video_id, labels, params_echo)

        uncovered = [f for f in frames if propagated[f][2].uncovered]
        void_fracs = [float(np.mean(labels[f].mask.data == labels[f].mask.void_id))
                      for f in frames]
        confs = [float(np.mean(labels[f].confidence.c)) for f in frames]
        report["videos"][video.video_id] = {
            "frames": len(frames),
            "coverage_pct": 100.0 * (len(frames) - len(uncovered)) / len(frames),
            "uncovered_frames": uncovered,
            "mean_confidence": float(np.mean(confs)),
            "void_fraction": float(np.mean(void_fracs)),
            "manifest_files": len(manifest["files"]),
        }
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(f"interpolated {len(videos)} video(s) -> {out_root}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _matched_mask_dirs(pred_dir, gt_dir):
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_names = {p.name for p in pred_dir.glob("*.png")}
    gt_names = {p.name for p in gt_dir.glob("*.png")}
    if pred_names != gt_names:
        only_p = sorted(pred_names - gt_names)
        only_g = sorted(gt_names - pred_names)
        raise dio.DatasetError(
            f"frame sets differ: only in pred {only_p}, only in gt {only_g}")
    names = sorted(gt_names)
    preds = [dio.load_mask(pred_dir / n) for n in names]
    gts = [dio.load_mask(gt_dir / n) for n in names]
    return preds, gts


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _write_report(out_dir, name, payload: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    lines = []

    def emit(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj, key=str):
                emit(f"{prefix}{k}.", obj[k]) if isinstance(obj[k], dict) \
                    else lines.append(f"{prefix}{k} = {obj[k]}")
        else:
            lines.append(f"{prefix} = {obj}")

    emit("", payload)
    (out_dir / f"{name}.txt").write_text("\n".join(lines) + "\n")


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    if args.kind == "seg":
        preds, gts = _matched_mask_dirs(args.pred, args.gt)
        classes = sorted({c for g in gts for c in g.label_ids()})
        per_class = pooled_class_iou(preds, gts, classes)
        payload = {"kind": "seg", "miou": miou(preds, gts, classes),
                   "mciou": mciou(preds, gts, classes),
                   "per_class_iou": {str(c): v for c, v in per_class.items()}}
    elif args.kind == "det":
        preds_raw = json.loads(Path(args.pred).read_text())
        gts_raw = json.loads(Path(args.gt).read_text())
        preds = [Detection(d["frame"], tuple(d["box"]), d["class_id"], d.get("score", 1.0))
                 for d in preds_raw]
        gts = [GroundTruthInstance(g["frame"], tuple(g["box"]), g["class_id"])
               for g in gts_raw]
        per_class, mean = detection_ap(preds, gts, iou_thresh=args.iou_thresh)
        payload = {"kind": "det", "iou_thresh": args.iou_thresh,
                   "per_class_ap": {str(c): v for c, v in per_class.items()},
                   "mAP": mean}
    elif args.kind == "cls":
        pred_rows = _read_csv_rows(args.pred)[1:]
        gt_rows = _read_csv_rows(args.gt)[1:]
        pred_by_frame = {int(r[0]): [float(x) for x in r[1:]] for r in pred_rows}
        gt_by_frame = {int(r[0]): int(r[1]) for r in gt_rows}
        if set(pred_by_frame) != set(gt_by_frame):
            raise dio.DatasetError(
                f"frame sets differ: pred {sorted(set(pred_by_frame) - set(gt_by_frame))}, "
                f"gt {sorted(set(gt_by_frame) - set(pred_by_frame))}")
        frames = sorted(gt_by_frame)
        scores = np.array([pred_by_frame[f] for f in frames])
        gt = [gt_by_frame[f] for f in frames]
        payload = {"kind": "cls", **classification_scores(scores, gt)}
    elif args.kind == "anticipation":
        if args.horizon is None:
            raise ConfigError("--horizon is required for anticipation evaluation")
        pred_rows = _read_csv_rows(args.pred)[1:]
        gt_rows = _read_csv_rows(args.gt)[1:]
        pred_by_frame = {int(r[0]): float(r[1]) for r in pred_rows}
        gt_by_frame = {int(r[0]): float(r[1]) for r in gt_rows}
        if set(pred_by_frame) != set(gt_by_frame):
            raise dio.DatasetError("anticipation frame sets differ between pred and gt")
        frames = sorted(gt_by_frame)
        ev = AnticipationEval(args.horizon,
                              np.array([pred_by_frame[f] for f in frames]),
                              np.array([gt_by_frame[f] for f in frames]))
        mi, me = mae_in(ev), mae_e(ev)
        payload = {"kind": "anticipation", "horizon": args.horizon,
                   "mae_in": mi if mi is not None else "undefined",
                   "mae_e": me if me is not None else "undefined"}
    else:
        raise ConfigError(f"unknown evaluation kind {args.kind!r}")
    _write_report(out_dir, "report", payload)
    for k, v in payload.items():
        print(f"{k} = {v}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flow utilities


def cmd_flow(args) -> int:
    if args.flow_cmd == "estimate":
        i_a = dio.load_image(args.image_a)
        i_b = dio.load_image(args.image_b)
        params = FlowParams(method=args.method, smoothness_alpha=args.alpha,
                            iterations=args.iterations)
        field = estimate_flow(i_a, i_b, params)
        save_flow(field, args.out_flo)
        print(f"wrote {args.out_flo} ({field.width}x{field.height})")
        return EXIT_OK
    if args.flow_cmd == "check":
        fwd = load_flow(args.forward, direction=(0, 1))
        bwd = load_flow(args.backward, direction=(1, 0))
        res = forward_backward_check(fwd, bwd)
        d = res.discrepancy[res.in_bounds]
        print(f"valid_fraction = {float(np.mean(res.valid)):.6f}")
        print(f"in_bounds_fraction = {float(np.mean(res.in_bounds)):.6f}")
        if d.size:
            print(f"mean_discrepancy_px = {float(np.mean(d)):.6f}")
            for q in (50, 90, 99):
                print(f"p{q}_discrepancy_px = {float(np.percentile(d, q)):.6f}")
        return EXIT_OK
    raise ConfigError(f"unknown flow subcommand {args.flow_cmd!r}")


def cmd_overlay(args) -> int:
    frames_dir, masks_dir, out_dir = Path(args.frames), Path(args.masks), Path(args.out)
    frame_names = sorted(p.name for p in frames_dir.glob("*.png"))
    if not frame_names:
        raise dio.DatasetError(f"no frames found in {frames_dir}")
    pairs = []
    for name in frame_names:
        mask_path = masks_dir / name
        if not mask_path.exists():
            raise dio.DatasetError(f"missing mask for frame {name}")
        rgb = dio.load_image(frames_dir / name)
        mask = dio.load_mask(mask_path)
        if rgb.shape[:2] != (mask.height, mask.width):
            raise dio.DatasetError(f"{name}: image/mask size mismatch")
        pairs.append((name, rgb, mask))
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, rgb, mask in pairs:
        Image.fromarray(overlay_panels(rgb, mask), mode="RGB").save(out_dir / name)
    print(f"wrote {len(pairs)} overlay(s) -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import MovingShape, SynthScene, generate_synth
    if args.preset == "translating":
        v = (1.0, 0.0)
        scene = SynthScene(
            n_frames=args.frames, key_period=args.key_period, seed=args.seed,
            background_velocity=v,
            shapes=(MovingShape("disk", 1, (14.0, 32.0), (8.0, 0.0), v),
                    MovingShape("rect", 2, (20.0, 14.0), (10.0, 8.0), v)))
    elif args.preset == "occlusion":
        scene = SynthScene(
            n_frames=args.frames, key_period=args.key_period, seed=args.seed,
            background_label=0,
            shapes=(MovingShape("rect", 1, (16.0, 32.0), (10.0, 10.0), (1.0, 0.0)),
                    MovingShape("disk", 2, (44.0, 32.0), (7.0, 0.0), (-1.0, 0.0))))
    else:
        raise ConfigError(f"unknown preset {args.preset!r}")
    result = generate_synth(scene, args.out)
    print(f"wrote synthetic dataset -> {result.root}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelflow",
                                     description="Flow-based label interpolation and "
                                                 "workflow evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("interpolate", help="propagate key-frame masks to all frames")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dataset", help="dataset root directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--flow-source", choices=["builtin", "files"], dest="flow_source")
    p.add_argument("--max-hop", type=int, dest="max_hop")
    p.add_argument("--pseudo-weight", type=float, dest="pseudo_weight")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="compute metric reports")
    p.add_argument("--kind", required=True, choices=["seg", "det", "cls", "anticipation"])
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=float, help="anticipation horizon in seconds")
    p.add_argument("--iou-thresh", type=float, default=0.5, dest="iou_thresh")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flow", help="flow estimation / consistency check")
    fsub = p.add_subparsers(dest="flow_cmd", required=True)
    pe = fsub.add_parser("estimate")
    pe.add_argument("image_a")
    pe.add_argument("image_b")
    pe.add_argument("out_flo")
    pe.add_argument("--method", default="horn_schunck",
                    choices=["horn_schunck", "pyramidal_lk"])
    pe.add_argument("--alpha", type=float, default=15.0)
    pe.add_argument("--iterations", type=int, default=200)
    pc = fsub.add_parser("check")
    pc.add_argument("forward")
    pc.add_argument("backward")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("overlay", help="render three-panel overlays")
    p.add_argument("--frames", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("synth", help="generate a synthetic fixture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=31)
    p.add_argument("--key-period", type=int, default=30, dest="key_period")
    p.add_argument("--preset", default="translating", choices=["translating", "occlusion"])
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dio.DatasetError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
