"""Command-line surface tying the pipeline together.

Subcommands:

* ``synth``: write a synthetic dataset (with ground truth) for a preset.
* ``generate``: run pseudo-label generation end to end over a dataset.
* ``refine``: run one self-training refinement round over predictions.
* ``score-labels``: recompute score breakdowns for existing label files.
* ``evaluate``: compare labels against ground truth, emit a report.
* ``mock-detect``: run the mock detector over boxes to produce predictions.

Exit codes: 0 on success, 2 on validation/usage errors, 1 on runtime
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataio, evaluation, pipeline
from .aggregation import build_dense_cloud, build_motion_grid, register_window
from .config import ConfigError, PipelineConfig
from .dataio import FormatError
from .geometry import BevGridSpec
from .refine import NOISE_PROFILES, NoiseModel, mock_detector, refine_round
from .scoring import PseudoLabel, label_weight, msf_score
from .synth import PRESET_NAMES, generate_sequence, preset_scene

logger = logging.getLogger("sembox")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="pipeline config JSON (defaults used when omitted)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: all cores, or "
                        f"${pipeline.THREADS_ENV_VAR})")
    p.add_argument("--seed", type=int, default=None,
                   help="seed override for seeded subcommands")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sembox",
        description="3D box pseudo-labels from per-point semantic labels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--preset", required=True, choices=PRESET_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("generate", help="generate pseudo-labels for a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("refine", help="run one self-training refinement round")
    p.add_argument("dataset", type=Path)
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("score-labels", help="recompute score breakdowns")
    p.add_argument("dataset", type=Path)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None,
                   help="write rescored label files here (else report only)")
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate labels against ground truth")
    p.add_argument("dataset", type=Path)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("mock-detect", help="noisy mock detector over boxes")
    p.add_argument("dataset", type=Path)
    p.add_argument("--labels", type=Path, required=True,
                   help="input boxes (label files, e.g. gt_labels)")
    p.add_argument("--noise", default="default",
                   help=f"profile name {sorted(NOISE_PROFILES)} or a JSON file")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    return parser


def _load_config(path: Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    return PipelineConfig.from_json(path)


def _load_noise(spec: str) -> NoiseModel:
    if spec in NOISE_PROFILES:
        return NOISE_PROFILES[spec]
    path = Path(spec)
    if path.is_file():
        try:
            data = json.loads(path.read_text())
            return NoiseModel(**data)
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigError(f"noise: invalid profile file {path}: {e}")
    raise ConfigError(
        f"noise: unknown profile {spec!r} (expected one of "
        f"{sorted(NOISE_PROFILES)} or a JSON file path)")


def _write_summary(out_dir: Path, summary: dict) -> None:
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def cmd_synth(args) -> int:
    spec = preset_scene(args.preset, args.seed)
    frames, gt = generate_sequence(spec)
    config = _load_config(args.config)
    dataio.write_dataset(args.out, frames, config.class_names(), gt=gt,
                         points_format=args.format)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    frames, _ = dataio.load_dataset(args.dataset)
    threads = pipeline.resolve_threads(args.threads)
    labels = pipeline.generate_labels(frames, config, threads=threads)
    out = Path(args.out)
    dataio.write_box_dir(out / "labels", labels, kind="labels")
    _write_summary(out, pipeline.summarize_labels(labels))
    print(f"generated {sum(len(v) for v in labels.values())} labels "
          f"over {len(frames)} frames to {out}")
    return 0


def cmd_refine(args) -> int:
    config = _load_config(args.config)
    frames, _ = dataio.load_dataset(args.dataset)
    preds = dataio.read_box_dir(args.preds, kind="predictions")
    if not any(preds.values()):
        logger.warning("predictions directory %s holds no boxes", args.preds)
    for fr in frames:
        preds.setdefault(fr.frame_id, [])
    result = refine_round(frames, preds, config)
    out = Path(args.out)
    dataio.write_box_dir(out / "labels", result.labels, kind="labels")
    dataio.write_retained_indices(out / "retained", result.retained_indices)
    _write_summary(out, pipeline.summarize_labels(result.labels))
    print(f"refined into {sum(len(v) for v in result.labels.values())} labels "
          f"over {len(frames)} frames to {out}")
    return 0


def cmd_score_labels(args) -> int:
    config = _load_config(args.config)
    frames, _ = dataio.load_dataset(args.dataset)
    loaded = dataio.read_box_dir(args.labels, kind="labels",
                                 weight_thresholds=(config.theta_low,
                                                    config.theta_high))
    index_of = {fr.frame_id: i for i, fr in enumerate(frames)}
    rescored: dict[int, list[PseudoLabel]] = {}
    for fid in sorted(loaded):
        if fid not in index_of:
            raise FormatError(f"labels reference unknown frame {fid}")
        i = index_of[fid]
        n = config.window_half_size
        lo = max(0, i - n)
        window = frames[lo:min(len(frames), i + n + 1)]
        registered = register_window(window, i - lo)
        grid = build_motion_grid(
            registered, BevGridSpec.centered(config.detection_range, config.cell_size),
            config.effective_epsilon(len(window)))
        dense = build_dense_cloud(registered, grid, fid)
        out: list[PseudoLabel] = []
        for lab in loaded[fid]:
            cls_xyz = dense.points.xyz[dense.points.class_id == lab.class_id]
            scores = msf_score(lab.box, cls_xyz, config.meta_shape(lab.class_id),
                               config.lambdas, config.occ_grid_r,
                               config.shape_score_literal)
            out.append(PseudoLabel(
                lab.box, lab.class_id, scores,
                label_weight(scores.msf, config.theta_low, config.theta_high),
                lab.source, fid))
        rescored[fid] = out
        for old, new in zip(loaded[fid], out):
            print(f"frame {fid} class {old.class_id} msf {old.scores.msf:.4f} "
                  f"-> {new.scores.msf:.4f}")
    if args.out is not None:
        dataio.write_box_dir(Path(args.out), rescored, kind="labels")
        print(f"wrote rescored labels to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    frames, _ = dataio.load_dataset(args.dataset)
    labels = dataio.read_box_dir(args.labels, kind="labels")
    gts = dataio.read_box_dir(args.gt, kind="labels")
    per_frame = []
    for fr in frames:
        labs = labels.get(fr.frame_id, [])
        g = gts.get(fr.frame_id, [])
        per_frame.append((
            [lab.box for lab in labs],
            [lab.scores.msf for lab in labs],
            [lab.box for lab in g],
        ))
    report = evaluation.compute_report(
        per_frame, thresholds=config.eval_iou_thresholds,
        range_bin_edges=config.range_bin_edges,
        class_agnostic=config.class_agnostic_eval)
    evaluation.write_report(report, args.report)
    overall = report.counts[config.eval_iou_thresholds[0]]["overall"]
    print(f"evaluated {report.n_labels} labels vs {report.n_gts} gts; "
          f"tp@{config.eval_iou_thresholds[0]:g}={overall.tp}; "
          f"report at {args.report}")
    return 0


def cmd_mock_detect(args) -> int:
    config = _load_config(args.config)
    dataio.load_dataset(args.dataset)  # existence/consistency check
    noise = _load_noise(args.noise)
    loaded = dataio.read_box_dir(args.labels, kind="labels")
    boxes = {fid: [lab.box for lab in labs] for fid, labs in loaded.items()}
    seed = args.seed if args.seed is not None else config.seed
    preds = mock_detector(boxes, noise, seed, num_classes=config.num_classes)
    dataio.write_box_dir(Path(args.out), preds, kind="predictions")
    print(f"wrote {sum(len(v) for v in preds.values())} predictions to {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "generate": cmd_generate,
    "refine": cmd_refine,
    "score-labels": cmd_score_labels,
    "evaluate": cmd_evaluate,
    "mock-detect": cmd_mock_detect,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure, not a usage problem
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
