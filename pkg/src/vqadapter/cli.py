"""Command-line surface: sample, train, eval, score, export-embeddings, make-toy-data.

Failures exit nonzero and print one JSON object with a machine-readable
``category`` field on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import figures
from .config import (
    backbone_from_config,
    load_config,
    scma_config_from_config,
    train_config_from_config,
)
from .data import (
    ClipStore,
    DatasetManifest,
    FrameCache,
    decode_frames,
    load_checkpoint,
    make_synthetic_dataset,
    save_checkpoint,
)
from .errors import InputContractError, VqaError
from .evaluation import EvalReport, compute_metrics, run_split_protocol, split_indices
from .model import assemble_model
from .sampling import (
    PROFILE_STRATEGIES,
    STRATEGIES,
    SamplingPlan,
    motion_profile,
    plan_indices,
)
from .training import (
    predict,
    split_protocol_runner,
    train,
    train_config_snapshot,
)

log = logging.getLogger("vqadapter")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _load_setup(config_path: str):
    cfg = load_config(config_path)
    base = Path(config_path).parent
    backbone = backbone_from_config(cfg)
    scma_cfg = scma_config_from_config(cfg)
    train_cfg = train_config_from_config(cfg)
    prompt_mode = cfg.get("prompts.mode", "five_level_learnable")
    softmax_scores = cfg.get("head.softmax_scores", "false").lower() in ("true", "1", "yes", "on")
    manifest_path = cfg.get("data.manifest")
    manifest = None
    store = None
    if manifest_path:
        manifest = DatasetManifest.read(base / manifest_path)
        cache_dir = cfg.get("data.cache_dir")
        cache = FrameCache(base / cache_dir) if cache_dir else None
        store = ClipStore(
            manifest, cache=cache, profile_max_side=int(cfg.get("data.profile_max_side", "224"))
        )
    return cfg, backbone, scma_cfg, train_cfg, prompt_mode, softmax_scores, manifest, store


# --- commands -------------------------------------------------------------------


def cmd_sample(args) -> int:
    seq = decode_frames(args.input)
    plan = SamplingPlan(strategy=args.strategy, target_count=args.frames, seed=args.seed)
    profile = None
    if plan.strategy in PROFILE_STRATEGIES:
        profile = motion_profile(seq.frames, max_side=args.profile_max_side)
    result = plan_indices(plan, len(seq), profile)
    payload = {
        "video": str(args.input),
        "strategy": result.strategy,
        "delegate": result.delegate,
        "indices": [int(i) for i in result.indices],
        "padded": result.padded,
    }
    if profile is not None:
        payload["profile"] = [float(v) for v in profile.values]
    text = json.dumps(payload, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def cmd_make_toy_data(args) -> int:
    manifest = make_synthetic_dataset(
        args.out_dir, n_clips=args.clips, seed=args.seed, n_frames=args.frames, size=args.size
    )
    print(f"wrote {len(manifest)} clips and manifest.csv under {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    _, backbone, scma_cfg, train_cfg, prompt_mode, softmax_scores, manifest, store = _load_setup(
        args.config
    )
    if manifest is None:
        raise InputContractError("config must set data.manifest for training")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = load_config(args.config)
    val_fraction = float(cfg.get("train.val_fraction", "0.2"))
    rows = manifest.rows
    train_idx, val_idx = split_indices(len(rows), 1.0 - val_fraction, train_cfg.seed)
    train_rows = [rows[i] for i in train_idx]
    val_rows = [rows[i] for i in val_idx]

    model = assemble_model(
        backbone,
        scma_cfg,
        prompt_mode,
        mos_range=manifest.mos_range,
        softmax_scores=softmax_scores,
        seed=train_cfg.seed,
    )
    result = train(model, train_rows, train_cfg, store, val_rows=val_rows)

    log_path = out_dir / "training_log.jsonl"
    with open(log_path, "w") as f:
        for record in result.records:
            f.write(json.dumps(record) + "\n")
        for item in result.skipped:
            f.write(json.dumps({"skipped": item}) + "\n")
    snapshot = train_config_snapshot(train_cfg)
    save_checkpoint(out_dir / "checkpoint_final.pt", model, train_config=snapshot)
    if result.best_tensors is not None:
        for name, module in model.trainable_modules().items():
            module.load_state_dict(result.best_tensors[name])
        save_checkpoint(out_dir / "checkpoint_best.pt", model, train_config=snapshot)
    figures.render_training_curves(result.records, out_dir / "training_curves.png")
    last = result.records[-1]
    print(f"trained {train_cfg.epochs} epochs; final record: {json.dumps(last)}")
    print(f"artifacts in {out_dir}")
    return 0


def _read_score_csv(path: Path, value_column: str) -> dict[str, float]:
    with open(path) as f:
        reader = csv.DictReader(row for row in f if not row.startswith("#"))
        if reader.fieldnames is None or "video_id" not in reader.fieldnames:
            raise InputContractError(f"{path} needs a video_id column")
        column = value_column if value_column in reader.fieldnames else None
        if column is None:
            candidates = [c for c in reader.fieldnames if c != "video_id"]
            if not candidates:
                raise InputContractError(f"{path} has no score column")
            column = candidates[0]
        return {r["video_id"]: float(r[column]) for r in reader}


def cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        if not args.labels:
            raise InputContractError("--predictions requires --labels")
        preds = _read_score_csv(Path(args.predictions), "q_pred")
        labels = _read_score_csv(Path(args.labels), "mos")
        common = sorted(set(preds) & set(labels))
        if not common:
            raise InputContractError("no shared video_ids between predictions and labels")
        x = np.array([preds[v] for v in common])
        y = np.array([labels[v] for v in common])
        metrics = compute_metrics(x, y)
        report = EvalReport()
        from .evaluation import SplitRecord

        report.splits.append(
            SplitRecord(
                seed=0,
                n=len(common),
                predictions=[float(v) for v in x],
                labels=[float(v) for v in y],
                **metrics,
            )
        )
    else:
        if not args.config:
            raise InputContractError("eval needs either --predictions/--labels or --config")
        cfg, backbone, scma_cfg, train_cfg, prompt_mode, _, manifest, store = _load_setup(
            args.config
        )
        if manifest is None:
            raise InputContractError("config must set data.manifest for protocol evaluation")
        seeds = None
        if args.seeds:
            seeds = [int(tok) for tok in args.seeds.replace(",", " ").split()]
        elif cfg.get("eval.seeds"):
            seeds = [int(tok) for tok in cfg["eval.seeds"].replace(",", " ").split()]
        num_splits = args.splits or int(cfg.get("eval.num_splits", "10"))
        fraction = args.train_fraction or float(cfg.get("eval.train_fraction", "0.8"))
        runner = split_protocol_runner(
            backbone,
            store,
            train_cfg,
            scma_config=scma_cfg,
            prompt_mode=prompt_mode,
            mos_range=manifest.mos_range,
        )
        report = run_split_protocol(
            manifest.rows,
            runner,
            num_splits=num_splits,
            train_fraction=fraction,
            seeds=seeds,
            keep_predictions=True,
        )

    _write_json(out_dir / "eval_report.json", report.to_dict())
    table = report.table()
    (out_dir / "eval_report.txt").write_text(table + "\n")
    with open(out_dir / "metrics_per_split.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "srocc", "plcc", "krocc", "rmse", "n"])
        for s in report.splits:
            writer.writerow([s.seed, s.srocc, s.plcc, s.krocc, s.rmse, s.n])
    figures.render_eval_figures(report, out_dir)
    print(table)
    print(f"report written to {out_dir}")
    return 0


def cmd_score(args) -> int:
    _, backbone, _, train_cfg, _, _, manifest, store = _load_setup(args.config)
    if manifest is None:
        raise InputContractError("config must set data.manifest for scoring")
    model = load_checkpoint(args.checkpoint, backbone)
    rows = manifest.rows
    preds = predict(model, rows, store, train_cfg)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    level_names = [lvl.label for lvl in model.prompts.levels]
    with torch.no_grad():
        prompt_emb = model.prompt_embeddings()
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "q_pred"] + [f"s_{name}" for name in level_names])
        for i, row in enumerate(rows):
            clip = _prepared_clip(model, store, row, train_cfg, i)
            from .quality import level_scores

            with torch.no_grad():
                v = model.video_embedding(clip)
                scores = level_scores(v, prompt_emb, model.prompts.levels)
            writer.writerow(
                [row.video_id, f"{preds[i]:.6f}"]
                + [f"{float(s):.6f}" for s in scores.values]
            )
    figures.render_score_histogram([float(p) for p in preds], out_path.with_suffix(".png"))
    print(f"scored {len(rows)} clips -> {out_path}")
    return 0


def _prepared_clip(model, store, row, train_cfg, index):
    from .training import prepare_clip

    return prepare_clip(model.backbone, store, row, train_cfg, epoch=0, row_index=index)


def cmd_export_embeddings(args) -> int:
    _, backbone, scma_cfg, train_cfg, prompt_mode, softmax_scores, manifest, store = _load_setup(
        args.config
    )
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint, backbone)
    else:
        model = assemble_model(
            backbone,
            scma_cfg,
            prompt_mode,
            softmax_scores=softmax_scores,
            seed=train_cfg.seed,
        )
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        prompt_emb = model.prompt_embeddings()
    width = prompt_emb.shape[1]
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "name"] + [f"e{i}" for i in range(width)])
        for level, emb in zip(model.prompts.levels, prompt_emb):
            writer.writerow(["prompt", level.label] + [f"{float(v):.6f}" for v in emb])
        if manifest is not None:
            for i, row in enumerate(manifest.rows):
                clip = _prepared_clip(model, store, row, train_cfg, i)
                with torch.no_grad():
                    v = model.video_embedding(clip)
                writer.writerow(
                    ["video", row.video_id] + [f"{float(x):.6f}" for x in v]
                )
    print(f"embeddings written to {out_path}")
    return 0


# --- argument wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqadapter",
        description="Adapter-tuned video quality assessment toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="pick frame indices from a clip")
    p.add_argument("--input", required=True, help="video file or directory of frames")
    p.add_argument("--strategy", default="UNISampl", choices=STRATEGIES)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile-max-side", type=int, default=224)
    p.add_argument("--output", help="also write the JSON result here")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("make-toy-data", help="generate the synthetic graded-distortion set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--clips", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_make_toy_data)

    p = sub.add_parser("train", help="fine-tune adapters on a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions or run the split protocol")
    p.add_argument("--config")
    p.add_argument("--predictions", help="CSV with video_id,q_pred")
    p.add_argument("--labels", help="CSV with video_id,mos (a manifest works)")
    p.add_argument("--splits", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="predict quality for every manifest row")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-embeddings", help="dump video and prompt embeddings as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VqaError as exc:
        print(
            json.dumps({"category": exc.category, "message": str(exc)}),
            file=sys.stderr,
        )
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - uniform CLI error surface
        print(json.dumps({"category": "internal", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
