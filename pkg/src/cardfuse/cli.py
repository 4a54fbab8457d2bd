"""Command line entry point.

Subcommands: synth, split, train, eval, inspect. Exit codes are stable:
0 success, 1 data or runtime error, 2 usage error. All randomness flows
from the --seed flag, so identical invocations produce byte-identical
output files; wall-clock timestamps only ever land in meta.json.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CardfuseError, ParameterError
from .fusion import GATE_VARIANTS, embed_dataset, load_checkpoint, save_checkpoint
from .knn import compare_modes, render_report_table
from .store import (
    SplitConfig,
    load_dataset,
    save_dataset,
    stratified_split,
    synth_generate,
)
from .train import (
    LABEL_LEVELS,
    MINING_STRATEGIES,
    OBJECTIVES,
    TrainConfig,
    train,
    write_loss_csv,
)

MODE_ALIASES = {
    "image": "image_only",
    "text": "text_only",
    "concat": "concat",
    "fused": "fused",
    "head": "fused_head",
}


def _positive_int(value: str) -> int:
    ivalue = int(value)
    if ivalue < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return ivalue


def _write_meta(out_dir: Path, args: argparse.Namespace) -> None:
    meta = {
        "tool": "cardfuse",
        "version": __version__,
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, default=str)
        fh.write("\n")


def cmd_synth(args) -> int:
    dataset = synth_generate(
        n_per_subcat=args.per_subcat,
        n_categories=args.categories,
        n_subcats_per_cat=args.subcats,
        dim=args.dim,
        seed=args.seed,
        noise_sigma=args.sigma,
    )
    result = stratified_split(dataset, SplitConfig(train_fraction=args.train_fraction, seed=args.seed))
    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out / "manifest.json", out / "vectors.f32")
    _write_meta(out, args)
    n_train = len(dataset.train_records())
    print(
        f"wrote {len(dataset)} records ({n_train} train / {len(dataset) - n_train} test), "
        f"dim {dataset.dim_image}+{dataset.dim_text}, to {out}"
    )
    return 0


def cmd_split(args) -> int:
    dataset = load_dataset(args.manifest, args.blob)
    result = stratified_split(dataset, SplitConfig(train_fraction=args.train_fraction, seed=args.seed))
    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out / "manifest.json", out / "vectors.f32")
    _write_meta(out, args)
    print(f"re-split {len(dataset)} records to {out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.manifest, args.blob)
    cfg = TrainConfig(
        objective=args.objective,
        margin=args.alpha,
        batch_size=args.batch_size,
        steps=args.steps,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        seed=args.seed,
        mining=args.mining,
        label_level=args.label_level,
        hidden=args.hidden,
        hidden2=args.hidden2,
        gate_variant=args.gate_variant,
        l2_normalize_output=args.l2_normalize_output,
    )
    result = train(dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = result.head.named_tensors() if result.head else None
    save_checkpoint(
        result.params,
        out / "checkpoint.json",
        out / "checkpoint.f32",
        seed=args.seed,
        step=cfg.steps,
        extra_tensors=extra,
    )
    if result.head:
        with open(out / "classes.json", "w", encoding="utf-8") as fh:
            json.dump(result.head.classes, fh, indent=2)
            fh.write("\n")
    write_loss_csv(result.losses, out / "loss.csv")
    _write_meta(out, args)
    last = result.losses[-1] if result.losses else float("nan")
    print(f"trained {cfg.steps} steps (final loss {last:.6g}); checkpoint in {out}")
    return 0


def cmd_eval(args) -> int:
    # flag validation happens before any file is touched
    if args.k < 1:
        raise ParameterError(f"--k must be >= 1, got {args.k}")
    modes = []
    for name in args.modes.split(","):
        name = name.strip()
        if name not in MODE_ALIASES:
            raise ParameterError(
                f"unknown mode {name!r}; expected a comma list of {sorted(MODE_ALIASES)}"
            )
        modes.append(MODE_ALIASES[name])
    if any(m in ("fused", "fused_head") for m in modes) and not args.checkpoint:
        raise ParameterError("--checkpoint is required for fused or head modes")

    dataset = load_dataset(args.manifest, args.blob)
    params = None
    head = None
    if any(m in ("fused", "fused_head") for m in modes):
        ckpt = Path(args.checkpoint)
        params, extra, _ = load_checkpoint(ckpt / "checkpoint.json", ckpt / "checkpoint.f32")
        if "fused_head" in modes:
            from .train import ClassifierHead

            classes_path = ckpt / "classes.json"
            if "w_cls" not in extra or not classes_path.exists():
                raise ParameterError("checkpoint has no classifier head; cannot eval 'head' mode")
            with open(classes_path, "r", encoding="utf-8") as fh:
                classes = json.load(fh)
            head = ClassifierHead(w_cls=extra["w_cls"], b_cls=extra["b_cls"], classes=classes)

    reports = compare_modes(
        dataset,
        params=params,
        k=args.k,
        metric=args.metric,
        modes=modes,
        head=head,
        label_level=args.label_level,
        n_jobs=args.threads,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    combined = {mode: rep.to_dict() for mode, rep in reports.items()}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(combined, fh, indent=2)
        fh.write("\n")
    table = render_report_table(reports)
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(table)
    _write_meta(out, args)
    print(table, end="")
    return 0


def cmd_inspect(args) -> int:
    dataset = load_dataset(args.manifest, args.blob)
    print(f"records: {len(dataset)}")
    print(f"dim_image: {dataset.dim_image}  dim_text: {dataset.dim_text}")
    n_train = len(dataset.train_records())
    print(f"split: {n_train} train / {len(dataset) - n_train} test")

    image, text = None, None
    if len(dataset):
        image = np.stack([r.image_vec for r in dataset.records]).astype(np.float64)
        text = np.stack([r.text_vec for r in dataset.records]).astype(np.float64)
        for name, mat in (("image", image), ("text", text)):
            norms = np.linalg.norm(mat, axis=1)
            print(
                f"{name} norms: mean {norms.mean():.4f}  min {norms.min():.4f}  "
                f"max {norms.max():.4f}"
            )

    print("counts per category/subcategory (train/test):")
    by_subcat: dict[str, list] = {}
    for rec in dataset.records:
        by_subcat.setdefault((rec.category, rec.subcategory), []).append(rec.split)
    for (cat, subcat) in sorted(by_subcat):
        splits = by_subcat[(cat, subcat)]
        tr = sum(1 for s in splits if s == "train")
        te = len(splits) - tr
        print(f"  {cat} / {subcat}: {len(splits)} ({tr}/{te})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardfuse",
        description="Fuse paired image/text embeddings, train, and evaluate with kNN.",
    )
    parser.add_argument("--version", action="version", version=f"cardfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--categories", type=_positive_int, default=3)
    p.add_argument("--subcats", type=_positive_int, default=4, help="subcategories per category")
    p.add_argument("--per-subcat", type=_positive_int, default=50)
    p.add_argument("--dim", type=_positive_int, default=64)
    p.add_argument("--sigma", type=float, default=0.05, help="additive Gaussian noise level")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory for manifest.json + vectors.f32")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="re-assign train/test splits on an existing dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--blob", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--blob", required=True)
    p.add_argument("--objective", choices=OBJECTIVES, default="triplet")
    p.add_argument("--alpha", type=float, default=0.2, help="triplet margin")
    p.add_argument("--steps", "--k-steps", type=int, default=2000, dest="steps")
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--mining", choices=MINING_STRATEGIES, default="semi_hard")
    p.add_argument("--label-level", choices=LABEL_LEVELS, default="subcategory")
    p.add_argument("--hidden", type=_positive_int, default=None)
    p.add_argument("--hidden2", type=_positive_int, default=None)
    p.add_argument("--gate-variant", choices=GATE_VARIANTS, default="sigmoid_after_product")
    p.add_argument("--l2-normalize-output", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate embedding modes with kNN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--blob", required=True)
    p.add_argument("--checkpoint", help="run directory holding checkpoint.json/.f32")
    p.add_argument("--modes", default="image,text,concat")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--label-level", choices=LABEL_LEVELS, default="subcategory")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--blob", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CardfuseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
