"""Command-line entry point: gen / train / eval / ablate / export.

Every command is deterministic given its flags and seed; outputs embed
the config hash of the run.  Exit codes: 0 success, 1 usage error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import report
from .experiments import ABLATIONS, optimizer_for, run_ablation, run_full_eval
from .losses import LossConfig
from .nets.training import TrainingDiverged
from .pipeline import (
    HEAD_KINDS,
    HeadBundle,
    build_absolute_task,
    build_edge_task,
    build_head,
    build_joint_task,
    build_orientation_task,
    build_relation_task,
    build_size_task,
    load_head,
    save_head,
    train_head,
)
from .shapeio import read_shape_json, write_obj
from .synth.dataset import Dataset, DatasetConfig, config_hash, make_dataset
from .synth.features import NoiseConfig
from .synth.shapes import ARCHETYPES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partbox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--shapes", type=int, default=100)
    gen.add_argument("--archetypes", default="chair", help=f"comma list from {ARCHETYPES}")
    gen.add_argument("--views", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--translation-scale", type=float, default=1.5)
    gen.add_argument("--occlusion-rate", type=float, default=0.0, help="forced per-part occlusion probability")
    gen.add_argument("--uv-sigma", type=float, default=None)
    gen.add_argument("--depth-sigma", type=float, default=None)
    gen.add_argument("--no-relabel", action="store_true", help="keep construction rotation labels")

    tr = sub.add_parser("train", help="train one prediction head")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--head", required=True, choices=HEAD_KINDS)
    tr.add_argument("--out", required=True, help="checkpoint path (.json)")
    tr.add_argument("--loss", default="moe-minn", choices=("moe-minn", "minn", "mse"), help="orientation loss arm")
    tr.add_argument("--variant", default="group", choices=("group", "unary"), help="size head variant")
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--lr-decay", type=float, default=None)
    tr.add_argument("--decay-every", type=int, default=None)
    tr.add_argument("--lam", type=float, default=1.0, help="mixture weight in the MoE loss")
    tr.add_argument("--laplace-b", type=float, default=0.5)
    tr.add_argument("--equivalence-mode", default="all48", choices=("all48", "proper24"))
    tr.add_argument("--n-experts", type=int, default=4)
    tr.add_argument("--archetypes", default="chair")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")

    ev = sub.add_parser("eval", help="run the full pipeline and report metrics")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--oracle", action="store_true", help="replace every head with ground truth")
    ev.add_argument("--orientation-ckpt", default=None)
    ev.add_argument("--size-ckpt", default=None)
    ev.add_argument("--contact-ckpt", default=None)
    ev.add_argument("--relation-sym-ckpt", default=None)
    ev.add_argument("--relation-adj-ckpt", default=None)
    ev.add_argument("--archetypes", default=None, help="restrict eval categories")
    ev.add_argument("--n-points", type=int, default=256)
    ev.add_argument("--per-box", type=int, default=256)
    ev.add_argument("--adjacency-threshold", type=float, default=0.7)
    ev.add_argument("--symmetry-threshold", type=float, default=0.9)
    ev.add_argument("--seed", type=int, default=0)

    ab = sub.add_parser("ablate", help="train ablation arms and compare")
    ab.add_argument("--dataset", required=True)
    ab.add_argument("--ablation", required=True, choices=ABLATIONS)
    ab.add_argument("--out-dir", required=True)
    ab.add_argument("--seeds", default="1,2,3")
    ab.add_argument("--epochs", type=int, default=None)
    ab.add_argument("--archetypes", default="chair")
    ab.add_argument("--lam", type=float, default=1.0)
    ab.add_argument("--laplace-b", type=float, default=0.5)

    ex = sub.add_parser("export", help="export a shape JSON to OBJ")
    ex.add_argument("--shape", required=True, help="shape JSON file")
    ex.add_argument("--out", required=True, help="OBJ output path")

    return parser


def _parse_archetypes(text):
    if text is None:
        return None
    names = tuple(a.strip() for a in text.split(",") if a.strip())
    for a in names:
        if a not in ARCHETYPES:
            raise UsageError(f"unknown archetype {a!r}; choose from {ARCHETYPES}")
    if not names:
        raise UsageError("need at least one archetype")
    return names


def cmd_gen(args) -> int:
    if args.shapes < 1:
        raise UsageError("--shapes must be >= 1")
    if args.views < 1:
        raise UsageError("--views must be >= 1")
    noise = NoiseConfig(forced_occlusion_rate=args.occlusion_rate)
    if args.uv_sigma is not None:
        noise.uv_sigma = args.uv_sigma
    if args.depth_sigma is not None:
        noise.depth_sigma = args.depth_sigma
    config = DatasetConfig(
        n_shapes=args.shapes,
        archetypes=_parse_archetypes(args.archetypes),
        views_per_shape=args.views,
        seed=args.seed,
        translation_scale=args.translation_scale,
        relabel=not args.no_relabel,
        noise=noise,
    )
    manifest = make_dataset(args.out, config)
    print(f"dataset written to {args.out}")
    print(f"  shapes: {manifest['n_shapes']}  views/shape: {manifest['views_per_shape']}  samples: {manifest['n_samples']}")
    for split, ids in sorted(manifest["splits"].items()):
        print(f"  {split}: {len(ids)} shapes")
    print(f"  config hash: {manifest['config_hash']}")
    return 0


def _build_task(kind, ds, args, archetypes, mode):
    if kind == "orientation":
        return build_orientation_task(ds, "train", archetypes, mode)
    if kind == "size":
        return build_size_task(ds, "train", archetypes, args.variant)
    if kind in ("contact", "offset"):
        return build_edge_task(ds, "train", archetypes)
    if kind == "abs-position":
        return build_absolute_task(ds, "train", archetypes)
    if kind == "joint":
        return build_joint_task(ds, "train", archetypes)
    raise UsageError(f"cannot build task for head {kind!r}")


def cmd_train(args) -> int:
    ds = Dataset.load(args.dataset)
    archetypes = _parse_archetypes(args.archetypes)
    loss_cfg = LossConfig(lam=args.lam, laplace_b=args.laplace_b, mode=args.equivalence_mode)
    overrides = {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "lr_decay": args.lr_decay,
        "decay_every": args.decay_every,
    }
    run_hash = config_hash(
        {
            "dataset": ds.manifest["config_hash"],
            "head": args.head,
            "loss": args.loss,
            "variant": args.variant,
            "loss_cfg": loss_cfg.to_dict(),
            "overrides": {k: v for k, v in overrides.items() if v is not None},
            "seed": args.seed,
            "archetypes": list(archetypes),
        }
    )

    if args.head == "relation":
        curves = {}
        for relationship, suffix in (("symmetry", "sym"), ("adjacency", "adj")):
            task = build_relation_task(ds, "train", relationship, archetypes)
            head = build_head("relation", seed=args.seed)
            opt = optimizer_for("relation", overrides)
            start_epoch, opt_state = 0, None
            result = train_head("relation", head, task, opt, seed=args.seed + 1)
            curves[relationship] = result.loss_curve
            path = _relation_path(args.out, suffix)
            meta = {
                "relationship": relationship,
                "config_hash": run_hash,
                "init_seed": args.seed,
                "epochs_run": len(result.loss_curve),
                "final_loss": result.loss_curve[-1],
            }
            save_head(path, "relation", head, meta, result.optimizer_state)
            print(f"{relationship}: final loss {result.loss_curve[-1]:.6f} -> {path}")
    else:
        kind = args.head
        n_experts = args.n_experts if args.loss == "moe-minn" else 1
        task = _build_task(kind, ds, args, archetypes, loss_cfg.mode)
        start_epoch, opt_state = 0, None
        if args.resume:
            prev_kind, head, prev_meta, opt_state = load_head(args.resume)
            if prev_kind != kind:
                raise UsageError(f"--resume checkpoint is a {prev_kind!r} head, not {kind!r}")
            start_epoch = int(prev_meta.get("epochs_run", 0))
        else:
            head = build_head(kind, seed=args.seed, n_experts=n_experts)
        opt = optimizer_for(kind, overrides)
        result = train_head(
            kind,
            head,
            task,
            opt,
            seed=args.seed + 1,
            loss_kind=args.loss,
            loss_cfg=loss_cfg,
            start_epoch=start_epoch,
            optimizer_state=opt_state,
        )
        curves = {kind: result.loss_curve}
        meta = {
            "config_hash": run_hash,
            "init_seed": args.seed,
            "n_experts": n_experts,
            "loss": args.loss,
            "variant": args.variant,
            "epochs_run": start_epoch + len(result.loss_curve),
            "final_loss": result.loss_curve[-1],
        }
        save_head(args.out, kind, head, meta, result.optimizer_state)
        print(f"{kind}: final train loss {result.loss_curve[-1]:.6f} -> {args.out}")

    base, _ = os.path.splitext(args.out)
    report.write_loss_curve_csv(base + "_loss.csv", curves)
    report.loss_curve_figure(base + "_loss.png", curves, title=f"{args.head} training loss")
    print(f"loss curve: {base}_loss.csv (+ .png), config hash {run_hash}")
    return 0


def _relation_path(out, suffix):
    base, ext = os.path.splitext(out)
    return f"{base}.{suffix}{ext or '.json'}"


def _load_bundle(args) -> HeadBundle:
    needed = {
        "orientation": args.orientation_ckpt,
        "size": args.size_ckpt,
        "contact": args.contact_ckpt,
        "relation (symmetry)": args.relation_sym_ckpt,
        "relation (adjacency)": args.relation_adj_ckpt,
    }
    missing = [name for name, path in needed.items() if not path]
    if missing:
        raise UsageError(
            "missing checkpoints for: " + ", ".join(missing) + " (or pass --oracle)"
        )
    for name, path in needed.items():
        if not os.path.exists(path):
            raise FileNotFoundError(f"{name} checkpoint not found: {path}")
    _, orientation, _, _ = load_head(args.orientation_ckpt)
    _, size, _, _ = load_head(args.size_ckpt)
    _, contact, _, _ = load_head(args.contact_ckpt)
    _, rel_sym, _, _ = load_head(args.relation_sym_ckpt)
    _, rel_adj, _, _ = load_head(args.relation_adj_ckpt)
    return HeadBundle(orientation, size, contact, rel_sym, rel_adj)


def cmd_eval(args) -> int:
    ds = Dataset.load(args.dataset)
    archetypes = _parse_archetypes(args.archetypes)
    os.makedirs(args.out_dir, exist_ok=True)
    eval_config = {
        "n_points": args.n_points,
        "per_box": args.per_box,
        "seed": args.seed,
        "dataset_config_hash": ds.manifest["config_hash"],
        "mode": "oracle" if args.oracle else "trained",
        "split": args.split,
    }
    bundle = None if args.oracle else _load_bundle(args)
    rep = run_full_eval(
        ds,
        bundle,
        split=args.split,
        oracle=args.oracle,
        adjacency_threshold=args.adjacency_threshold,
        symmetry_threshold=args.symmetry_threshold,
        eval_config=eval_config,
        archetypes=archetypes,
    )
    prefix = os.path.join(args.out_dir, "metrics_oracle" if args.oracle else "metrics")
    report.write_metric_report(prefix, rep)
    print(rep.to_text_table())
    print(f"report: {prefix}.json (+ .txt, .png)")
    return 0


def cmd_ablate(args) -> int:
    ds = Dataset.load(args.dataset)
    archetypes = _parse_archetypes(args.archetypes)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"bad --seeds value {args.seeds!r}")
    if not seeds:
        raise UsageError("need at least one seed")
    loss_cfg = LossConfig(lam=args.lam, laplace_b=args.laplace_b)
    result = run_ablation(args.ablation, ds, seeds, args.epochs, archetypes, loss_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    base = os.path.join(args.out_dir, args.ablation.replace("-", "_"))
    report.write_ablation_csv(base + ".csv", result.rows, result.value_keys)
    report.ablation_bar_figure(
        base + ".png", result.rows, "mean", result.metric, f"{result.name} ({result.metric})"
    )
    if result.curves:
        report.write_loss_curve_csv(base + "_loss.csv", result.curves)
        report.loss_curve_figure(base + "_loss.png", result.curves, title=f"{result.name} training loss")
    report.write_json(
        base + ".json",
        {
            "ablation": result.name,
            "metric": result.metric,
            "rows": result.rows,
            "notes": result.notes,
            "seeds": list(seeds),
            "dataset_config_hash": ds.manifest["config_hash"],
        },
    )
    from .report import ablation_text_table

    print(ablation_text_table(result.rows, result.value_keys))
    for key, values in result.notes.items():
        print(f"note {key}: {values}")
    print(f"outputs: {base}.csv / .json / .png")
    return 0


def cmd_export(args) -> int:
    shape = read_shape_json(args.shape)
    write_obj(args.out, shape.parts, names=[f"{t}_{i}" for i, t in enumerate(shape.tags)])
    print(f"wrote {len(shape.parts)} parts ({8 * len(shape.parts)} vertices) to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "export": cmd_export,
    }
    try:
        return handlers[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
