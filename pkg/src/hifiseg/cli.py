"""Command line entry point: ``hifiseg {train,eval,gradcheck,ablate}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_model
from .data import Sample, SynthConfig, load_dataset, save_mask, stack_batch, synth_generate
from .gradsuite import CORRUPTIBLE, corrupt_backward, run_model_check, run_op_checks
from .metrics import evaluate_masks
from .model import VARIANTS, HiFiSeg, ModelConfig
from .training import TrainSettings, evaluate, predict_probs, train

logger = logging.getLogger("hifiseg")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

# per-preset defaults for flags left unset on the command line
PRESET_DEFAULTS = {
    "toy": {"steps": 300, "batch_size": 4, "lr": 3e-3},
    "base": {"steps": 300, "batch_size": 16, "lr": 1e-4},
}


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def resolve_seed(seed: int) -> int:
    env = os.environ.get("HIFI_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"HIFI_SEED must be an integer, got {env!r}") from None


def model_config(args) -> ModelConfig:
    cfg = ModelConfig.toy() if args.preset == "toy" else ModelConfig.base()
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        cfg = ModelConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg.variant(args.variant)


def train_settings(args, seed: int) -> TrainSettings:
    defaults = PRESET_DEFAULTS[args.preset]

    def pick(name):
        v = getattr(args, name)
        return defaults[name] if v is None else v

    return TrainSettings(steps=pick("steps"), batch_size=pick("batch_size"), lr=pick("lr"),
                         weight_decay=args.wd, seed=seed, multiscale=not args.no_multiscale,
                         lambda_bce=args.lambda_bce, lambda_iou=args.lambda_iou,
                         ckpt_every=args.ckpt_every, schedule=args.schedule, warmup=args.warmup)


def load_samples(args, hw: int, seed: int) -> List[Sample]:
    if args.data:
        return load_dataset(args.data, hw)
    synth_seed = seed if args.synth_seed is None else args.synth_seed
    return synth_generate(SynthConfig(canvas=hw, seed=synth_seed), args.synth)


def _data_source(args, seed: int) -> dict:
    if args.data:
        return {"data": str(Path(args.data).resolve())}
    return {"synth": args.synth, "synth_seed": seed if args.synth_seed is None else args.synth_seed}


def write_run_config(out: Path, command: str, seed: int, model: ModelConfig,
                     settings: Optional[TrainSettings], extra: dict) -> None:
    rc = {"command": command, "seed": seed, "version": __version__, "git": git_describe(),
          "model": model.to_dict(), **extra}
    if settings is not None:
        rc["train"] = vars(settings).copy()
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(rc, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    cfg = model_config(args)
    settings = train_settings(args, seed)
    out = Path(args.out)
    samples = load_samples(args, cfg.input_hw, seed)
    write_run_config(out, "train", seed, cfg, settings, _data_source(args, seed))
    result = train(cfg, samples, settings, out_dir=out)
    report = evaluate(result.model, samples, head=args.score_head, mae_mode=args.mae_mode)
    report.to_csv(out / "train_metrics.csv")
    report.to_json(out / "train_metrics.json")
    s = report.summary()
    print(f"trained {settings.steps} steps in {result.seconds:.1f}s; final loss {result.losses[-1]:.4f}; "
          f"train mDice {s['mdice']:.4f} mIoU {s['miou']:.4f} MAE {s['mae']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = resolve_seed(args.seed)
    model, ckpt_config = load_model(args.ckpt)
    samples = load_samples(args, model.cfg.input_hw, seed)
    out = Path(args.out)
    write_run_config(out, "eval", seed, model.cfg, None,
                     {**_data_source(args, seed), "ckpt": str(Path(args.ckpt).resolve()),
                      "score_head": args.score_head, "mae_mode": args.mae_mode})
    images, masks = stack_batch(samples)
    probs = predict_probs(model, images, head=args.score_head)
    report = evaluate_masks(list(probs), list(masks), [s.id for s in samples], mae_mode=args.mae_mode)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    if args.dump_masks:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        for s, p in zip(samples, probs):
            save_mask(mask_dir / f"{s.id}.png", p > 0.5)
    s = report.summary()
    print(f"n={s['n']} mDice {s['mdice']:.4f} mIoU {s['miou']:.4f} MAE {s['mae']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    if args.corrupt:
        with corrupt_backward(args.corrupt):
            results = run_op_checks(seed) + [run_model_check(seed, n_samples=args.samples)]
    else:
        results = run_op_checks(seed) + [run_model_check(seed, n_samples=args.samples)]
    for r in results:
        print(r.row())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_ablate(args) -> int:
    base_seed = resolve_seed(args.seed)
    seeds = args.seeds if args.seeds else [base_seed]
    variants = args.variants or list(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    out = Path(args.out)
    write_run_config(out, "ablate", base_seed, model_config(args), train_settings(args, base_seed),
                     {**_data_source(args, base_seed), "variants": variants, "seeds": seeds})
    rows = []
    for seed in seeds:
        samples = load_samples(args, model_config(args).input_hw, seed)
        settings = train_settings(args, seed)
        for name in variants:
            args.variant = name
            cfg = model_config(args)
            run_dir = out / f"seed{seed}" / name.replace("/", "").replace(" ", "_")
            result = train(cfg, samples, settings, out_dir=run_dir)
            rep = evaluate(result.model, samples, head=args.score_head, mae_mode=args.mae_mode)
            rows.append({"variant": name, "seed": seed, "params": HiFiSeg(cfg).num_parameters(),
                         "mdice": rep.mdice, "miou": rep.miou, "mae": rep.mmae})
            print(f"seed {seed} {name:<10} mDice {rep.mdice:.4f} mIoU {rep.miou:.4f}", flush=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    table = format_ablation_table(rows, variants)
    (out / "ablation.md").write_text(table + "\n")
    print(table)
    return EXIT_OK


def format_ablation_table(rows: Sequence[dict], variants: Sequence[str]) -> str:
    lines = ["| variant | params | mDice | mIoU |", "|---|---:|---:|---:|"]
    for name in variants:
        sel = [r for r in rows if r["variant"] == name]
        lines.append(f"| {name} | {sel[0]['params']} | {np.mean([r['mdice'] for r in sel]):.4f} "
                     f"| {np.mean([r['miou'] for r in sel]):.4f} |")
    return "\n".join(lines)


# -- argument parsing ----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="run seed (HIFI_SEED overrides)")
    p.add_argument("--out", default="runs/latest", help="output directory")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="directory with images/ + masks/ (or manifest.csv)")
    g.add_argument("--synth", type=int, metavar="N", help="use N synthetic blob samples")
    p.add_argument("--synth-seed", type=int, default=None, help="generator seed (defaults to --seed)")


def _add_scoring(p: argparse.ArgumentParser) -> None:
    p.add_argument("--score-head", choices=("p1", "p2", "mean"), default="p1")
    p.add_argument("--mae-mode", choices=("soft", "hard"), default="soft")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESET_DEFAULTS), default="toy")
    p.add_argument("--config", help="JSON file of ModelConfig field overrides")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--wd", type=float, default=1e-4, help="AdamW weight decay")
    p.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--lambda-bce", type=float, default=1.0)
    p.add_argument("--lambda-iou", type=float, default=1.0)
    p.add_argument("--no-multiscale", action="store_true")
    p.add_argument("--ckpt-every", type=int, default=0, help="checkpoint interval in steps (0: final only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hifiseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and log per-step losses")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    _add_scoring(p)
    p.add_argument("--variant", choices=list(VARIANTS), default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    _add_common(p)
    _add_data(p)
    _add_scoring(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dump-masks", action="store_true", help="write predicted masks as PNG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=20, help="parameter entries checked end-to-end")
    p.add_argument("--corrupt", choices=CORRUPTIBLE, help="break OP's backward rule (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every ablation variant under one protocol")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    _add_scoring(p)
    p.add_argument("--variants", nargs="+", default=None, metavar="NAME")
    p.add_argument("--seeds", nargs="+", type=int, default=None)
    p.set_defaults(func=cmd_ablate, variant="full")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
