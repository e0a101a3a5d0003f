"""Command-line entry point: ``motionflow <command> [--config C] [--seed S] [--out DIR]``.

Exit codes: 0 success, 1 precondition error (missing/invalid inputs or a
failed check), 2 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cfm import DivergenceError, export_sequence_csv
from .gradcheck import TOLERANCE, check_suite
from .metrics import div_std, recon_rmse
from .netcore import CheckpointError, NonFiniteError, ShapeError
from .synthetic_data import Dataset, export_dataset, gen_dataset, import_dataset
from .trainer import (TrainConfig, TrainingError, fidelity, heldout_cfm_loss, load_ae, load_sampler, mean_jerk,
                      normaliser_wins, run_ablation, sample_heldout, train_ae, train_sampler, windows,
                      write_manifest, write_metrics)

log = logging.getLogger("motionflow")


class PreconditionError(Exception):
    pass


def load_config(path, seed: int | None) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise PreconditionError(f"config file not found: {p}")
        try:
            cfg = TrainConfig.from_dict(json.loads(p.read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise PreconditionError(f"bad config {p}: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def dataset_for(args, cfg: TrainConfig) -> Dataset:
    if args.data is not None:
        if not Path(args.data, "manifest.json").exists():
            raise PreconditionError(f"no dataset manifest in {args.data}")
        return import_dataset(args.data)
    return gen_dataset(cfg.seed, cfg.n_scenes, cfg.scene)


def _need(path, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise PreconditionError(f"{what} not found: {path}")
    return Path(path)


def _sampler(args, cfg: TrainConfig):
    ae = load_ae(_need(args.ae, "autoencoder checkpoint"), cfg) if cfg.mode == "normalised" else None
    return load_sampler(_need(args.sampler, "sampler checkpoint"), cfg, ae)


# ------------------------------------------------------------------- commands

def cmd_gen_data(args, cfg, out: Path) -> dict:
    ds = gen_dataset(cfg.seed, cfg.n_scenes, cfg.scene)
    export_dataset(ds, out / "data")
    return {"n_train": len(ds.train_idx), "n_heldout": len(ds.heldout_idx)}


def cmd_train_ae(args, cfg, out: Path) -> dict:
    ds = dataset_for(args, cfg)
    ae = train_ae(ds, cfg, out)
    held = windows(ds.heldout, cfg.window)
    return {"ae_final_loss": ae.losses[-1] if ae.losses else float("nan"),
            "heldout_recon_rmse": recon_rmse(ae.reconstruct(held) * ae.scale, held * ae.scale)}


def cmd_train_sampler(args, cfg, out: Path) -> dict:
    ds = dataset_for(args, cfg)
    ae = None
    if cfg.mode == "normalised":
        ae = load_ae(_need(args.ae, "autoencoder checkpoint"), cfg)
    res = train_sampler(ds, ae, cfg, out)
    final = res.log[-1] if res.log else (0, float("nan"), float("nan"), float("nan"))
    return {"final_total_loss": final[1], "final_cfm_loss": final[2], "final_prior_nll": final[3],
            "heldout_cfm_loss": heldout_cfm_loss(res, ds)}


def cmd_sample(args, cfg, out: Path) -> dict:
    ds = dataset_for(args, cfg)
    res = _sampler(args, cfg)
    _, motion = sample_heldout(res, ds, args.n, cfg.seed, temperature=args.temperature)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(motion):
        export_sequence_csv(seq, out / "samples" / f"sample_{i:03d}.csv")
    return {"n_samples": float(len(motion)), "mean_jerk": mean_jerk(motion), "div_std": div_std(motion)}


def cmd_eval(args, cfg, out: Path) -> dict:
    ds = dataset_for(args, cfg)
    res = _sampler(args, cfg)
    metrics = fidelity(res, ds, cfg.seed)
    _, motion = sample_heldout(res, ds, cfg.n_samples, cfg.seed)
    metrics.update({"mean_jerk": mean_jerk(motion), "heldout_cfm_loss": heldout_cfm_loss(res, ds)})
    return metrics


def cmd_ablate(args, cfg, out: Path) -> dict:
    ds = dataset_for(args, cfg)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(range(cfg.seed, cfg.seed + 10))
    try:
        rows = run_ablation(ds, seeds, cfg, out)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from exc
    wins, n = normaliser_wins(rows)
    norm = [r["mean_jerk"] for r in rows if r["mode"] == "normalised"]
    direct = [r["mean_jerk"] for r in rows if r["mode"] == "direct_regression"]
    return {"normaliser_wins": float(wins), "seeds": float(n), "mean_jerk_normalised": float(np.mean(norm)),
            "mean_jerk_direct": float(np.mean(direct))}


def cmd_grad_check(args, cfg, out: Path) -> dict:
    errs = check_suite(cfg.seed)
    errs["max"] = max(errs.values())
    return errs


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ae": cmd_train_ae,
    "train-sampler": cmd_train_sampler,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with TrainConfig fields")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="motionflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset bundle")
    for name, text in (("train-ae", "train the motion normaliser"),
                       ("train-sampler", "train flow, prior and content mapper"),
                       ("sample", "sample motion for held-out scenes"),
                       ("eval", "held-out fidelity and jerk metrics"),
                       ("ablate", "normaliser vs direct regression over seeds")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="dataset directory from gen-data (default: regenerate)")
        if name in ("train-sampler", "sample", "eval"):
            p.add_argument("--ae", help="autoencoder checkpoint")
        if name in ("sample", "eval"):
            p.add_argument("--sampler", help="sampler checkpoint")
        if name == "sample":
            p.add_argument("--n", type=int, default=16, help="number of sequences")
            p.add_argument("--temperature", type=float, default=None)
        if name == "ablate":
            p.add_argument("--seeds", help="comma-separated training seeds (default: 10 from --seed)")
    sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        metrics = COMMANDS[args.command](args, cfg, out)
        write_metrics(out, metrics, cfg)
        write_manifest(out, cfg, args.command)
    except (DivergenceError, NonFiniteError) as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 2
    except (PreconditionError, TrainingError, CheckpointError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "grad-check" and metrics["max"] >= TOLERANCE:
        print(f"gradient check failed: max relative error {metrics['max']:.3g}", file=sys.stderr)
        return 1
    for k, v in metrics.items():
        print(f"{k}\t{v:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
