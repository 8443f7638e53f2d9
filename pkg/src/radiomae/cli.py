"""Command-line surface: simulate, pretrain, infer, eval.

Every subcommand is seed-deterministic: identical invocations produce
byte-identical artifacts (training logs additionally record wall-clock
timings, which are measurements, not artifacts).  Failures print one
machine-parsable line ``RADIOMAE-ERROR code=<n> kind=<class>: <message>``
and exit with the class-specific code.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate, rmapio, simulate, training
from .config import PRESETS, TrainConfig, dataset_config_from_file, train_config_from_file
from .errors import ConfigError, RadioMaeError, ShapeMismatchError
from .model import load_model, save_model


def _out_dir() -> Path:
    return Path(os.environ.get("RADIOMAE_OUT", "."))


def _resolve(path: str | None, default_name: str) -> Path:
    if path is None:
        return _out_dir() / default_name
    return Path(path)


def cmd_simulate(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("give exactly one of --preset or --config")
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; "
                              f"choose from {sorted(PRESETS)}")
        config = PRESETS[args.preset]
    else:
        config = dataset_config_from_file(args.config)
    samples = simulate.generate_dataset(config, args.samples, args.seed)
    mean, std = simulate.dataset_stats(samples)
    out = _resolve(args.out, config.name)
    rmapio.write_dataset(out, config, [s.phi for s in samples], mean, std, args.seed)
    print(f"wrote {len(samples)} samples of shape {config.shape} to {out} "
          f"(mean {mean:.3f} dBm, std {std:.3f} dB)")
    return 0


def _load_standardized(data_dir: Path):
    config, phis, mean, std, _ = rmapio.read_dataset(data_dir)
    return config, [(phi - mean) / std for phi in phis], mean, std


def cmd_pretrain(args) -> int:
    cfg = train_config_from_file(args.train_config) if args.train_config else TrainConfig()
    overrides = {k: getattr(args, k) for k in
                 ("steps", "batch_size", "learning_rate", "seed") if getattr(args, k) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    datasets, stats = {}, {}
    for data_dir in args.data:
        config, phis, mean, std = _load_standardized(Path(data_dir))
        datasets[config.name] = phis
        stats[config.name] = (mean, std)
    ckpt_path = _resolve(args.out, "model.ckpt")
    log_path = _resolve(args.log, "training_log.csv") if args.log != "none" else None

    def progress(report):
        print(f"step {report.step:6d}  loss {report.composite:.5f}  "
              f"grad {report.grad_norm:.4f}", flush=True)

    model, history = training.pretrain(datasets, cfg, log_path=log_path,
                                       progress=progress if args.verbose else None)
    save_model(ckpt_path, model, sorted(datasets), stats,
               extra={"train_config": dataclasses.asdict(cfg)})
    final = history[-1].composite if history else float("nan")
    print(f"wrote checkpoint to {ckpt_path} after {cfg.steps} steps "
          f"(final composite loss {final:.5f})")
    return 0


def cmd_infer(args) -> int:
    model, meta = load_model(args.checkpoint)
    phi_dbm, mean, std = rmapio.read_sample(args.sample)
    mask = rmapio.read_mask(args.mask)
    if mask.shape != phi_dbm.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != sample shape {phi_dbm.shape}")
    phi_std = (phi_dbm - mean) / std
    est_std = evaluate.estimate("model", phi_std, mask, model)
    est_dbm = simulate.de_standardize(est_std, mean, std)
    # keep the actual measurements at visible voxels
    flat = est_dbm.reshape(-1)
    flat[mask.visible] = phi_dbm.reshape(-1)[mask.visible]
    out = _resolve(args.out, "reconstruction.rmap")
    rmapio.write_sample(out, est_dbm, mean, std)
    print(f"wrote reconstruction to {out}")
    return 0


def cmd_eval(args) -> int:
    config, phis, _, std = _load_standardized(Path(args.data))
    if args.limit is not None:
        phis = phis[: args.limit]
    spec = evaluate.TaskSpec(task=args.task, sparsity=args.sparsity, t_h=args.t_h,
                             bands=tuple(args.bands) if args.bands else None,
                             dataset=config.name, checkpoint=args.checkpoint or "",
                             seed=args.seed)
    model, trained_on = None, None
    if args.estimator == "model":
        if not args.checkpoint:
            raise ConfigError("--estimator model requires --checkpoint")
        model, meta = load_model(args.checkpoint)
        trained_on = meta.get("datasets", [])
    report = evaluate.run_task(spec, args.estimator, phis, std, model, trained_on)
    out = _resolve(args.out, f"eval_{args.task}_{args.estimator}.csv")
    Path(out).write_text("\n".join(report.csv_lines()) + "\n")
    print(f"{args.task}/{args.estimator} on {config.name}: "
          f"RMSE {report.mean_rmse:.4f} +- {report.std_rmse:.4f} dBm "
          f"over {len(report.rmse_per_sample)} samples -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiomae",
        description="Simulate 4D radio maps, pre-train the masked reconstruction "
                    "model, and evaluate spatial/temporal/spectral estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    p.add_argument("--preset", help=f"built-in config name ({', '.join(sorted(PRESETS))})")
    p.add_argument("--config", help="dataset config file (key = value lines)")
    p.add_argument("--samples", type=int, default=10, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--out", help="output directory (default: $RADIOMAE_OUT/<name>)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pretrain", help="masked self-supervised pre-training")
    p.add_argument("--data", nargs="+", required=True, help="dataset directories")
    p.add_argument("--train-config", help="training config file")
    p.add_argument("--steps", type=int, help="override: optimizer steps")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="override")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="override")
    p.add_argument("--seed", type=int, help="override: training seed")
    p.add_argument("--out", help="checkpoint path (default: $RADIOMAE_OUT/model.ckpt)")
    p.add_argument("--log", help="loss CSV path, or 'none' (default: training_log.csv)")
    p.add_argument("--verbose", action="store_true", help="print periodic loss lines")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("infer", help="reconstruct one sample from a mask file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help=".rmap sample file")
    p.add_argument("--mask", required=True, help="mask file (1 bit per voxel)")
    p.add_argument("--out", help="output .rmap path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate an estimator on a dataset")
    p.add_argument("--task", required=True, choices=evaluate.TASKS)
    p.add_argument("--estimator", required=True, choices=evaluate.ESTIMATORS)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", help="model checkpoint (for --estimator model)")
    p.add_argument("--sparsity", type=float, help="visible fraction (spatial/zero-shot)")
    p.add_argument("--t-h", dest="t_h", type=int, help="horizon slot (temporal)")
    p.add_argument("--bands", type=int, nargs="+", help="masked bands (spectral)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, help="evaluate at most this many samples")
    p.add_argument("--out", help="per-sample RMSE CSV path")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RadioMaeError as exc:
        print(f"RADIOMAE-ERROR code={exc.exit_code} kind={type(exc).__name__}: {exc}",
              file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"RADIOMAE-ERROR code=13 kind=OSError: {exc}", file=sys.stderr)
        return 13


if __name__ == "__main__":
    sys.exit(main())
