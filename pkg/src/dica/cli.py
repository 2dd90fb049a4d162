"""End-to-end experiment runner.

Subcommands: generate, train, eval, benchmark, sdi-check. Configuration is
JSON with field names mirroring MixtureSpec / TrainConfig; unknown keys are
rejected so typos in weight names fail loudly. The DICA_SEED environment
variable, when set, overrides every seed read from a config.

Exit codes: 0 success, 2 input/config error, 3 training collapse.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .evaluation import score
from .geometry import WeightedL1Ball, certify_sdi
from .mixtures import MixtureSpec, generate, load_dataset, save_dataset
from .models import mlp_forward_batch
from .numerics import split_seed
from .trainer import (
    TrainConfig,
    TrainingCollapse,
    load_checkpoint,
    save_checkpoint,
    train,
    write_trace_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAINING = 3


class ConfigError(Exception):
    pass


def _strict_fields(section: dict, cls, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: line {exc.lineno}: {exc.msg}") from exc


def _seed_override(seed: int) -> int:
    env = os.environ.get("DICA_SEED")
    return int(env) if env else seed


def _mixture_spec(section: dict) -> MixtureSpec:
    _strict_fields(section, MixtureSpec, "mixture config")
    section = dict(section)
    for key in ("w", "distortion_range", "downscale_range"):
        if section.get(key) is not None:
            section[key] = tuple(section[key])
    try:
        spec = MixtureSpec(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mixture config: {exc}") from exc
    return dataclasses.replace(spec, seed=_seed_override(spec.seed))


def _train_config(section: dict, latent_dim: int | None = None) -> TrainConfig:
    _strict_fields(section, TrainConfig, "train config")
    section = dict(section)
    if latent_dim is not None:
        section.setdefault("latent_dim", latent_dim)
    try:
        cfg = TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train config: {exc}") from exc
    return dataclasses.replace(cfg, seed=_seed_override(cfg.seed))


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    spec = _mixture_spec(cfg.get("mixture", cfg))
    out = Path(args.out or "dataset")
    try:
        ds = generate(spec)
    except ValueError as exc:
        raise ConfigError(f"mixture generation: {exc}") from exc
    save_dataset(ds, out)
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ds_dir = Path(args.dataset)
    if not ds_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {ds_dir}")
    ds = load_dataset(ds_dir)
    tcfg = _train_config(cfg.get("train", cfg), latent_dim=ds.spec.d)
    state, trace = train(tcfg, ds.observations)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, tcfg, out / "checkpoint.json")
    write_trace_csv(trace, out / "trace.csv")
    print(f"final recon {trace[-1].recon:.6g} after {tcfg.epochs} epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds_dir = Path(args.dataset)
    if not ds_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {ds_dir}")
    try:
        enc, _, _, _ = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    ds = load_dataset(ds_dir)
    shat = mlp_forward_batch(enc, ds.observations)
    report = score(ds.latents, shat, seed=_seed_override(0))
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save_json(out / "report.json")
        report.save_heatmap_csv(out / "heatmap.csv")
    print(payload)
    return EXIT_OK


def _run_trial(spec: MixtureSpec, tcfg: TrainConfig, criterion: str, trial: int, base_seed: int):
    seed = split_seed(base_seed, trial)
    spec = dataclasses.replace(spec, seed=seed)
    tcfg = dataclasses.replace(tcfg, seed=seed, criterion=criterion)
    ds = generate(spec)
    try:
        state, _ = train(tcfg, ds.observations)
    except TrainingCollapse as exc:
        return {"status": f"collapse:{exc}", "r2": float("nan"), "mcc": float("nan")}
    shat = mlp_forward_batch(state.encoder, ds.observations)
    report = score(ds.latents, shat, seed=seed)
    return {"status": "ok", "r2": report.mean_r2, "mcc": report.mean_mcc}


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    for key in ("mixture", "criteria"):
        if key not in cfg:
            raise ConfigError(f"benchmark config needs a '{key}' section")
    extra = set(cfg) - {"mixture", "train", "criteria", "n_trials", "base_seed", "out_dir"}
    if extra:
        raise ConfigError(f"unknown keys in benchmark config: {sorted(extra)}")
    criteria = cfg["criteria"]
    if not criteria:
        raise ConfigError("criteria list must be nonempty")
    n_trials = int(cfg.get("n_trials", 1))
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    base_seed = int(cfg.get("base_seed", 0))
    if os.environ.get("DICA_SEED"):
        base_seed = int(os.environ["DICA_SEED"])
    spec = _mixture_spec(cfg["mixture"])
    tcfg = _train_config(cfg.get("train", {}), latent_dim=spec.d)

    jobs = [(c, t) for c in criteria for t in range(n_trials)]
    if args.threads and args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(
                pool.map(lambda j: _run_trial(spec, tcfg, j[0], j[1], base_seed), jobs)
            )
    else:
        results = [_run_trial(spec, tcfg, c, t, base_seed) for c, t in jobs]

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "benchmark.csv"
    with open(path, "w", buffering=1, newline="\n") as fh:
        fh.write("criterion,d,m,trial,r2,mcc,status\n")
        for (crit, trial), res in zip(jobs, results):
            fh.write(
                f"{crit},{spec.d},{spec.m},{trial},"
                f"{res['r2']!r},{res['mcc']!r},{res['status']}\n"
            )
        for crit in criteria:
            vals = [
                res for (c, _), res in zip(jobs, results)
                if c == crit and res["status"] == "ok"
            ]
            for stat, fn in (("mean", statistics.fmean), ("std", _std)):
                r2 = fn([v["r2"] for v in vals]) if vals else float("nan")
                mcc = fn([v["mcc"] for v in vals]) if vals else float("nan")
                fh.write(f"{crit},{spec.d},{spec.m},{stat},{r2!r},{mcc!r},aggregate\n")
    print(f"benchmark results written to {path}")
    return EXIT_OK


def _std(vals):
    return statistics.stdev(vals) if len(vals) > 1 else 0.0


def cmd_sdi_check(args) -> int:
    try:
        grads = np.loadtxt(args.gradients, delimiter=",", ndmin=2)
        weights = np.loadtxt(args.weights, delimiter=",", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse input CSV: {exc}") from exc
    try:
        cert = certify_sdi(grads, WeightedL1Ball(weights), tol=args.tol)
    except Exception as exc:
        raise ConfigError(f"certification failed: {exc}") from exc
    print(json.dumps(cert.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dica",
        description="Diverse-influence component analysis experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic mixture dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train an autoencoder on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="generate/train/eval over criteria and trials")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sdi-check", help="certify diverse influence for a gradient CSV")
    p.add_argument("gradients")
    p.add_argument("weights")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_sdi_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingCollapse as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
