"""Volume-regularized autoencoder training with warm-up scheduling.

The minimized per-sample objective depends on the criterion:

* ``dica``:   recon - lam_vol(t) * volume + lam_norm * norm_term
* ``base``:   recon
* ``sparse``: recon + lam_sp * ||J||_1
* ``ima``:    recon + lam_ima * (sum_j log||J_:,j|| - logdet(J^T J) / 2)

``volume`` is log det(J^T J) or the cheaper pairwise column-spread trace
surrogate. During the first ``warmup`` epochs the volume weight ramps
linearly from 0 and the norm term is the raw Jacobian L1 norm; afterwards
the norm term becomes Softplus(norm - C) with C frozen to the trailing
10-epoch average of the mean Jacobian norm at the transition.

Samples whose Jacobian Gram matrix loses positive definiteness are skipped
and counted; a run aborts (TrainingCollapse) if more than 1% of samples
skip within one epoch.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .models import (
    MlpParams,
    batch_terms_and_grads,
    flatten_params,
    params_from_dict,
    params_to_dict,
    unflatten_params,
)
from .numerics import make_rng

__all__ = [
    "TrainingCollapse",
    "TrainConfig",
    "TrainState",
    "EpochRecord",
    "lambda_vol_schedule",
    "he_init",
    "AdamState",
    "adam_step",
    "train",
    "write_trace_csv",
    "save_checkpoint",
    "load_checkpoint",
]

CRITERIA = ("dica", "base", "sparse", "ima")
SURROGATES = ("logdet", "trace")
NORM_VARIANTS = ("matrix_l1", "rowwise")
INIT_SCHEMES = ("he_uniform", "he_normal")
SKIP_ABORT_FRACTION = 0.01
C_WINDOW = 10


class TrainingCollapse(Exception):
    """Too many rank-deficient Jacobians in a single epoch."""


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int
    epochs: int = 200
    warmup: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-4
    lam_vol: float = 1e-4
    lam_norm: float = 1e-4
    lam_sp: float = 1e-4
    lam_ima: float = 1e-4
    criterion: str = "dica"
    vol_surrogate: str = "logdet"
    norm_variant: str = "matrix_l1"
    hidden: int = 64
    activation: str = "relu"
    seed: int = 0
    init: str = "he_uniform"
    full_batch: bool = False
    gram_ridge: bool = False

    def __post_init__(self):
        if not (0 <= self.warmup < self.epochs):
            raise ValueError("need 0 <= warmup < epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for lam in (self.lam_vol, self.lam_norm, self.lam_sp, self.lam_ima):
            if lam < 0:
                raise ValueError("loss weights must be >= 0")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.vol_surrogate not in SURROGATES:
            raise ValueError(f"vol_surrogate must be one of {SURROGATES}")
        if self.norm_variant not in NORM_VARIANTS:
            raise ValueError(f"norm_variant must be one of {NORM_VARIANTS}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}")


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    vol: float
    norm_raw: float
    lambda_vol_eff: float
    wall_ms: float
    skipped: int


@dataclass
class TrainState:
    encoder: MlpParams
    decoder: MlpParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    epoch: int
    c_cap: float | None
    norm_window: deque = field(default_factory=lambda: deque(maxlen=C_WINDOW))


def lambda_vol_schedule(t: int, warmup: int, lam_vol: float) -> float:
    """Linear ramp from 0 at t=0 to lam_vol at t=warmup, flat afterwards."""
    if t < 0:
        raise ValueError("epoch index must be >= 0")
    if warmup == 0:
        return lam_vol
    return lam_vol / warmup * min(t, warmup)


def _he_layer(rng, fan_out, fan_in, scheme):
    if scheme == "he_uniform":
        bound = np.sqrt(6.0 / fan_in)
        return bound * (2.0 * rng.random((fan_out, fan_in)) - 1.0)
    return np.sqrt(2.0 / fan_in) * rng.standard_normal((fan_out, fan_in))


def he_init(
    rng: np.random.Generator,
    in_dim: int,
    hidden: int,
    out_dim: int,
    scheme: str = "he_uniform",
    activation: str = "relu",
) -> MlpParams:
    """He-initialized one-hidden-layer MLP with zero biases."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return MlpParams(
        w1=_he_layer(rng, hidden, in_dim, scheme),
        b1=np.zeros(hidden),
        w2=_he_layer(rng, out_dim, hidden, scheme),
        b2=np.zeros(out_dim),
        activation=activation,
    )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates the moment state in place."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def _fuse_weights(cfg: TrainConfig, lam_vol_eff: float) -> dict[str, float]:
    """Scalar term weights of the minimized objective for one criterion."""
    if cfg.criterion == "base":
        return {"recon": 1.0}
    if cfg.criterion == "sparse":
        return {"recon": 1.0, "sparse": cfg.lam_sp}
    if cfg.criterion == "ima":
        return {"recon": 1.0, "ima": cfg.lam_ima}
    vol_key = "trace" if cfg.vol_surrogate == "trace" else "vol"
    return {"recon": 1.0, vol_key: -lam_vol_eff, "norm": cfg.lam_norm}


def train(cfg: TrainConfig, data: np.ndarray):
    """Run the full training loop; returns (TrainState, list[EpochRecord]).

    Deterministic given (cfg, data): the same seed reproduces bit-identical
    parameters.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise ValueError("observations must be a finite 2-D array")
    n, m = x.shape
    d, h = cfg.latent_dim, cfg.hidden
    rng = make_rng(cfg.seed)
    enc = he_init(rng, m, h, d, cfg.init, cfg.activation)
    dec = he_init(rng, d, h, m, cfg.init, cfg.activation)
    flat = flatten_params(enc, dec)
    adam = AdamState(m=np.zeros_like(flat), v=np.zeros_like(flat))

    needs_jac = cfg.criterion != "base"
    need_vol = cfg.criterion == "ima" or (
        cfg.criterion == "dica" and cfg.vol_surrogate == "logdet"
    )
    need_trace = cfg.criterion == "dica" and cfg.vol_surrogate == "trace"
    rowwise = cfg.norm_variant == "rowwise"

    state = TrainState(
        encoder=enc, decoder=dec,
        adam_m=adam.m, adam_v=adam.v, adam_t=0,
        epoch=0, c_cap=None,
    )
    trace: list[EpochRecord] = []
    batch = n if cfg.full_batch else min(cfg.batch_size, n)

    for t in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        warm = t <= cfg.warmup or cfg.warmup == 0
        lam_vol_eff = lambda_vol_schedule(t, cfg.warmup, cfg.lam_vol)
        fuse = _fuse_weights(cfg, lam_vol_eff)
        order = rng.permutation(n)
        sums = {"recon": 0.0, "vol": 0.0, "norm_raw": 0.0}
        kept = 0
        skipped = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb = x[idx]
            terms, grads, ok = batch_terms_and_grads(
                enc, dec, xb,
                need_vol=need_vol,
                need_trace=need_trace,
                c_cap=state.c_cap,
                constrained=needs_jac and not warm and state.c_cap is not None,
                rowwise_norm=rowwise,
                gram_ridge=cfg.gram_ridge,
                fuse=fuse,
            )
            n_ok = int(np.sum(ok))
            skipped += xb.shape[0] - n_ok
            if n_ok == 0:
                continue
            kept += n_ok
            sums["recon"] += float(np.sum(terms["recon"]))
            if needs_jac:
                sums["norm_raw"] += float(np.sum(terms["norm_raw"]))
            if need_vol:
                sums["vol"] += float(np.sum(terms["vol"]))
            total = grads["total"] / n_ok
            flat = adam_step(adam, flat, total, cfg.learning_rate)
            enc, dec = unflatten_params(flat, enc, dec)
        if skipped > SKIP_ABORT_FRACTION * n:
            raise TrainingCollapse(
                f"epoch {t}: {skipped}/{n} samples had singular Jacobians"
            )
        kept = max(kept, 1)
        mean_norm = sums["norm_raw"] / kept if needs_jac else float("nan")
        if needs_jac:
            state.norm_window.append(mean_norm)
        if cfg.criterion == "dica" and cfg.warmup > 0 and t == cfg.warmup:
            # freeze the norm cap to the trailing-window average; rowwise
            # caps individual rows at the average per-row share
            avg = float(np.mean(state.norm_window))
            state.c_cap = avg / m if rowwise else avg
        trace.append(
            EpochRecord(
                epoch=t,
                recon=sums["recon"] / kept,
                vol=sums["vol"] / kept if need_vol else float("nan"),
                norm_raw=mean_norm,
                lambda_vol_eff=lam_vol_eff,
                wall_ms=(time.perf_counter() - tic) * 1e3,
                skipped=skipped,
            )
        )
        state.epoch = t

    state.encoder, state.decoder = enc, dec
    state.adam_m, state.adam_v, state.adam_t = adam.m, adam.v, adam.t
    return state, trace


def write_trace_csv(trace: list[EpochRecord], path) -> None:
    cols = ["epoch", "recon", "vol", "norm_raw", "lambda_vol_eff", "wall_ms", "skipped"]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in trace:
            row = [repr(getattr(rec, c)) for c in cols]
            fh.write(",".join(row) + "\n")


def save_checkpoint(state: TrainState, cfg: TrainConfig, path) -> None:
    """Documented JSON checkpoint: both MLPs plus scalar training state."""
    obj = {
        "config": asdict(cfg),
        "encoder": params_to_dict(state.encoder),
        "decoder": params_to_dict(state.decoder),
        "epoch": state.epoch,
        "c_cap": state.c_cap,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (encoder, decoder, config_dict, scalars_dict)."""
    with open(Path(path)) as fh:
        obj = json.load(fh)
    enc = params_from_dict(obj["encoder"])
    dec = params_from_dict(obj["decoder"])
    return enc, dec, obj["config"], {"epoch": obj["epoch"], "c_cap": obj["c_cap"]}
