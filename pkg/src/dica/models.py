"""One-hidden-layer MLP encoder/decoder with exact Jacobians and gradients.

The decoder Jacobian has the closed form W2 diag(act'(W1 s + b1)) W1, and all
loss-term parameter gradients are derived by hand from that expression. The
only correctness contract is agreement with central finite differences, which
the test suite checks term by term.

Gradients of the volume / norm / sparsity / orthogonality terms flow through
both the decoder parameters and the encoder parameters via the latent code
(the full chain); for relu decoders the extra second-derivative term vanishes
almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SingularJacobian, check_matrix

__all__ = [
    "MlpParams",
    "LossTermGrads",
    "mlp_forward",
    "mlp_forward_batch",
    "decoder_jacobian",
    "decoder_jacobian_batch",
    "trace_vol",
    "softplus",
    "loss_terms",
    "loss_gradients",
    "batch_terms_and_grads",
    "flatten_params",
    "unflatten_params",
    "params_to_dict",
    "params_from_dict",
]

ACTIVATIONS = ("relu", "tanh")

_EINSUM_PATHS: dict = {}


def _esum(subscripts: str, *ops: np.ndarray) -> np.ndarray:
    """einsum with the contraction path planned once per operand shape."""
    key = (subscripts, tuple(op.shape for op in ops))
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *ops, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(subscripts, *ops, optimize=path)


@dataclass(frozen=True)
class MlpParams:
    """Weights of a one-hidden-layer perceptron (hidden x in, out x hidden)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "w1", check_matrix(self.w1))
        object.__setattr__(self, "w2", check_matrix(self.w2))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=np.float64))
        object.__setattr__(self, "b2", np.asarray(self.b2, dtype=np.float64))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        h, _ = self.w1.shape
        out, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (out,):
            raise ValueError("inconsistent MLP dimensions")
        if not (np.all(np.isfinite(self.b1)) and np.all(np.isfinite(self.b2))):
            raise ValueError("non-finite bias entries")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


def _act(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(u, 0.0)
    return np.tanh(u)


def _act_prime(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # derivative at exactly 0 is 0 (measure-zero convention)
        return (u > 0.0).astype(np.float64)
    t = np.tanh(u)
    return 1.0 - t * t


def _act_second(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.zeros_like(u)
    t = np.tanh(u)
    return -2.0 * t * (1.0 - t * t)


def mlp_forward(p: MlpParams, x) -> np.ndarray:
    """w2 act(w1 x + b1) + b2 for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    return p.w2 @ _act(p.w1 @ x + p.b1, p.activation) + p.b2


def mlp_forward_batch(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batched forward pass, x of shape (n, in)."""
    return _act(x @ p.w1.T + p.b1, p.activation) @ p.w2.T + p.b2


def decoder_jacobian(p: MlpParams, shat) -> np.ndarray:
    """Exact input Jacobian W2 diag(act'(W1 s + b1)) W1, shape (out, in)."""
    shat = np.asarray(shat, dtype=np.float64)
    a = _act_prime(p.w1 @ shat + p.b1, p.activation)
    return (p.w2 * a) @ p.w1


def decoder_jacobian_batch(p: MlpParams, shat: np.ndarray) -> np.ndarray:
    """Batched Jacobians, shape (n, out, in)."""
    a = _act_prime(shat @ p.w1.T + p.b1, p.activation)  # (n, h)
    return _esum("mh,nh,hd->nmd", p.w2, a, p.w1)


def trace_vol(j: np.ndarray) -> float:
    """Cheap volume surrogate tr((d I - 11^T) J^T J).

    Equals the sum over column pairs of ||J_:,i - J_:,j||^2, so maximizing it
    spreads the partial-derivative columns apart at O(m d^2) cost.
    """
    j = np.asarray(j, dtype=np.float64)
    d = j.shape[-1]
    gram = j.T @ j
    return float(d * np.trace(gram) - np.sum(gram))


def softplus(z):
    """log(1 + e^z) with the overflow-safe branch for large z."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass
class LossTermGrads:
    """Per-term gradients over the flattened (encoder, decoder) layout."""

    recon: np.ndarray
    vol: np.ndarray
    norm: np.ndarray
    sparse: np.ndarray
    ima: np.ndarray
    trace: np.ndarray
    total: np.ndarray


def flatten_params(enc: MlpParams, dec: MlpParams) -> np.ndarray:
    """Concatenate (w1, b1, w2, b2) of encoder then decoder, row-major."""
    return np.concatenate(
        [
            enc.w1.ravel(), enc.b1, enc.w2.ravel(), enc.b2,
            dec.w1.ravel(), dec.b1, dec.w2.ravel(), dec.b2,
        ]
    )


def unflatten_params(vec: np.ndarray, enc: MlpParams, dec: MlpParams):
    """Inverse of flatten_params, using enc/dec as shape templates."""
    out = []
    k = 0
    for tpl in (enc, dec):
        parts = []
        for arr in (tpl.w1, tpl.b1, tpl.w2, tpl.b2):
            parts.append(vec[k : k + arr.size].reshape(arr.shape))
            k += arr.size
        out.append(MlpParams(*parts, activation=tpl.activation))
    if k != vec.size:
        raise ValueError("parameter vector length mismatch")
    return out[0], out[1]


def _decoder_term_grads(dec: MlpParams, shat, a, a2, g_batch):
    """Backprop a stack of dT/dJ matrices through J = W2 diag(a) W1.

    shat: (n, d) latent points, a/a2: (n, h) first/second activation
    derivatives at the decoder hidden pre-activations, g_batch: (n, m, d).
    Returns (dw1, db1, dw2, dshat) summed over the batch, with dshat per
    sample (n, d); db2/dx-hat are zero for Jacobian-only terms.
    """
    w1, w2 = dec.w1, dec.w2
    dw2 = _esum("nmd,hd,nh->mh", g_batch, w1, a)
    q = _esum("mh,nmd,hd->nh", w2, g_batch, w1)
    a2q = a2 * q
    dw1 = _esum("nh,mh,nmd->hd", a, w2, g_batch)
    dw1 += a2q.T @ shat
    db1 = np.sum(a2q, axis=0)
    dshat = a2q @ w1
    return dw1, db1, dw2, dshat


def _encoder_backprop(enc: MlpParams, x, he, ae, v):
    """Push dT/dshat (n, d) through the encoder; returns flat encoder grad."""
    dw2 = v.T @ he
    db2 = np.sum(v, axis=0)
    du = (v @ enc.w2) * ae
    dw1 = du.T @ x
    db1 = np.sum(du, axis=0)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def batch_terms_and_grads(
    enc: MlpParams,
    dec: MlpParams,
    x: np.ndarray,
    *,
    need_vol: bool = True,
    need_trace: bool = False,
    c_cap: float | None = None,
    constrained: bool = False,
    rowwise_norm: bool = False,
    gram_ridge: bool = False,
    fuse: dict[str, float] | None = None,
):
    """Per-sample loss terms and summed per-term gradients over a batch.

    Returns (terms, grads, ok) where terms maps tag -> (n,) arrays, grads
    maps tag -> flat gradient arrays summed over the valid samples, and ok
    is the boolean mask of samples whose Gram matrix was positive definite
    (others are excluded from every term, volume-based or not, so skipped
    samples cannot skew the reconstruction average).

    When ``fuse`` maps term tags to scalar weights, grads instead holds the
    single key "total" = the weighted sum of the per-term gradients, built
    from one combined dT/dJ tensor so the training loop pays for one
    backprop-through-J per batch instead of one per term. Terms the fused
    objective does not touch are omitted from the terms dict when computing
    them would require work the fused path otherwise skips.
    """
    if fuse is not None:
        unknown = set(fuse) - {"recon", "vol", "norm", "sparse", "ima", "trace"}
        if unknown:
            raise ValueError(f"unknown fuse terms: {sorted(unknown)}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    d = dec.in_dim
    jac_tags = ("norm", "sparse", "ima", "trace")
    need_jac = (
        need_vol
        or need_trace
        or fuse is None
        or any(tag in fuse for tag in jac_tags)
    )

    # encoder forward
    ue = x @ enc.w1.T + enc.b1
    he = _act(ue, enc.activation)
    ae = _act_prime(ue, enc.activation)
    shat = he @ enc.w2.T + enc.b2

    # decoder forward
    ud = shat @ dec.w1.T + dec.b1
    hd = _act(ud, dec.activation)
    ad = _act_prime(ud, dec.activation)
    ad2 = _act_second(ud, dec.activation)
    xhat = hd @ dec.w2.T + dec.b2

    jac = gram = None
    if need_jac:
        jac = _esum("mh,nh,hd->nmd", dec.w2, ad, dec.w1)
        gram = jac.transpose(0, 2, 1) @ jac
        if gram_ridge:
            # training-robustness ridge; never used by the geometry certifier
            tr = np.trace(gram, axis1=1, axis2=2)
            gram = gram + (1e-12 / d) * tr[:, None, None] * np.eye(d)

    ok = np.ones(n, dtype=bool)
    low = None
    if need_vol:
        try:
            low = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            eig = np.linalg.eigvalsh(gram)
            ok = eig[:, 0] > np.finfo(np.float64).eps * d * np.abs(eig[:, -1])
    if not np.any(ok):
        empty = np.zeros(enc.n_params + dec.n_params)
        zeros = np.zeros(n)
        terms = {t: zeros.copy() for t in ("recon", "vol", "norm_raw", "sparse", "ima", "trace")}
        tags = ("total",) if fuse is not None else ("recon", "vol", "norm", "sparse", "ima", "trace")
        grads = {t: empty.copy() for t in tags}
        return terms, grads, ok

    if need_vol and not np.all(ok):
        keep = ok
        x, ue, he, ae, shat = x[keep], ue[keep], he[keep], ae[keep], shat[keep]
        ud, hd, ad, ad2, xhat = ud[keep], hd[keep], ad[keep], ad2[keep], xhat[keep]
        jac, gram = jac[keep], gram[keep]
    if need_vol and low is None:
        try:
            low = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            # numerically semidefinite survivors of the eigenvalue screen:
            # drop them one by one
            good = np.ones(gram.shape[0], dtype=bool)
            low = np.zeros_like(gram)
            for i in range(gram.shape[0]):
                try:
                    low[i] = np.linalg.cholesky(gram[i])
                except np.linalg.LinAlgError:
                    good[i] = False
            ok[np.flatnonzero(ok)[~good]] = False
            if not np.any(ok):
                empty = np.zeros(enc.n_params + dec.n_params)
                zeros = np.zeros(n)
                terms = {t: zeros.copy() for t in ("recon", "vol", "norm_raw", "sparse", "ima", "trace")}
                tags = ("total",) if fuse is not None else ("recon", "vol", "norm", "sparse", "ima", "trace")
                grads = {t: empty.copy() for t in tags}
                return terms, grads, ok
            if not np.all(good):
                x, ue, he, ae, shat = x[good], ue[good], he[good], ae[good], shat[good]
                ud, hd, ad, ad2, xhat = ud[good], hd[good], ad[good], ad2[good], xhat[good]
                jac, gram, low = jac[good], gram[good], low[good]
    gram_inv = np.linalg.inv(gram) if need_vol else None

    r = xhat - x
    terms: dict[str, np.ndarray] = {}
    terms["recon"] = np.sum(r * r, axis=1)
    if need_jac:
        terms["norm_raw"] = np.sum(np.abs(jac), axis=(1, 2))
        terms["sparse"] = terms["norm_raw"]
    if need_vol:
        vol = 2.0 * np.sum(np.log(np.diagonal(low, axis1=1, axis2=2)), axis=1)
        terms["vol"] = vol
        colsq = np.sum(jac * jac, axis=1)  # (n, d)
        terms["ima"] = 0.5 * np.sum(np.log(colsq), axis=1) - 0.5 * vol
    if need_trace:
        terms["trace"] = d * np.trace(gram, axis1=1, axis2=2) - np.sum(gram, axis=(1, 2))

    def assemble(g_batch, dshat_extra=None):
        dw1, db1, dw2, dshat = _decoder_term_grads(dec, shat, ad, ad2, g_batch)
        if dshat_extra is not None:
            dshat = dshat + dshat_extra
        dec_flat = np.concatenate([dw1.ravel(), db1, dw2.ravel(), np.zeros(dec.out_dim)])
        enc_flat = _encoder_backprop(enc, x, he, ae, dshat)
        return np.concatenate([enc_flat, dec_flat])

    grads: dict[str, np.ndarray] = {}

    # reconstruction: standard backprop through decoder then encoder
    dxhat = 2.0 * r
    dw2 = dxhat.T @ hd
    db2 = np.sum(dxhat, axis=0)
    dud = (dxhat @ dec.w2) * ad
    dw1 = dud.T @ shat
    db1 = np.sum(dud, axis=0)
    dshat_rec = dud @ dec.w1
    dec_flat = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
    enc_flat = _encoder_backprop(enc, x, he, ae, dshat_rec)
    recon_flat = np.concatenate([enc_flat, dec_flat])

    def norm_coeff(sign_j):
        if not constrained:
            return sign_j
        if c_cap is None:
            raise ValueError("c_cap required in the constrained phase")
        if rowwise_norm:
            rownorm = np.sum(np.abs(jac), axis=2)  # (n, m)
            gate = 1.0 / (1.0 + np.exp(-(rownorm - c_cap)))
            return sign_j * gate[:, :, None]
        gate = 1.0 / (1.0 + np.exp(-(terms["norm_raw"] - c_cap)))  # softplus'
        return sign_j * gate[:, None, None]

    if fuse is not None:
        # one combined dT/dJ tensor, one backprop through J
        g_total = None

        def accumulate(weight, g_term):
            nonlocal g_total
            g_total = weight * g_term if g_total is None else g_total + weight * g_term

        if fuse.get("sparse") or fuse.get("norm"):
            sign_j = np.sign(jac)
            if fuse.get("sparse"):
                accumulate(fuse["sparse"], sign_j)
            if fuse.get("norm"):
                accumulate(fuse["norm"], norm_coeff(sign_j))
        if fuse.get("vol") or fuse.get("ima"):
            g_inv = jac @ gram_inv
            if fuse.get("vol"):
                accumulate(fuse["vol"], 2.0 * g_inv)
            if fuse.get("ima"):
                accumulate(fuse["ima"], jac / colsq[:, None, :] - g_inv)
        if fuse.get("trace"):
            mmat = d * np.eye(d) - np.ones((d, d))
            accumulate(fuse["trace"], 2.0 * (jac @ mmat))

        total = fuse.get("recon", 0.0) * recon_flat
        if g_total is not None:
            total = total + assemble(g_total)
        grads["total"] = total
        return terms, grads, ok

    grads["recon"] = recon_flat
    sign_j = np.sign(jac)
    grads["sparse"] = assemble(sign_j)
    grads["norm"] = grads["sparse"] if not constrained else assemble(norm_coeff(sign_j))

    if need_vol:
        g_inv = jac @ gram_inv
        grads["vol"] = assemble(2.0 * g_inv)
        g_ima = jac / colsq[:, None, :] - g_inv
        grads["ima"] = assemble(g_ima)
    if need_trace:
        mmat = d * np.eye(d) - np.ones((d, d))
        grads["trace"] = assemble(2.0 * (jac @ mmat))

    return terms, grads, ok


def loss_terms(enc: MlpParams, dec: MlpParams, x) -> dict[str, float]:
    """All per-sample loss terms at one observation x.

    recon = ||x - dec(enc(x))||^2, vol = log det(J^T J), norm_raw = sum|J|,
    sparse = norm_raw, ima = sum_j log||J_:,j|| - vol / 2, trace = the
    pairwise column-spread surrogate. Raises SingularJacobian when J^T J is
    not positive definite.
    """
    terms, _, ok = batch_terms_and_grads(enc, dec, x, need_vol=True, need_trace=True)
    if not ok[0]:
        raise SingularJacobian("decoder Jacobian is rank deficient at this point")
    return {k: float(v[0]) for k, v in terms.items()}


def loss_gradients(
    enc: MlpParams,
    dec: MlpParams,
    x,
    weights: dict[str, float] | None = None,
    c_cap: float | None = None,
    phase: str = "warmup",
) -> LossTermGrads:
    """Per-term and composed parameter gradients at one observation.

    The composed total is the minimized objective
    recon - lam_vol * vol + lam_norm * (norm_raw or softplus(norm_raw - C))
    + lam_sp * sparse + lam_ima * ima, with the norm branch picked by phase.
    """
    if phase not in ("warmup", "constrained"):
        raise ValueError(f"unknown phase {phase!r}")
    w = {"lam_vol": 0.0, "lam_norm": 0.0, "lam_sp": 0.0, "lam_ima": 0.0}
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        w.update(weights)
    constrained = phase == "constrained"
    if constrained and (c_cap is None or c_cap <= 0):
        raise ValueError("constrained phase needs c_cap > 0")
    _, grads, ok = batch_terms_and_grads(
        enc, dec, x, need_vol=True, need_trace=True,
        c_cap=c_cap, constrained=constrained,
    )
    if not ok[0]:
        raise SingularJacobian("decoder Jacobian is rank deficient at this point")
    total = (
        grads["recon"]
        - w["lam_vol"] * grads["vol"]
        + w["lam_norm"] * grads["norm"]
        + w["lam_sp"] * grads["sparse"]
        + w["lam_ima"] * grads["ima"]
    )
    return LossTermGrads(
        recon=grads["recon"],
        vol=grads["vol"],
        norm=grads["norm"],
        sparse=grads["sparse"],
        ima=grads["ima"],
        trace=grads["trace"],
        total=total,
    )


def params_to_dict(p: MlpParams) -> dict:
    """JSON-ready representation (dims, activation, row-major entries)."""
    return {
        "activation": p.activation,
        "in_dim": p.in_dim,
        "hidden_dim": p.hidden_dim,
        "out_dim": p.out_dim,
        "w1": p.w1.ravel().tolist(),
        "b1": p.b1.tolist(),
        "w2": p.w2.ravel().tolist(),
        "b2": p.b2.tolist(),
    }


def params_from_dict(obj: dict) -> MlpParams:
    h, i, o = obj["hidden_dim"], obj["in_dim"], obj["out_dim"]
    return MlpParams(
        w1=np.asarray(obj["w1"], dtype=np.float64).reshape(h, i),
        b1=np.asarray(obj["b1"], dtype=np.float64),
        w2=np.asarray(obj["w2"], dtype=np.float64).reshape(o, h),
        b2=np.asarray(obj["b2"], dtype=np.float64),
        activation=obj["activation"],
    )
