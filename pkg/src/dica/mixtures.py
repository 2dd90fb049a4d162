"""Synthetic benchmark mixtures with ground-truth latents.

Three generators are provided: a linear mixture with dependent Gaussian
latents (A), the same mixture passed through an element-wise cosine
distortion (B), and random one-hidden-layer tanh MLP mixing functions with a
down-scaled-input subset that plants dominant-influence gradients (C).

Mixing matrices for A/B are built to satisfy the diverse-influence geometry
by construction: rows are sampled from an inflated L2 ball, Euclidean-
projected onto the target weighted L1 ball, and the 2d axis points +-w_k e_k
are injected so the certified condition holds deterministically. A pure
sample-and-project mode is available via ``inject_axes=False``.

Dataset directory layout
------------------------
``spec.json``          all MixtureSpec fields by name
``latents.csv``        header ``s1..sd``, one sample per line, repr floats
``observations.csv``   header ``x1..xm``, same convention
``artifacts.bin``      binary bundle of generator arrays; layout: an 8-byte
                       little-endian length prefix, a UTF-8 JSON manifest
                       ``[{"name", "shape"}, ...]``, then each array's
                       float64 little-endian row-major bytes in order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numerics import make_rng, sample_wishart

__all__ = [
    "InvalidDims",
    "MixtureSpec",
    "Dataset",
    "project_weighted_l1",
    "gen_sdi_matrix",
    "gen_mixture_a",
    "gen_mixture_b",
    "gen_mixture_c",
    "generate",
    "regenerate_observations",
    "save_dataset",
    "load_dataset",
]

MIXTURE_KINDS = ("A", "B", "C")
HIDDEN_WIDTH_C = 64


class InvalidDims(ValueError):
    """Dimension constraint violated (e.g. m < 2d for axis injection)."""


@dataclass(frozen=True)
class MixtureSpec:
    kind: str
    d: int
    m: int
    n_samples: int
    seed: int
    w: tuple[float, ...] | None = None
    distortion_range: tuple[float, float] = (0.5, 1.0)
    per_coordinate_distortion: bool = False
    downscale_range: tuple[float, float] = (0.001, 0.002)
    flip_prob: float = 0.5
    inject_axes: bool = True

    def __post_init__(self):
        if self.kind not in MIXTURE_KINDS:
            raise ValueError(f"kind must be one of {MIXTURE_KINDS}")
        if not (self.m >= self.d >= 1):
            raise InvalidDims(f"need m >= d >= 1, got m={self.m}, d={self.d}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        lo, hi = self.distortion_range
        if not (0.0 <= lo <= hi):
            raise ValueError("bad distortion range")
        if self.w is not None:
            object.__setattr__(self, "w", tuple(float(v) for v in self.w))
            if len(self.w) != self.d or any(v <= 0 for v in self.w):
                raise ValueError("w must be d strictly positive weights")

    def weights(self) -> np.ndarray:
        return np.ones(self.d) if self.w is None else np.asarray(self.w)


@dataclass
class Dataset:
    """Ground-truth latents (hidden from trainers) plus observations."""

    latents: np.ndarray
    observations: np.ndarray
    spec: MixtureSpec
    mixing_artifacts: dict[str, np.ndarray] = field(default_factory=dict)


def project_weighted_l1(p: np.ndarray, w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto {y : sum_k |y_k| / w_k <= 1}.

    Solved by bisection on the dual threshold of the weighted soft-
    thresholding operator: y_k = sign(p_k) max(|p_k| - lam / w_k, 0).
    """
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    absp = np.abs(p)
    if np.sum(absp / w) <= 1.0:
        return p.copy()

    def gauge(lam):
        return np.sum(np.maximum(absp - lam / w, 0.0) / w)

    lo, hi = 0.0, float(np.max(absp * w))
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gauge(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    return np.sign(p) * np.maximum(absp - lam / w, 0.0)


def gen_sdi_matrix(
    rng: np.random.Generator,
    d: int,
    m: int,
    w: np.ndarray | None = None,
    inject_axes: bool = True,
) -> np.ndarray:
    """m x d mixing matrix whose rows are scattered in the weighted L1 ball.

    Rows are drawn uniformly from an L2 ball inflated to 1.5x the ball's
    circumradius and projected onto the weighted L1 ball. With
    ``inject_axes`` the 2d points +-w_k e_k replace the first 2d rows, which
    pins the hull to the ball's vertices.
    """
    w = np.ones(d) if w is None else np.asarray(w, dtype=np.float64)
    if inject_axes and m < 2 * d:
        raise InvalidDims(f"axis injection needs m >= 2d, got m={m}, d={d}")
    radius = 1.5 * float(np.max(w))
    z = rng.standard_normal((m, d))
    dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
    radii = radius * rng.random(m) ** (1.0 / d)
    rows = np.array([project_weighted_l1(r * u, w) for r, u in zip(radii, dirs)])
    if inject_axes:
        axes = np.zeros((2 * d, d))
        for k in range(d):
            axes[2 * k, k] = w[k]
            axes[2 * k + 1, k] = -w[k]
        rows[: 2 * d] = axes
    return rows


def gen_mixture_a(spec: MixtureSpec, rng: np.random.Generator) -> Dataset:
    """Linear mixture x = A s with dependent Gaussian latents."""
    d, m, n = spec.d, spec.m, spec.n_samples
    a_mat = gen_sdi_matrix(rng, d, m, spec.weights(), spec.inject_axes)
    sigma = sample_wishart(rng, d)
    chol = np.linalg.cholesky(sigma)
    s = rng.standard_normal((n, d)) @ chol.T
    x = s @ a_mat.T
    return Dataset(
        latents=s,
        observations=x,
        spec=spec,
        mixing_artifacts={"A": a_mat, "Sigma": sigma},
    )


def gen_mixture_b(spec: MixtureSpec, rng: np.random.Generator) -> Dataset:
    """Mixture A composed with the element-wise distortion a cos(z) + z.

    One distortion amplitude a ~ U(range) is shared by all coordinates by
    default; a < 1 keeps every coordinate map strictly increasing.
    """
    base = gen_mixture_a(spec, rng)
    lo, hi = spec.distortion_range
    size = spec.m if spec.per_coordinate_distortion else 1
    a = lo + (hi - lo) * rng.random(size)
    z = base.observations
    x = a * np.cos(z) + z
    base.observations = x
    base.mixing_artifacts["a"] = a
    return base


def gen_mixture_c(spec: MixtureSpec, rng: np.random.Generator) -> Dataset:
    """Random tanh-MLP mixing with a dominant-influence first half.

    Each coordinate map f_k is a one-hidden-layer tanh MLP (width 64,
    weights N(0, 1/fan_in)). For k < floor(m/2), d-1 randomly chosen inputs
    are down-scaled by alpha_j beta_j with alpha_j ~ U(range) and beta_j a
    fair sign, so the remaining input dominates grad f_k. The unscaled
    input's path weight is exactly 1.
    """
    d, m, n, h = spec.d, spec.m, spec.n_samples, HIDDEN_WIDTH_C
    lo, hi = spec.downscale_range
    w1 = rng.standard_normal((m, h, d)) / np.sqrt(d)
    b1 = rng.standard_normal((m, h)) / np.sqrt(d)
    w2 = rng.standard_normal((m, h)) / np.sqrt(h)
    b2 = rng.standard_normal(m) / np.sqrt(h)
    scales = np.ones((m, d))
    for k in range(m // 2):
        scaled = rng.permutation(d)[: d - 1]
        alpha = lo + (hi - lo) * rng.random(d - 1)
        beta = np.where(rng.random(d - 1) < spec.flip_prob, -1.0, 1.0)
        scales[k, scaled] = alpha * beta
    s = 2.0 * rng.random((n, d)) - 1.0
    x = _mlp_mix(s, w1, b1, w2, b2, scales)
    return Dataset(
        latents=s,
        observations=x,
        spec=spec,
        mixing_artifacts={"w1": w1, "b1": b1, "w2": w2, "b2": b2, "scales": scales},
    )


def _mlp_mix(s, w1, b1, w2, b2, scales):
    """Apply the per-coordinate tanh MLPs of Mixture C to latents s (n, d)."""
    # pre: (m, n, h) = per-output hidden pre-activations
    pre = np.einsum("mhd,md,nd->nmh", w1, scales, s, optimize=True) + b1
    return np.einsum("nmh,mh->nm", np.tanh(pre), w2, optimize=True) + b2


def generate(spec: MixtureSpec) -> Dataset:
    """Generate a dataset from its spec; fully determined by spec.seed."""
    rng = make_rng(spec.seed)
    gen = {"A": gen_mixture_a, "B": gen_mixture_b, "C": gen_mixture_c}[spec.kind]
    return gen(spec, rng)


def regenerate_observations(ds: Dataset) -> np.ndarray:
    """Recompute observations from latents and recorded mixing artifacts."""
    art = ds.mixing_artifacts
    if ds.spec.kind == "A":
        return ds.latents @ art["A"].T
    if ds.spec.kind == "B":
        z = ds.latents @ art["A"].T
        return art["a"] * np.cos(z) + z
    return _mlp_mix(ds.latents, art["w1"], art["b1"], art["w2"], art["b2"], art["scales"])


# --- serialization ---------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_artifacts(path: Path, arrays: dict[str, np.ndarray]) -> None:
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def _read_artifacts(path: Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        out = {}
        for entry in manifest:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spec.json", "w") as fh:
        json.dump(asdict(ds.spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    d, m = ds.spec.d, ds.spec.m
    _write_csv(out / "latents.csv", [f"s{i + 1}" for i in range(d)], ds.latents)
    _write_csv(out / "observations.csv", [f"x{i + 1}" for i in range(m)], ds.observations)
    _write_artifacts(out / "artifacts.bin", ds.mixing_artifacts)
    return out


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    with open(src / "spec.json") as fh:
        raw = json.load(fh)
    for key in ("w", "distortion_range", "downscale_range"):
        if raw.get(key) is not None:
            raw[key] = tuple(raw[key])
    spec = MixtureSpec(**raw)
    latents = np.loadtxt(src / "latents.csv", delimiter=",", skiprows=1, ndmin=2)
    observations = np.loadtxt(src / "observations.csv", delimiter=",", skiprows=1, ndmin=2)
    artifacts = _read_artifacts(src / "artifacts.bin")
    return Dataset(latents, observations, spec, artifacts)
