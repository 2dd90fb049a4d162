"""Dense linear algebra, random sampling, and finite-difference oracles.

Everything here is a thin, contract-checked layer over numpy. Matrices are
plain float64 ndarrays; ``check_matrix`` enforces finiteness on the way in.
Randomness goes through Philox (counter-based), so equal seeds reproduce
byte-identical streams on any platform.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NotPositiveDefinite",
    "SingularJacobian",
    "NonFiniteEvaluation",
    "make_rng",
    "split_seed",
    "check_matrix",
    "cholesky",
    "logdet_gram",
    "logdet_gram_batch",
    "sample_gaussian_vec",
    "sample_wishart",
    "finite_diff_grad",
]


class NotPositiveDefinite(Exception):
    """Cholesky hit a non-positive pivot."""


class SingularJacobian(Exception):
    """J^T J is numerically rank deficient (decoder Jacobian collapsed)."""


class NonFiniteEvaluation(Exception):
    """A function probe returned NaN or Inf."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(seed))


def split_seed(base_seed: int, index: int) -> int:
    """Derive an independent per-trial seed from a base seed."""
    return int(base_seed) ^ int(index)


def check_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a float64 2-D array and reject non-finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN/Inf entries")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {a.shape[1]}")
    return a


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a for symmetric positive definite a.

    Raises NotPositiveDefinite when a pivot <= 0 is encountered, and
    ValueError when a is not square/symmetric to 1e-10.
    """
    a = check_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError("cholesky needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to tolerance 1e-10")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def logdet_gram(j) -> float:
    """log det(J^T J) for a tall matrix J, via Cholesky of the d x d Gram.

    Cost is O(m d^2 + d^3); the m x m route is never taken since m >> d
    throughout. Raises SingularJacobian if the Gram is not positive definite.
    """
    j = check_matrix(j)
    m, d = j.shape
    if m < d:
        raise ValueError(f"need m >= d, got shape {j.shape}")
    gram = j.T @ j
    try:
        low = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("J^T J is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(low))))


def logdet_gram_batch(j: np.ndarray) -> np.ndarray:
    """Batched log det(J^T J) for a stack of Jacobians (n, m, d).

    Entries whose Gram fails Cholesky come back as NaN; callers decide
    whether to skip or abort.
    """
    gram = np.einsum("nmd,nme->nde", j, j)
    n, d = gram.shape[0], gram.shape[1]
    out = np.empty(n)
    # numpy's batched cholesky raises on the first failure, so detect
    # bad samples first via eigvalsh and mask them out; the relative
    # threshold keeps numerically semidefinite Grams out of the batch
    eig = np.linalg.eigvalsh(gram)
    ok = eig[:, 0] > np.finfo(np.float64).eps * d * eig[:, -1]
    out[~ok] = np.nan
    if np.any(ok):
        try:
            low = np.linalg.cholesky(gram[ok])
            out[ok] = 2.0 * np.sum(
                np.log(np.diagonal(low, axis1=1, axis2=2)), axis=1
            )
        except np.linalg.LinAlgError:
            for i in np.flatnonzero(ok):
                try:
                    low = np.linalg.cholesky(gram[i])
                    out[i] = 2.0 * np.sum(np.log(np.diag(low)))
                except np.linalg.LinAlgError:
                    out[i] = np.nan
    return out


def sample_gaussian_vec(rng: np.random.Generator, mean, chol_cov) -> np.ndarray:
    """Draw mean + L z with z standard normal and L a lower Cholesky factor."""
    mean = np.asarray(mean, dtype=np.float64)
    chol_cov = check_matrix(chol_cov, rows=mean.size, cols=mean.size)
    z = rng.standard_normal(mean.size)
    return mean + chol_cov @ z


def sample_wishart(rng: np.random.Generator, d: int) -> np.ndarray:
    """Draw from Wishart(I, d): G G^T with G a d x d standard normal matrix."""
    if d < 1:
        raise ValueError("d must be >= 1")
    g = rng.standard_normal((d, d))
    return g @ g.T


def finite_diff_grad(scalar_fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Independent oracle used by every analytic-gradient test; never reuse
    the analytic path inside this function.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty(point.size)
    flat = point.ravel()
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        fp = scalar_fn((flat + e).reshape(point.shape))
        fm = scalar_fn((flat - e).reshape(point.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite probe at coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad
