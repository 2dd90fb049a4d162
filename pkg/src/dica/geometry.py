"""Low-dimensional convex geometry for diverse-influence certification.

Weighted L1 balls have an analytic inscribed ellipsoid of maximal volume
(diag(w)/sqrt(d)) and an analytic polar (a reciprocally weighted box), so
only the convex hull of the gradient cloud needs actual computation. Facets
come from qhull; vertices of an H-polytope are enumerated independently by
scanning d-subsets of facets, which keeps the facet and vertex routes
cross-checkable against each other.

Hard limits: d <= 6 for hulls, <= 200 facets for vertex enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .numerics import check_matrix

__all__ = [
    "DegenerateHull",
    "GradientOutsideBall",
    "PreconditionViolated",
    "WeightedL1Ball",
    "Ellipsoid",
    "HPolytope",
    "SdiCertificate",
    "mvie_weighted_l1",
    "polar_weighted_l1",
    "hull_facets",
    "ellipsoid_in_polytope",
    "vertex_enumerate",
    "certify_sdi",
    "check_det_bound",
]

MAX_HULL_DIM = 6
MAX_FACETS = 200


class DegenerateHull(Exception):
    """Points do not span R^d, or the origin is not strictly interior."""


class GradientOutsideBall(Exception):
    """A gradient row violates the weighted L1 ball constraint."""


class PreconditionViolated(Exception):
    """The sign-vector norm precondition of the determinant bound fails."""


@dataclass(frozen=True)
class WeightedL1Ball:
    """{y : sum_k |y_k| / w_k <= 1} for strictly positive weights w."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be a strictly positive finite vector")
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.w.size

    def norm(self, y) -> np.ndarray:
        """Gauge of the ball: sum_k |y_k| / w_k (membership iff <= 1)."""
        y = np.asarray(y, dtype=np.float64)
        return np.sum(np.abs(y) / self.w, axis=-1)


@dataclass(frozen=True)
class Ellipsoid:
    """Origin-centered ellipsoid {B u : ||u|| <= 1} with symmetric PD shape B."""

    shape: np.ndarray

    def __post_init__(self):
        b = check_matrix(self.shape)
        if b.shape[0] != b.shape[1] or np.max(np.abs(b - b.T)) > 1e-10:
            raise ValueError("shape must be square symmetric")
        if np.min(np.linalg.eigvalsh(b)) <= 0:
            raise ValueError("shape must be positive definite")
        object.__setattr__(self, "shape", b)


@dataclass
class HPolytope:
    """Polytope {y : normals[i] . y <= 1} with the origin strictly interior.

    The vertex list is filled lazily by vertex_enumerate.
    """

    normals: np.ndarray
    vertices: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.normals = check_matrix(self.normals)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def contains(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=np.float64)
        return bool(np.all(self.normals @ y <= 1.0 + tol))


@dataclass
class SdiCertificate:
    """Verdict and diagnostics for the diverse-influence condition at a point."""

    satisfied: bool
    condition1_margin: float
    condition2_max_vertex_norm: float
    condition2_extreme_vertices: np.ndarray
    condition2_ok: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "satisfied": bool(self.satisfied),
            "condition1_margin": float(self.condition1_margin),
            "condition2_max_vertex_norm": float(self.condition2_max_vertex_norm),
            "condition2_extreme_vertices": np.asarray(
                self.condition2_extreme_vertices
            ).tolist(),
            "condition2_ok": bool(self.condition2_ok),
            "tolerance": float(self.tolerance),
        }


def mvie_weighted_l1(ball: WeightedL1Ball) -> Ellipsoid:
    """Maximum-volume inscribed ellipsoid of a weighted L1 ball.

    The unit L1 ball inscribes the L2 ball of radius 1/sqrt(d); the weighted
    ball is its image under diag(w), so the MVIE shape is diag(w)/sqrt(d).
    """
    d = ball.dim
    return Ellipsoid(np.diag(ball.w) / np.sqrt(d))


def polar_weighted_l1(ball: WeightedL1Ball) -> HPolytope:
    """Polar of the weighted L1 ball: the box {y : max_k w_k |y_k| <= 1}.

    Returned in H-form with the 2^d sign-pattern vertices (+-1/w_k per
    coordinate) attached.
    """
    d = ball.dim
    normals = np.vstack([np.diag(ball.w), -np.diag(ball.w)])
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    vertices = signs / ball.w
    return HPolytope(normals=normals, vertices=vertices)


def _hull_equations(points):
    """Facet system A y <= b of conv(points) with unit normals (via qhull)."""
    pts = check_matrix(points)
    m, d = pts.shape
    if d > MAX_HULL_DIM:
        raise ValueError(f"hull facets supported for d <= {MAX_HULL_DIM}, got d={d}")
    if m < d + 1:
        raise DegenerateHull(f"need at least d+1={d + 1} points, got {m}")
    if d == 1:
        lo, hi = float(np.min(pts)), float(np.max(pts))
        if lo == hi:
            raise DegenerateHull("all points coincide")
        return np.array([[1.0], [-1.0]]), np.array([hi, -lo])
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateHull(str(exc)) from exc
    # qhull equations: A y + b <= 0
    return hull.equations[:, :-1], -hull.equations[:, -1]


def hull_facets(points) -> HPolytope:
    """Facet enumeration of conv(points) normalized to a_i . y <= 1.

    Requires full-dimensional input with the origin strictly interior.
    """
    a_mat, b_vec = _hull_equations(points)
    if np.any(b_vec <= 1e-12):
        raise DegenerateHull("origin is not strictly interior to the hull")
    return HPolytope(normals=a_mat / b_vec[:, None])


def ellipsoid_in_polytope(e: Ellipsoid, p: HPolytope) -> float:
    """Signed containment margin min_i (1 - ||B a_i||).

    The support function of {B u : ||u|| <= 1} in direction a is ||B a|| for
    symmetric B, so the margin is >= 0 exactly when the ellipsoid fits.
    """
    support = np.linalg.norm(p.normals @ e.shape, axis=1)
    return float(np.min(1.0 - support))


def vertex_enumerate(p: HPolytope, tol: float = 1e-8) -> np.ndarray:
    """All vertices of an H-polytope by scanning d-subsets of facets.

    O(C(f, d) d^3); fine for d <= 6 and f <= 200, rejected beyond that.
    Vertices are deduplicated at tol and cached on the polytope.
    """
    a_mat = p.normals
    f, d = a_mat.shape
    if d > MAX_HULL_DIM or f > MAX_FACETS:
        raise ValueError(
            f"vertex_enumerate limited to d <= {MAX_HULL_DIM}, facets <= {MAX_FACETS}"
        )
    if f < d:
        raise DegenerateHull("fewer facets than dimensions: unbounded")
    found: list[np.ndarray] = []
    for idx in itertools.combinations(range(f), d):
        sub = a_mat[list(idx)]
        try:
            v = np.linalg.solve(sub, np.ones(d))
        except np.linalg.LinAlgError:
            continue
        if np.max(a_mat @ v) > 1.0 + tol:
            continue
        if not any(np.max(np.abs(v - u)) <= tol for u in found):
            found.append(v)
    if not found:
        raise DegenerateHull("no vertices found (degenerate facet system)")
    verts = np.array(sorted(found, key=tuple))
    p.vertices = verts
    return verts


def certify_sdi(gradients, ball: WeightedL1Ball, tol: float = 1e-6) -> SdiCertificate:
    """Certify the diverse-influence condition for a gradient cloud.

    Condition 1: the ball's MVIE must fit inside conv(gradients) (and every
    gradient must lie in the ball). Condition 2 is checked in rescaled
    coordinates z_i = diag(1/w) grad_i, where it reads: the polar polytope
    {y : z_i . y <= 1} touches the sphere of radius sqrt(d) exactly at the
    2^d sign vectors {+-1}^d.
    """
    grads = check_matrix(gradients)
    m, d = grads.shape
    if m < 2 * d:
        raise ValueError(f"need at least 2d={2 * d} gradients, got {m}")
    if d > 5:
        raise ValueError("certification supported for d <= 5")
    if ball.dim != d:
        raise ValueError("ball dimension mismatch")
    gauge = ball.norm(grads)
    if np.any(gauge > 1.0 + tol):
        raise GradientOutsideBall(
            f"max gauge {np.max(gauge):.6g} exceeds 1 + tol"
        )

    mvie = mvie_weighted_l1(ball)
    a_mat, b_vec = _hull_equations(grads)
    origin_interior = bool(np.all(b_vec > 1e-12))
    if origin_interior:
        margin = ellipsoid_in_polytope(mvie, HPolytope(normals=a_mat / b_vec[:, None]))
    else:
        # MVIE cannot fit; report the raw (unit-normal) shortfall as margin
        margin = float(np.min(b_vec - np.linalg.norm(a_mat @ mvie.shape, axis=1)))
    cond1 = margin >= -tol

    sqrt_d = np.sqrt(d)
    max_norm = float("inf")
    extreme = np.empty((0, d))
    cond2 = False
    if origin_interior:
        # rescaled condition-2 check: z_i in the unit L1 ball, polar polytope
        # {y : z_i . y <= 1} against the sphere of radius sqrt(d)
        z = grads / ball.w
        # the polar only depends on the hull vertices of the z cloud;
        # pruning keeps vertex enumeration within its facet budget
        if d >= 2 and z.shape[0] > 2 * d + 2:
            try:
                z = z[ConvexHull(z).vertices]
            except QhullError as exc:
                raise DegenerateHull(str(exc)) from exc
        verts = vertex_enumerate(HPolytope(normals=z))
        norms = np.linalg.norm(verts, axis=1)
        max_norm = float(np.max(norms))
        extreme = verts[norms >= sqrt_d - tol]
        sign_box = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        cond2 = abs(max_norm - sqrt_d) <= tol
        if cond2:
            if extreme.shape[0] != sign_box.shape[0]:
                cond2 = False
            else:
                cond2 = all(
                    any(np.max(np.abs(v - s)) <= tol for v in extreme)
                    for s in sign_box
                )

    return SdiCertificate(
        satisfied=bool(cond1 and cond2),
        condition1_margin=margin,
        condition2_max_vertex_norm=max_norm,
        condition2_extreme_vertices=extreme,
        condition2_ok=bool(cond2),
        tolerance=tol,
    )


def check_det_bound(h) -> dict:
    """Determinant bound for matrices bounded on sign vectors.

    If ||h^T u|| <= sqrt(d) for every u in {+-1}^d then |det h| <= 1, with
    equality exactly for orthogonal h. The sign-vector condition is a
    precondition and is verified first.
    """
    h = check_matrix(h)
    d = h.shape[0]
    if h.shape[1] != d:
        raise ValueError("square matrix required")
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    norms = np.linalg.norm(signs @ h, axis=1)
    if np.any(norms > np.sqrt(d) + 1e-9):
        raise PreconditionViolated(
            f"max ||h^T u|| = {np.max(norms):.6g} exceeds sqrt(d)"
        )
    det = float(np.linalg.det(h))
    return {
        "bound_holds": bool(abs(det) <= 1.0 + 1e-9),
        "is_orthogonal_scaled": bool(np.max(np.abs(h.T @ h - np.eye(d))) <= 1e-8),
    }
