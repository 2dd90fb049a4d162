"""Certify diverse influence for gradient clouds, step by step.

Walkthrough:
  1. the canonical diamond (coordinate axes) certifies exactly: its hull IS
     the unit L1 ball, the inscribed disc is tangent to every facet, and the
     polar box's extreme vertices are exactly the sign patterns;
  2. gradients confined to the positive orthant fail condition 1 with a
     negative margin (the inscribed disc pokes out of their hull);
  3. a synthetic scattered matrix from the dataset generator certifies, and
     the determinant bound holds along the way.
"""

import numpy as np

from dica.geometry import WeightedL1Ball, certify_sdi, check_det_bound
from dica.mixtures import gen_sdi_matrix
from dica.numerics import make_rng


def show(tag, cert):
    print(f"{tag}:")
    print(f"  satisfied          {cert.satisfied}")
    print(f"  condition-1 margin {cert.condition1_margin:+.4e}")
    print(f"  condition-2 ok     {cert.condition2_ok} "
          f"(max vertex norm {cert.condition2_max_vertex_norm:.4f})")


def main():
    ball = WeightedL1Ball(np.ones(2))

    diamond = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    show("canonical diamond", certify_sdi(diamond, ball))

    orthant = np.array([[0.5, 0.1], [0.1, 0.5], [0.2, 0.2], [0.45, 0.3]])
    show("positive-orthant cloud", certify_sdi(orthant, ball))

    w = np.array([1.0, 2.0, 0.5])
    scattered = gen_sdi_matrix(make_rng(3), d=3, m=30, w=w)
    show("generated 30x3 scattered matrix", certify_sdi(scattered, WeightedL1Ball(w)))

    # determinant bound: matrices bounded on sign vectors have |det| <= 1
    rng = make_rng(4)
    h = rng.standard_normal((3, 3))
    signs = np.array(
        [[a, b, c] for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)],
        dtype=np.float64,
    )
    h *= np.sqrt(3) / np.max(np.linalg.norm(signs @ h, axis=1))
    out = check_det_bound(h)
    print(f"determinant bound on a rescaled random 3x3: holds={out['bound_holds']}, "
          f"|det|={abs(np.linalg.det(h)):.4f}")


if __name__ == "__main__":
    main()
