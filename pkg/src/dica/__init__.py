"""Diverse-influence component analysis.

Identifies latent components from unknown nonlinear mixtures by training a
small autoencoder whose decoder Jacobian volume (log det J^T J) is pushed up
under a Jacobian norm budget, together with synthetic mixture generators,
convex-geometry certification of the diverse-influence condition, baseline
criteria, and an identifiability scoring harness.
"""

from .evaluation import EvalReport, hungarian, krr_fit_predict, pearson, score
from .geometry import (
    Ellipsoid,
    HPolytope,
    SdiCertificate,
    WeightedL1Ball,
    certify_sdi,
    check_det_bound,
    ellipsoid_in_polytope,
    hull_facets,
    mvie_weighted_l1,
    polar_weighted_l1,
    vertex_enumerate,
)
from .mixtures import Dataset, MixtureSpec, generate, load_dataset, save_dataset
from .models import (
    MlpParams,
    decoder_jacobian,
    loss_gradients,
    loss_terms,
    mlp_forward,
    trace_vol,
)
from .numerics import (
    cholesky,
    finite_diff_grad,
    logdet_gram,
    make_rng,
    sample_gaussian_vec,
    sample_wishart,
)
from .trainer import TrainConfig, TrainState, he_init, lambda_vol_schedule, train

__version__ = "0.1.0"
