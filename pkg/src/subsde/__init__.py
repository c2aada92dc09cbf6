"""Simulation and verification tools for SDEs driven by subordinated Brownian motion.

The clock ``S`` is a subordinator; the noise is ``L = W_S``.  Paths of
``dX = b(X) dt + A dL`` are integrated together with their Jacobian flows,
from which Malliavin covariance matrices, bracket rank conditions and weak
Fokker-Planck residuals are computed and compared with closed-form oracles.
"""
from .batch import BatchResult, simulate_batch
from .flow import (
    SdeModel,
    TrajectoryBundle,
    hamiltonian_model,
    integrate,
    ito_product_residual,
    kinetic_linear,
    linear,
    pendulum,
    zero_drift,
)
from .hormander import (
    BracketHierarchy,
    bracket_hierarchy,
    check_Hn,
    kalman_rank,
    uniform_h1_constant,
    uniform_hn_constant,
)
from .malliavin import (
    MalliavinCovariance,
    SmallBallProfile,
    covariance,
    directional_energy,
    small_ball_profile,
)
from .noise import DrivingNoisePath, refine, synthesize_noise, verify_decomposition
from .oracles import (
    OuSystem,
    levy_quadrature,
    ou_char_function,
    smoothness_moment_integral,
    stable_calibration,
)
from .stats import (
    SampleEnsemble,
    empirical_cf,
    fokker_planck_residual,
    generator_apply,
    kde_density,
)
from .subordinator import (
    DEFAULT_EPS,
    SubordinatorPath,
    SubordinatorSpec,
    big_jump_rate,
    check_con2,
    make_custom_spec,
    make_stable_spec,
    phi,
    sample_big_jump_displacement,
    sample_path,
    truncated_first_moment,
)
from .testfunctions import TestFunction, cosine_wave, gaussian_bump

__version__ = "0.1.0"
