"""Nested finite element approximation of semilinear stochastic parabolic
equations driven by Whittle-Matern noise, with coupled multilevel error studies."""
from ._accel import backend, set_backend, set_threads, use_backend
from .assembly import CoefficientField, assemble_form, assemble_mass, laplacian
from .config import ExperimentConfig, load_config
from .errors import (AssemblyError, ConfigError, ConvergenceError, FactorizationError,
                     MeshError, NestedSPDEError, SolverError, UnsupportedError)
from .fractional import (FractionalOperator, SincQuadrature, apply_fractional_inverse,
                         default_resolution, fractional_dense_oracle, quadrature_nodes)
from .harness import (ErrorReport, fit_rate, pathwise_error, strong_error_study,
                      time_rate_study)
from .mesh import Mesh, build_rectangle, build_unit_square, prolongation, refine
from .noise import NoiseStream, restrict_increment, sample_increment
from .oracle import eigenpairs_unit_square, expected_squared_norm, oracle_value
from .sparse import cholesky, factorize, mass_sqrt, solve_shifted, solve_spd
from .stepper import (Ensemble, ModelSpec, heat_model, precompute, run_trajectory, scheme,
                      step)

__version__ = "0.1.0"
