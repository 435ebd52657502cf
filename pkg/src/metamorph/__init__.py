"""Time-discrete geodesic shooting and interpolation for images.

The package extrapolates image sequences in a metamorphosis-type model:
a variational matching energy couples B-spline deformations with
intensity change, and the discrete exponential map advances an initial
image pair step by step via a fixed-point solver for the Euler-Lagrange
equations, a closed-form image update, and approximate deformation
inversion.
"""

from .energy import EnergyBreakdown, EnergyParams, matching_energy, \
    matching_energy_grad, path_energy
from .errors import (ConfigError, DegenerateDeformationError, DimensionError,
                     DomainError, FormatError, InversionError, MetamorphError,
                     NonConvergenceError, SingularMatrixError, SolverError)
from .filtering import FilterParams, anisotropic_smooth, tau_schedule
from .grids import (Deformation, GridSpec, Image, JetEvaluation,
                    QuadratureRule, build_quadrature, eval_deformation,
                    eval_image, eval_image_grad, eval_spline_jet,
                    prolong_deformation, prolong_image, restrict_image)
from .imageio import (load_deformation, load_image, save_deformation,
                      save_image)
from .interpolation import InterpolationConfig, InterpolationResult, interpolate
from .registration import RegistrationConfig, RegistrationResult, register
from .shooting import (ShootingConfig, ShootingResult, StepDiagnostics,
                       apply_T_tilde, assemble_R, exp2, exp_k,
                       fixed_point_solve, image_update, invert_deformation)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
