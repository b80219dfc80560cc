"""Spectral Galerkin simulation of semilinear SPDEs with jumps, and numerical
checks of when their Girsanov density is path-independent."""

__version__ = "0.1.0"

from .coefficients import (AssumptionProfile, CoefficientSet, check_exponential_moment_condition,
                           derive_drift_from_potential, derive_intensity_from_potential,
                           effective_drift)
from .errors import (ConfigError, DimensionError, GridError, IntensityRangeError,
                     PicardDivergenceError, ScenarioError, SimulationError, SingularDiffusionError,
                     SPDEGirsanovError)
from .girsanov import (GirsanovLog, MeasureChangeReport, ResidualSeries, accumulate_girsanov_log,
                       compensator_change_check, ide_residual, ito_residual, martingale_check,
                       path_independence_residual, pure_jump_girsanov_log, pure_jump_ide_residual)
from .integrator import (PathBatch, PathRecord, SimulationConfig, galerkin_convergence_table,
                         picard_reference_path, simulate_batch, simulate_ensemble, simulate_path)
from .noise import (IntensityFunction, MarkSpace, NoiseRealization, RngStream, refine_noise,
                    sample_noise, uniform_grid)
from .potentials import (AffinePotential, ConstantPotential, ModeExponentialPotential,
                         QuadraticPotential, ShiftedPotential)
from .spectral import Pairing, SpectralBasis, inner, norm_sq, project, semigroup_apply

__all__ = [name for name in dir() if not name.startswith("_")]
