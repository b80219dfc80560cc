"""Exception types raised across the package."""


class SPDEGirsanovError(Exception):
    """Base class for all package errors."""


class DimensionError(SPDEGirsanovError, ValueError):
    """Mode vectors or operators disagree on the truncation dimension."""


class GridError(SPDEGirsanovError, ValueError):
    """A time grid is empty, non-monotone, or incompatible with a run."""


class IntensityRangeError(SPDEGirsanovError, ValueError):
    """A thinning probability left the admissible band (0, 1]."""


class ScenarioError(SPDEGirsanovError, ValueError):
    """A scenario violates an admissibility condition."""


class SingularDiffusionError(SPDEGirsanovError, ValueError):
    """The diffusion operator is singular or too ill-conditioned to invert."""


class SimulationError(SPDEGirsanovError, RuntimeError):
    """A path produced a non-finite state or a coefficient failed."""

    def __init__(self, message, time=None, path_index=None, seed=None):
        super().__init__(message)
        self.time = time
        self.path_index = path_index
        self.seed = seed


class PicardDivergenceError(SimulationError):
    """Successive Picard iterates kept moving apart."""


class ConfigError(SPDEGirsanovError, ValueError):
    """A configuration file is malformed or inconsistent."""
