"""POU mixtures of MOR-Physics neural operators."""

from .errors import (ConfigError, ConvergenceError, FieldFormatError, InstabilityError, NonFiniteError,
                     NumericalError, NyquistError, PouMorError, ShapeError, TapeError, ValidationError)
from .spectral import Field, GridSpec
from .extension import DomainMask, solve_smooth_extension
from .experts import MorExpert, MorLayer, ZeroExpert
from .gating import DomainGates, FixedGates, GatingNetwork
from .model import KnownSolver, POUModel, ProbabilisticField, build_model
from .training import VariationalParams, fit
from .config import Config, load_config

__version__ = "0.1.0"
