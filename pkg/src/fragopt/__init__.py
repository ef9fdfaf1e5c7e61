"""Mean energy of one-step and two-step stochastic fragmentation procedures."""
from .energy import (
    EnergyEstimate,
    FirstDevice,
    TwoStepConfig,
    mean_energy_single,
    mean_energy_two_step,
    mean_energy_two_step_mc,
)
from .errors import ConfigError, FragoptError, NumericalError, ValidationError
from .model import FragmentationModel, model_from_dict, validate
from .optimize import Boundary, minimize_eta
from .renewal import RenewalOptions, psi, renewal_measure

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "ConfigError",
    "EnergyEstimate",
    "FirstDevice",
    "FragmentationModel",
    "FragoptError",
    "NumericalError",
    "RenewalOptions",
    "TwoStepConfig",
    "ValidationError",
    "mean_energy_single",
    "mean_energy_two_step",
    "mean_energy_two_step_mc",
    "minimize_eta",
    "model_from_dict",
    "psi",
    "renewal_measure",
    "validate",
]
