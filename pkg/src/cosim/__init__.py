"""Explicit co-simulation of coupled linear ODEs with hold extrapolation and balance correction."""
from .model import (ConfigurationError, HRule, OutputPort, Partition, SchemeConfig, SolverSpec,
                    Subsystem, SystemSpec, build_rhs, energy, validate_wiring)
from .ode_core import IntegrationError, MicroTrajectory, StepControl, integrate
from .orchestrator import CosimFailure, CosimRun, ExchangeGrid, run_cosim
from .oracles import expm_solution, oscillator_solution

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "CosimFailure", "CosimRun", "ExchangeGrid", "HRule", "IntegrationError",
    "MicroTrajectory", "OutputPort", "Partition", "SchemeConfig", "SolverSpec", "StepControl",
    "Subsystem", "SystemSpec", "build_rhs", "energy", "expm_solution", "integrate",
    "oscillator_solution", "run_cosim", "validate_wiring",
]
