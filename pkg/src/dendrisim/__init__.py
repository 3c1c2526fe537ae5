"""Behavioral simulator of a multi-compartment accelerated analog neuron chip."""

from .chip import (AnalogParams, Block, ChipConfig, CircuitGraph, CompartmentConfig,
                   CompartmentId, Line, Mode, SynapseCell, SynapseRow, default_params,
                   derive_network, validate_config)
from .engine import (CurrentPulse, EngineConfig, NumericalOverflow, SimResult, Simulation,
                     membrane_currents, solve_soma_lines)
from .router import BusModel, PresynEvent, RoutingTable, SpikeRecord, Target, deliver, route_spike

__version__ = "0.1.0"

__all__ = [
    "AnalogParams", "Block", "BusModel", "ChipConfig", "CircuitGraph", "CompartmentConfig",
    "CompartmentId", "CurrentPulse", "EngineConfig", "Line", "Mode", "NumericalOverflow",
    "PresynEvent", "RoutingTable", "SimResult", "Simulation", "SpikeRecord", "SynapseCell",
    "SynapseRow", "Target", "default_params", "deliver", "derive_network", "membrane_currents",
    "route_spike", "solve_soma_lines", "validate_config",
]
