"""Discrete-round mining simulation."""

from .config import (ConfigInvalid, MinerPopulation, NetworkMode, ProbabilityOutOfRange,
                     SimConfig, TxArrival, attempt_mine)
from .engine import ScenarioResult, Simulation, SimulationFault, run, step_round
from .observer import (BlockSeen, ExternalitySignal, ExternalObserver, Flag, OfferSeen,
                       RevealSeen, observer_update)
from .view import View

__all__ = [
    "ConfigInvalid", "MinerPopulation", "NetworkMode", "ProbabilityOutOfRange", "SimConfig",
    "TxArrival", "attempt_mine", "ScenarioResult", "Simulation", "SimulationFault", "run",
    "step_round", "BlockSeen", "ExternalitySignal", "ExternalObserver", "Flag", "OfferSeen",
    "RevealSeen", "observer_update", "View",
]
