"""Offline throughput maximization for energy-harvesting two-hop relay networks."""

from .model import (
    ALL_MODES, SR_MODES, ChannelGains, EnergyProfile, Mode, Scenario, ScenarioError,
    SingleRelayPolicy, TwoRelayPolicy, parse_mode_set, single_relay_scenario,
    two_relay_scenario, validate_scenario,
)
from .solver import Solution, recover_powers, solve, solve_single_relay, solve_two_relay

__version__ = "0.1.0"

__all__ = [
    "ALL_MODES", "SR_MODES", "ChannelGains", "EnergyProfile", "Mode", "Scenario",
    "ScenarioError", "SingleRelayPolicy", "TwoRelayPolicy", "parse_mode_set",
    "single_relay_scenario", "two_relay_scenario", "validate_scenario", "Solution",
    "recover_powers", "solve", "solve_single_relay", "solve_two_relay",
]
