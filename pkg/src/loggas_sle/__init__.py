"""Stochastic log-gas drivers, multiple Loewner chains and GFF coupling checks."""

from .loggas import GasPath, GasState, Support, simulate_gas

__all__ = [
    "GasPath",
    "GasState",
    "Support",
    "simulate_gas",
]
