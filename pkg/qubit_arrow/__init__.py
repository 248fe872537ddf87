"""Quantum-trajectory simulation of a continuously monitored qubit and its arrow of time."""

__version__ = "0.1.0"
