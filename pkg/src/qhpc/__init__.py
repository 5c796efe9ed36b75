"""Simulated quantum-HPC middleware: workflows, scheduling, pilots and a statevector simulator."""

__version__ = "0.1.0"
