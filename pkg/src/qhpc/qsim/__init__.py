"""Statevector simulator with mid-circuit measurement and classical conditioning."""
from .kernels import BACKEND
from .simulator import (
    NumericalDegeneracyError,
    Observable,
    ShotResult,
    StateVector,
    apply,
    expectation,
    final_state,
    measurement_circuit,
    run,
    run_per_shot,
    sample_expectation,
)

__all__ = [
    "BACKEND",
    "NumericalDegeneracyError",
    "Observable",
    "ShotResult",
    "StateVector",
    "apply",
    "expectation",
    "final_state",
    "measurement_circuit",
    "run",
    "run_per_shot",
    "sample_expectation",
]
