from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, MutableSequence, Optional, Sequence, Tuple

import numpy as np

from .._rng import derive_key
from ..qasm import Circuit, Instruction
from . import kernels

_S = 1.0 / math.sqrt(2.0)
_FIXED = {
    "h": (_S, _S, _S, -_S),
    "x": (0.0, 1.0, 1.0, 0.0),
    "y": (0.0, -1j, 1j, 0.0),
    "z": (1.0, 0.0, 0.0, -1.0),
}
NORM_TOL = 1e-9
DEGENERATE_NORM = 1e-12


class NumericalDegeneracyError(RuntimeError):
    """Raised when a measurement selects a branch of (numerically) zero weight."""


def gate_matrix(gate: str, params: Sequence[float] = ()) -> Tuple[complex, complex, complex, complex]:
    if gate in _FIXED:
        return _FIXED[gate]
    t = params[0] / 2.0
    c, s = math.cos(t), math.sin(t)
    if gate == "rx":
        return (c, -1j * s, -1j * s, c)
    if gate == "ry":
        return (c, -s, s, c)
    if gate == "rz":
        return (complex(c, -s), 0.0, 0.0, complex(c, s))
    raise ValueError(f"no single-qubit matrix for {gate!r}")


class StateVector:
    """``2**n`` complex amplitudes; index bit ``q`` is qubit ``q``."""

    __slots__ = ("n", "amplitudes")

    def __init__(self, n: int, amplitudes: Optional[np.ndarray] = None):
        self.n = n
        if amplitudes is None:
            amplitudes = np.zeros(1 << n, dtype=np.complex128)
            amplitudes[0] = 1.0
        self.amplitudes = np.ascontiguousarray(amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << n,):
            raise ValueError("amplitude vector has the wrong length")

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        return cls(n)

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        a = self.amplitudes
        return a.real**2 + a.imag**2


@dataclass(frozen=True)
class Observable:
    """Weighted sum of Pauli strings; character ``j`` acts on qubit ``j``."""

    terms: Tuple[Tuple[float, str], ...]

    def __post_init__(self) -> None:
        terms = tuple((float(c), str(p).upper()) for c, p in self.terms)
        if not terms:
            raise ValueError("observable needs at least one term")
        n = len(terms[0][1])
        for _, p in terms:
            if len(p) != n or n == 0:
                raise ValueError("all Pauli strings must have the same non-zero length")
            if set(p) - set("IXYZ"):
                raise ValueError(f"invalid Pauli string {p!r}")
        object.__setattr__(self, "terms", terms)

    @property
    def num_qubits(self) -> int:
        return len(self.terms[0][1])


@dataclass
class ShotResult:
    counts: Dict[str, int]
    shots: int

    def frequency(self, key: str) -> float:
        return self.counts.get(key, 0) / self.shots


# ------------------------------------------------------------------- applying


def _register_value(clbits: Sequence[int]) -> int:
    return sum(int(b) << j for j, b in enumerate(clbits))


def apply(state: StateVector, inst: Instruction, clbits: MutableSequence[int], rng) -> Tuple[StateVector, MutableSequence[int]]:
    """Apply one instruction in place.

    ``rng`` only needs a ``random()`` method returning a float in [0, 1);
    measurement yields 1 when the draw falls below the probability of 1.
    """
    K = kernels.K
    if inst.condition is not None and _register_value(clbits) != inst.condition:
        return state, clbits
    if inst.kind == "barrier":
        return state, clbits
    amps = state.amplitudes
    if inst.kind == "measure":
        q = inst.qubits[0]
        p1 = K.prob_one(amps, q)
        outcome = 1 if rng.random() < p1 else 0
        p = p1 if outcome else 1.0 - p1
        norm = math.sqrt(max(p, 0.0))
        if norm < DEGENERATE_NORM:
            raise NumericalDegeneracyError(
                f"measurement of qubit {q} selected outcome {outcome} with norm {norm:.3g}"
            )
        K.collapse(amps, q, outcome, 1.0 / norm)
        clbits[inst.clbit] = outcome
        return state, clbits
    if inst.gate == "cx":
        K.apply_cx(amps, inst.qubits[0], inst.qubits[1])
    else:
        m = gate_matrix(inst.gate, inst.params)
        K.apply_1q(amps, inst.qubits[0], complex(m[0]), complex(m[1]), complex(m[2]), complex(m[3]))
    return state, clbits


def final_state(c: Circuit) -> StateVector:
    """Statevector after all gates, for measurement-free circuits."""
    if c.has_measurements:
        raise ValueError("exact-mode evaluation requires a measurement-free circuit")
    state = StateVector.zero(c.num_qubits)
    clbits = [0] * c.num_clbits
    for inst in c.instructions:
        apply(state, inst, clbits, None)
    return state


# ---------------------------------------------------------------------- shots


class _Draws:
    __slots__ = ("row", "i")

    def __init__(self, row: np.ndarray):
        self.row = row
        self.i = 0

    def random(self) -> float:
        u = self.row[self.i]
        self.i += 1
        return float(u)


def _terminal_measurements(c: Circuit) -> Optional[List[Instruction]]:
    """Measures in program order if none is followed by a gate on its qubit
    and nothing is conditioned; otherwise ``None``."""
    measured: set[int] = set()
    out: List[Instruction] = []
    for inst in c.instructions:
        if inst.condition is not None:
            return None
        if inst.kind == "measure":
            measured.add(inst.qubits[0])
            out.append(inst)
        elif inst.kind == "gate" and measured.intersection(inst.qubits):
            return None
    return out


def _bitstring(bits: Sequence[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


def run(c: Circuit, shots: int, seed: int) -> ShotResult:
    """Execute ``c`` ``shots`` times from ``|0...0>``.

    Shot ``s`` draws its uniforms from a counter-based stream keyed by
    ``(seed, s)``, so results do not depend on evaluation order. Circuits whose
    measurements are all terminal are simulated once and sampled.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    K = kernels.K
    key = derive_key(seed, "shots")
    measures = [i for i in c.instructions if i.kind == "measure"]
    draws = K.uniforms(np.uint64(key), shots, max(len(measures), 1))
    counts: Dict[str, int] = {}
    terminal = _terminal_measurements(c)
    if terminal is not None:
        state = StateVector.zero(c.num_qubits)
        for inst in c.instructions:
            if inst.kind == "gate":
                apply(state, inst, [], None)
        if terminal:
            qubits = np.array([m.qubits[0] for m in terminal], dtype=np.int64)
            outcomes = K.sample_terminal(state.probabilities(), qubits, draws[:, : len(terminal)])
            # later measures into the same clbit overwrite earlier ones
            last_col = {m.clbit: col for col, m in enumerate(terminal)}
            cols = [last_col.get(j) for j in range(c.num_clbits)]
            codes = np.zeros(shots, dtype=object if c.num_clbits > 62 else np.int64)
            for j, col in enumerate(cols):
                if col is not None:
                    codes += outcomes[:, col].astype(codes.dtype) << j
            uniq, freq = np.unique(codes, return_counts=True)
            for code, f in zip(uniq, freq):
                counts[_bitstring([(int(code) >> j) & 1 for j in range(c.num_clbits)])] = int(f)
        else:
            counts[_bitstring([0] * c.num_clbits)] = shots
        return ShotResult(dict(sorted(counts.items())), shots)
    return _run_each(c, draws)


def run_per_shot(c: Circuit, shots: int, seed: int) -> ShotResult:
    """Reference path: simulates every shot instruction by instruction."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    measures = sum(1 for i in c.instructions if i.kind == "measure")
    return _run_each(c, kernels.K.uniforms(np.uint64(derive_key(seed, "shots")), shots, max(measures, 1)))


def _run_each(c: Circuit, draws: np.ndarray) -> ShotResult:
    counts: Dict[str, int] = {}
    for row in draws:
        state = StateVector.zero(c.num_qubits)
        clbits = [0] * c.num_clbits
        rng = _Draws(row)
        for inst in c.instructions:
            apply(state, inst, clbits, rng)
        k = _bitstring(clbits)
        counts[k] = counts.get(k, 0) + 1
    return ShotResult(dict(sorted(counts.items())), draws.shape[0])


# --------------------------------------------------------------- expectation


def _check_width(c: Circuit, obs: Observable) -> None:
    if obs.num_qubits != c.num_qubits:
        raise ValueError(f"observable acts on {obs.num_qubits} qubits, circuit has {c.num_qubits}")


def pauli_expectation(state: StateVector, pauli: str) -> complex:
    """<psi|P|psi> by applying P gate-wise to a copy."""
    K = kernels.K
    phi = state.amplitudes.copy()
    for q, p in enumerate(pauli):
        if p != "I":
            m = _FIXED[p.lower()]
            K.apply_1q(phi, q, complex(m[0]), complex(m[1]), complex(m[2]), complex(m[3]))
    return complex(np.vdot(state.amplitudes, phi))


def expectation(c: Circuit, obs: Observable) -> float:
    _check_width(c, obs)
    state = final_state(c)
    total = 0j
    for coeff, pauli in obs.terms:
        total += coeff * pauli_expectation(state, pauli)
    if abs(total.imag) > 1e-9:
        raise NumericalDegeneracyError(f"expectation has imaginary residue {total.imag:.3g}")
    return total.real


def measurement_circuit(c: Circuit, pauli: str) -> Circuit:
    """``c`` followed by the basis change for ``pauli`` and a measurement of
    every qubit into fresh clbits appended after ``c``'s own."""
    base = c.num_clbits
    extra: List[Instruction] = []
    for q, p in enumerate(pauli):
        if p == "X":
            extra.append(Instruction("gate", (q,), gate="h"))
        elif p == "Y":
            extra.append(Instruction("gate", (q,), gate="rz", params=(-math.pi / 2,)))
            extra.append(Instruction("gate", (q,), gate="h"))
    for q in range(c.num_qubits):
        extra.append(Instruction("measure", (q,), clbit=base + q))
    return c.with_instructions(c.instructions + tuple(extra), num_clbits=base + c.num_qubits)


def sample_expectation(c: Circuit, obs: Observable, shots: int, seed: int) -> float:
    _check_width(c, obs)
    base = c.num_clbits
    total = 0.0
    for k, (coeff, pauli) in enumerate(obs.terms):
        support = [q for q, p in enumerate(pauli) if p != "I"]
        if not support:
            total += coeff
            continue
        res = run(measurement_circuit(c, pauli), shots, derive_key(seed, "term", k))
        acc = 0
        for bits, n in res.counts.items():
            parity = sum(bits[base + q] == "1" for q in support) & 1
            acc += -n if parity else n
        total += coeff * acc / shots
    return total
