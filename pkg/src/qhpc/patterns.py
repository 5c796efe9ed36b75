"""Reference workloads: VQE driver, warm start, and the three integration patterns.

The VQE loop is written as a generator (:func:`vqe_program`) that yields
batches of :class:`EvalRequest` and receives their energies. The same program
runs standalone through :func:`vqe_driver` or inside the runtime, where each
request becomes a quantum task; both see identical energies because every
sampled evaluation is seeded by ``(cfg.seed, request index)``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Generator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._rng import derive_key
from .qasm import Circuit, Instruction, ROTATION_GATES, emit_qasm, parse_qasm
from .qsim import Observable, expectation, sample_expectation
from .workflow import (
    Edge,
    ExecutableTask,
    Expansion,
    TaskSpec,
    WorkflowError,
    WorkflowSpec,
    validate_spec,
)

SHIFT = math.pi / 2

# ------------------------------------------------------------------ ansatz


@dataclass(frozen=True)
class AnsatzTemplate:
    """A circuit whose rotation angles at ``slots[j]`` are parameter ``j``."""

    skeleton: Circuit
    slots: Tuple[int, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        if len(set(self.slots)) != len(self.slots):
            raise ValueError("each slot must be a distinct instruction")
        for idx in self.slots:
            inst = self.skeleton.instructions[idx]
            if inst.kind != "gate" or inst.gate not in ROTATION_GATES:
                raise ValueError(f"slot {idx} is not a rotation gate")
        if self.skeleton.has_measurements:
            raise ValueError("ansatz must be measurement-free")

    @property
    def num_params(self) -> int:
        return len(self.slots)

    @property
    def num_qubits(self) -> int:
        return self.skeleton.num_qubits

    def instantiate(self, theta: Sequence[float]) -> Circuit:
        if len(theta) != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {len(theta)}")
        insts = list(self.skeleton.instructions)
        for j, idx in enumerate(self.slots):
            old = insts[idx]
            insts[idx] = Instruction("gate", old.qubits, gate=old.gate, params=(float(theta[j]),))
        return self.skeleton.with_instructions(insts)

    @classmethod
    def from_qasm(cls, text: str, name: str = "custom") -> "AnsatzTemplate":
        c = parse_qasm(text, name=name)
        slots = tuple(i for i, inst in enumerate(c.instructions) if inst.kind == "gate" and inst.gate in ROTATION_GATES)
        return cls(c, slots, name)

    def to_param(self) -> Any:
        if self.name in ANSATZ_BUILDERS and ANSATZ_BUILDERS[self.name](self.num_qubits) == self:
            return self.name
        return {"qasm": emit_qasm(self.skeleton)}


def ry_layer(n: int) -> AnsatzTemplate:
    insts = tuple(Instruction("gate", (q,), gate="ry", params=(0.0,)) for q in range(n))
    return AnsatzTemplate(Circuit(n, 0, insts, name="ry_layer"), tuple(range(n)), "ry_layer")


def ry_cx(n: int) -> AnsatzTemplate:
    """ry on every qubit, then a cx ladder 0->1->...->n-1."""
    insts = [Instruction("gate", (q,), gate="ry", params=(0.0,)) for q in range(n)]
    insts += [Instruction("gate", (q, q + 1), gate="cx") for q in range(n - 1)]
    return AnsatzTemplate(Circuit(n, 0, tuple(insts), name="ry_cx"), tuple(range(n)), "ry_cx")


ANSATZ_BUILDERS: Dict[str, Callable[[int], AnsatzTemplate]] = {"ry_layer": ry_layer, "ry_cx": ry_cx}

# ------------------------------------------------------------- hamiltonian


def parse_hamiltonian(text: str) -> Observable:
    """``<coefficient> <pauli-string>`` per line; ``#`` starts a comment."""
    terms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<coefficient> <pauli-string>', got {raw.strip()!r}")
        try:
            coeff = float(parts[0])
        except ValueError:
            raise ValueError(f"line {lineno}: bad coefficient {parts[0]!r}") from None
        if not math.isfinite(coeff):
            raise ValueError(f"line {lineno}: coefficient must be finite")
        terms.append((coeff, parts[1]))
    if not terms:
        raise ValueError("hamiltonian has no terms")
    try:
        return Observable(tuple(terms))
    except ValueError as e:
        raise ValueError(f"hamiltonian: {e}") from None


def load_hamiltonian(path: str) -> Observable:
    with open(path, encoding="utf-8") as fh:
        return parse_hamiltonian(fh.read())


def format_hamiltonian(h: Observable) -> str:
    return "".join(f"{c!r} {p}\n" for c, p in h.terms)


# ------------------------------------------------------------------- VQE


@dataclass(frozen=True)
class VqeConfig:
    hamiltonian: Observable
    ansatz: AnsatzTemplate
    initial_params: Tuple[float, ...]
    learning_rate: float = 0.1
    tol: float = 1e-6
    max_iters: int = 200
    mode: str = "exact"  # exact | sampled
    shots: int = 1000
    seed: int = 0
    # sampled estimates sit on a 1/shots grid, so consecutive values can tie
    # by chance; sampled runs need this many consecutive small steps
    sampled_patience: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial_params", tuple(float(x) for x in self.initial_params))
        if self.hamiltonian.num_qubits != self.ansatz.num_qubits:
            raise ValueError("hamiltonian and ansatz act on different qubit counts")
        if len(self.initial_params) != self.ansatz.num_params:
            raise ValueError(f"initial_params needs {self.ansatz.num_params} values")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.sampled_patience < 1:
            raise ValueError("sampled_patience must be >= 1")

    @property
    def effective_tol(self) -> float:
        # shot noise never lets |dE| settle below the exact tolerance
        return self.tol * 10 if self.mode == "sampled" else self.tol

    @property
    def patience(self) -> int:
        return self.sampled_patience if self.mode == "sampled" else 1


@dataclass
class VqeResult:
    energy_trace: List[float]
    final_params: Tuple[float, ...]
    final_energy: float
    iterations_used: int
    circuit_evaluations: int
    converged: bool = False
    failed: bool = False
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "final_energy": self.final_energy,
            "final_params": list(self.final_params),
            "iterations_used": self.iterations_used,
            "circuit_evaluations": self.circuit_evaluations,
            "converged": self.converged,
            "failed": self.failed,
            "energy_trace": list(self.energy_trace),
        }


@dataclass(frozen=True)
class EvalRequest:
    index: int
    params: Tuple[float, ...]


def evaluate(cfg: VqeConfig, req: EvalRequest) -> float:
    circuit = cfg.ansatz.instantiate(req.params)
    if cfg.mode == "exact":
        return expectation(circuit, cfg.hamiltonian)
    return sample_expectation(circuit, cfg.hamiltonian, cfg.shots, derive_key(cfg.seed, req.index))


def vqe_program(cfg: VqeConfig) -> Generator[List[EvalRequest], List[float], VqeResult]:
    """Gradient descent with parameter-shift gradients.

    Per iteration: one batch of 2p shifted evaluations, an update, then one
    energy evaluation at the new point.
    """
    counter = 0

    def request(theta: np.ndarray) -> EvalRequest:
        nonlocal counter
        r = EvalRequest(counter, tuple(float(x) for x in theta))
        counter += 1
        return r

    theta = np.array(cfg.initial_params, dtype=float)
    p = len(theta)
    energies = yield [request(theta)]
    trace = [float(energies[0])]
    converged = False
    it = 0
    calm = 0
    while it < cfg.max_iters:
        batch = []
        for j in range(p):
            e = np.zeros(p)
            e[j] = SHIFT
            batch += [request(theta + e), request(theta - e)]
        shifted = yield batch
        grad = np.array([(shifted[2 * j] - shifted[2 * j + 1]) / 2.0 for j in range(p)])
        theta = theta - cfg.learning_rate * grad
        energies = yield [request(theta)]
        trace.append(float(energies[0]))
        it += 1
        calm = calm + 1 if abs(trace[-1] - trace[-2]) < cfg.effective_tol else 0
        if calm >= cfg.patience:
            converged = True
            break
    return VqeResult(trace, tuple(float(x) for x in theta), trace[-1], it, counter, converged)


class EvaluationFailed(RuntimeError):
    pass


def vqe_driver(cfg: VqeConfig, submit: Optional[Callable[[List[EvalRequest]], List[float]]] = None) -> VqeResult:
    """Run :func:`vqe_program`; ``submit`` maps a batch to energies (default:
    evaluate locally). A submit that raises yields a result flagged failed."""
    if submit is None:
        submit = lambda batch: [evaluate(cfg, r) for r in batch]  # noqa: E731
    prog = vqe_program(cfg)
    batch = next(prog)
    done = 0
    try:
        while True:
            energies = submit(batch)
            done += len(batch)
            batch = prog.send(list(energies))
    except StopIteration as stop:
        return stop.value
    except Exception as e:  # task failures surface here after retries are exhausted
        return VqeResult([], cfg.initial_params, float("nan"), 0, done, failed=True, error=str(e))


def parameter_shift_gradient(cfg: VqeConfig, theta: Sequence[float]) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros(len(theta))
    for j in range(len(theta)):
        e = np.zeros(len(theta))
        e[j] = SHIFT
        plus = evaluate(cfg, EvalRequest(2 * j, tuple(theta + e)))
        minus = evaluate(cfg, EvalRequest(2 * j + 1, tuple(theta - e)))
        grad[j] = (plus - minus) / 2.0
    return grad


def warm_start(hamiltonian: Observable) -> Tuple[float, ...]:
    """Greedy product-state guess from the Z-only terms; ``theta_j = pi * b_j``.

    Qubits are decided in index order. A term counts only once all its qubits
    are decided; ties keep bit 0.
    """
    n = hamiltonian.num_qubits
    zterms = [(c, p) for c, p in hamiltonian.terms if set(p) <= {"I", "Z"} and "Z" in p]
    if not zterms:
        return tuple(0.0 for _ in range(n))
    bits: List[int] = []

    def energy(prefix: List[int]) -> float:
        total = 0.0
        for c, p in zterms:
            support = [q for q, ch in enumerate(p) if ch == "Z"]
            if max(support) >= len(prefix):
                continue
            total += c * (-1) ** sum(prefix[q] for q in support)
        return total

    for _ in range(n):
        e0, e1 = energy(bits + [0]), energy(bits + [1])
        bits.append(1 if e1 < e0 else 0)
    return tuple(math.pi * b for b in bits)


# ----------------------------------------------------- driver configuration

_VQE_KEYS = (
    "hamiltonian", "ansatz", "initial_params", "learning_rate", "tol", "max_iters",
    "mode", "shots", "seed", "step_cost_us", "eval_coupling",
)


def check_vqe_params(params: Mapping[str, Any], where: str) -> None:
    errors = [f"{where}.params.{k}: unknown key" for k in params if k not in _VQE_KEYS]
    ans = params.get("ansatz", "ry_cx")
    if isinstance(ans, str) and ans not in ANSATZ_BUILDERS:
        errors.append(f"{where}.params.ansatz: unknown ansatz {ans!r}")
    elif isinstance(ans, dict) and set(ans) - {"qasm", "qasm_file"}:
        errors.append(f"{where}.params.ansatz: expected 'qasm' or 'qasm_file'")
    if params.get("mode", "exact") not in ("exact", "sampled"):
        errors.append(f"{where}.params.mode: expected 'exact' or 'sampled'")
    if params.get("eval_coupling", "loose") not in ("tight", "medium", "loose"):
        errors.append(f"{where}.params.eval_coupling: expected tight, medium or loose")
    for k in ("learning_rate", "tol", "step_cost_us"):
        v = params.get(k)
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0):
            errors.append(f"{where}.params.{k}: expected a non-negative number")
    for k in ("max_iters", "shots", "seed"):
        v = params.get(k)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
            errors.append(f"{where}.params.{k}: expected a non-negative integer")
    if errors:
        raise WorkflowError(errors)


def _observable(value: Any, base_dir: str) -> Observable:
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(base_dir, value)
        return load_hamiltonian(path)
    return Observable(tuple((float(c), str(p)) for c, p in value))


def vqe_config_from_params(params: Mapping[str, Any], inputs: Mapping[str, Any], base_dir: str = ".",
                           default_seed: int = 0, mode: Optional[str] = None) -> VqeConfig:
    """Build a config from template params plus upstream outputs.

    ``hamiltonian`` and ``initial_params`` may come from an upstream task's
    output (e.g. the preprocessing step) when not given directly.
    """
    upstream = [v for v in inputs.values() if isinstance(v, dict)]
    if "hamiltonian" in params:
        h = _observable(params["hamiltonian"], base_dir)
    else:
        src = next((u for u in upstream if "hamiltonian" in u), None)
        if src is None:
            raise ValueError("no hamiltonian in params or inputs")
        h = _observable(src["hamiltonian"], base_dir)
    n = h.num_qubits
    ans = params.get("ansatz", "ry_cx")
    if isinstance(ans, str):
        ansatz = ANSATZ_BUILDERS[ans](n)
    elif "qasm" in ans:
        ansatz = AnsatzTemplate.from_qasm(ans["qasm"])
    else:
        path = ans["qasm_file"]
        with open(path if os.path.isabs(path) else os.path.join(base_dir, path), encoding="utf-8") as fh:
            ansatz = AnsatzTemplate.from_qasm(fh.read(), name=os.path.basename(path))
    init = params.get("initial_params")
    if init is None:
        src = next((u for u in upstream if "initial_params" in u), None)
        init = src["initial_params"] if src is not None else "zeros"
    if init == "warm":
        init = warm_start(h)
    elif init == "zeros":
        init = [0.0] * ansatz.num_params
    return VqeConfig(
        hamiltonian=h,
        ansatz=ansatz,
        initial_params=tuple(init),
        learning_rate=float(params.get("learning_rate", 0.4 if n == 1 else 0.1)),
        tol=float(params.get("tol", 1e-6)),
        max_iters=int(params.get("max_iters", 200)),
        mode=mode or params.get("mode", "exact"),
        shots=int(params.get("shots", 1000)),
        seed=int(params.get("seed", default_seed)),
    )


def vqe_template(spec: TaskSpec, w: WorkflowSpec) -> Expansion:
    """A VQE composite becomes one long-lived driver task."""
    check_vqe_params(spec.params, f"task {spec.id!r}")
    driver = ExecutableTask(
        f"{spec.id}.driver", "classical", cores=1, compute_cost_us=0.0, action="vqe",
        params=dict(spec.params), needs=spec.needs, driver=True, parent=spec.id,
    )
    return Expansion([driver])


TEMPLATES = {"vqe": vqe_template}


def vqe_params(cfg: VqeConfig, **extra: Any) -> Dict[str, Any]:
    """Template params reproducing ``cfg``."""
    params: Dict[str, Any] = {
        "hamiltonian": [[c, p] for c, p in cfg.hamiltonian.terms],
        "ansatz": cfg.ansatz.to_param(),
        "initial_params": list(cfg.initial_params),
        "learning_rate": cfg.learning_rate,
        "tol": cfg.tol,
        "max_iters": cfg.max_iters,
        "mode": cfg.mode,
        "shots": cfg.shots,
        "seed": cfg.seed,
    }
    params.update(extra)
    return params


# ------------------------------------------------------------ workloads

DYNAMIC_QASM = """OPENQASM 2.0;
include "qelib1.inc";
qreg q[1];
creg c[1];
h q[0];
measure q[0] -> c[0];
if(c==1) x q[0];
measure q[0] -> c[0];
"""


def build_dynamic_workload(shots: int = 1000) -> WorkflowSpec:
    """Mid-circuit measurement with classical correction, tightly coupled to
    the classical task that consumes the outcomes."""
    circuit = parse_qasm(DYNAMIC_QASM, name="circuit")
    tasks = (
        TaskSpec("circuit", "quantum", qpu_qubits_min=1, shots=shots, circuit=circuit, qasm=DYNAMIC_QASM),
        TaskSpec("feedback", "classical", cores=1, compute_cost_us=10.0, action="decode_feedback",
                 needs=("circuit",)),
    )
    spec = WorkflowSpec("dynamic", tasks, (Edge("circuit", "feedback", "tight"),))
    validate_spec(spec)
    return spec


@dataclass(frozen=True)
class ChemistryConfig:
    hamiltonian_path: str = "fixture.ham"
    ansatz: str = "ry_cx"
    warm_start: bool = True
    learning_rate: float = 0.1
    tol: float = 1e-6
    max_iters: int = 200
    mode: str = "exact"
    shots: int = 1000
    seed: int = 0
    report_path: str = "report.json"
    preprocess_cost_us: float = 2000.0
    report_cost_us: float = 500.0


def build_chemistry_workflow(cfg: ChemistryConfig = ChemistryConfig(), base_dir: str = ".") -> WorkflowSpec:
    """Load the Hamiltonian and warm-start, run VQE, write a report."""
    tasks = (
        TaskSpec("pre", "classical", cores=1, compute_cost_us=cfg.preprocess_cost_us, action="load_hamiltonian",
                 params={"path": cfg.hamiltonian_path, "warm_start": cfg.warm_start}),
        TaskSpec("vqe", "composite", template="vqe", needs=("pre",), params={
            "ansatz": cfg.ansatz, "learning_rate": cfg.learning_rate, "tol": cfg.tol,
            "max_iters": cfg.max_iters, "mode": cfg.mode, "shots": cfg.shots, "seed": cfg.seed}),
        TaskSpec("post", "classical", cores=1, compute_cost_us=cfg.report_cost_us, action="write_report",
                 params={"path": cfg.report_path}, needs=("vqe",)),
    )
    edges = (Edge("pre", "vqe", "loose"), Edge("vqe", "post", "loose"))
    spec = WorkflowSpec("chemistry", tasks, edges, base_dir=base_dir)
    validate_spec(spec)
    return spec


def build_hyperparameter_ensemble(base: VqeConfig, learning_rates: Sequence[float],
                                  step_cost_us: int = 100) -> WorkflowSpec:
    """One VQE composite per learning rate plus a reducer picking the minimum."""
    if len(learning_rates) < 2:
        raise ValueError("an ensemble needs at least two learning rates")
    members = [f"m{i}" for i in range(len(learning_rates))]
    tasks = [
        TaskSpec(m, "composite", template="vqe",
                 params=vqe_params(base, learning_rate=float(lr), step_cost_us=step_cost_us))
        for m, lr in zip(members, learning_rates)
    ]
    tasks.append(TaskSpec("select", "classical", cores=1, compute_cost_us=100.0, action="select_min",
                          needs=tuple(members)))
    spec = WorkflowSpec("ensemble", tuple(tasks), tuple(Edge(m, "select", "loose") for m in members))
    validate_spec(spec)
    return spec
