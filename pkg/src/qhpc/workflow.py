"""Workflow layer: declarative hybrid task DAGs compiled into executable workloads.

Workflow files are JSON::

    {"name": "chem",
     "defaults": {"tight_latency_us": 1, "medium_latency_us": 1000},
     "tasks": [
        {"id": "pre", "kind": "classical",
         "requirements": {"cores": 1, "compute_cost_us": 2000},
         "payload": {"action": "load_hamiltonian", "params": {"path": "h2q.ham"}}},
        {"id": "vqe", "kind": "composite", "needs": ["pre"],
         "payload": {"template": "vqe", "params": {"ansatz": "ry_cx"}}},
        {"id": "q", "kind": "quantum", "requirements": {"shots": 1000},
         "payload": {"qasm": "OPENQASM 2.0; qreg q[1]; ..."}}],
     "edges": [{"from": "pre", "to": "vqe", "coupling": "loose"}]}

``needs`` lists tasks whose outputs a task consumes; each must be a direct
predecessor. Relative ``qasm_file`` (and action input) paths resolve against
the workflow file's directory.
"""
from __future__ import annotations

import graphlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .qasm import Circuit, QasmError, parse_qasm

KINDS = ("classical", "quantum", "composite")
COUPLINGS = ("tight", "medium", "loose")
DEFAULT_TIGHT_US = 1.0
DEFAULT_MEDIUM_US = 1000.0
_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


class WorkflowError(ValueError):
    def __init__(self, diagnostics: Sequence[str], cycle: Optional[Sequence[str]] = None):
        self.diagnostics = list(diagnostics)
        self.cycle = list(cycle) if cycle else None
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: str
    cores: int = 1
    gpus: int = 0
    compute_cost_us: float = 0.0
    qpu_qubits_min: int = 0
    shots: int = 0
    circuit: Optional[Circuit] = None
    qasm: Optional[str] = None
    qasm_file: Optional[str] = None
    action: Optional[str] = None
    template: Optional[str] = None
    params: Mapping[str, Any] = field(default_factory=dict)
    needs: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    coupling: str = "loose"


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    tasks: Tuple[TaskSpec, ...]
    edges: Tuple[Edge, ...] = ()
    tight_latency_us: float = DEFAULT_TIGHT_US
    medium_latency_us: float = DEFAULT_MEDIUM_US
    base_dir: str = field(default=".", compare=False)

    def task(self, tid: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def threshold(self, coupling: str) -> Optional[float]:
        return {"tight": self.tight_latency_us, "medium": self.medium_latency_us}.get(coupling)


@dataclass(frozen=True)
class PlacementConstraint:
    members: frozenset
    max_latency_us: float
    coupling: str = "tight"

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(self.members))
        if len(self.members) < 2:
            raise ValueError("a placement constraint needs at least two members")


@dataclass(frozen=True)
class ExecutableTask:
    id: str
    kind: str  # classical | quantum
    cores: int = 1
    gpus: int = 0
    compute_cost_us: float = 0.0
    qpu_qubits_min: int = 0
    shots: int = 0
    circuit: Optional[Circuit] = None
    action: Optional[str] = None
    params: Mapping[str, Any] = field(default_factory=dict)
    needs: Tuple[str, ...] = ()
    driver: bool = False
    parent: Optional[str] = None
    # Pauli strings measured separately; the task's QPU time is the sum over them
    measure_terms: Tuple[str, ...] = ()


@dataclass
class Expansion:
    """What a composite template returns: a sub-DAG with ids prefixed ``<composite>.``."""

    tasks: List[ExecutableTask]
    edges: List[Edge] = field(default_factory=list)
    constraints: List[PlacementConstraint] = field(default_factory=list)

    def sources(self) -> List[str]:
        dsts = {e.dst for e in self.edges}
        return [t.id for t in self.tasks if t.id not in dsts]

    def sinks(self) -> List[str]:
        srcs = {e.src for e in self.edges}
        return [t.id for t in self.tasks if t.id not in srcs]


Template = Callable[[TaskSpec, WorkflowSpec], Expansion]


@dataclass(frozen=True)
class Workload:
    name: str
    tasks: Tuple[ExecutableTask, ...]
    edges: Tuple[Edge, ...]
    constraints: Tuple[PlacementConstraint, ...] = ()
    driver_tasks: frozenset = frozenset()
    aliases: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)
    thresholds: Mapping[str, float] = field(
        default_factory=lambda: {"tight": DEFAULT_TIGHT_US, "medium": DEFAULT_MEDIUM_US})

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {t.id: t for t in self.tasks})

    def task(self, tid: str) -> ExecutableTask:
        return self._by_id[tid]  # type: ignore[attr-defined]

    def predecessors(self, tid: str) -> List[str]:
        return [e.src for e in self.edges if e.dst == tid]

    def successors(self, tid: str) -> List[str]:
        return [e.dst for e in self.edges if e.src == tid]

    def resolve(self, name: str) -> Tuple[str, ...]:
        return tuple(self.aliases.get(name, (name,)))


# ------------------------------------------------------------------ parsing

_TASK_KEYS = ("id", "kind", "requirements", "payload", "needs")
_REQ_KEYS = {
    "classical": ("cores", "gpus", "compute_cost_us"),
    "quantum": ("qpu_qubits_min", "shots"),
    "composite": (),
}
_PAYLOAD_KEYS = {
    "classical": ("action", "params"),
    "quantum": ("qasm", "qasm_file"),
    "composite": ("template", "params"),
}


def _number(value: Any, path: str, errors: List[str], integer: bool = False, minimum: float = 0.0) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}: expected a number, got {value!r}")
        return None
    if integer and not float(value).is_integer():
        errors.append(f"{path}: expected an integer, got {value!r}")
        return None
    if value < minimum:
        errors.append(f"{path}: must be >= {minimum:g}, got {value!r}")
        return None
    return int(value) if integer else float(value)


def _unknown(obj: Mapping, allowed: Iterable[str], path: str, errors: List[str]) -> None:
    for key in obj:
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key")


def _parse_task(obj: Any, i: int, base_dir: str, errors: List[str]) -> Optional[TaskSpec]:
    path = f"tasks[{i}]"
    if not isinstance(obj, dict):
        errors.append(f"{path}: expected an object")
        return None
    _unknown(obj, _TASK_KEYS, path, errors)
    tid = obj.get("id")
    if not isinstance(tid, str) or not _ID_RE.match(tid):
        errors.append(f"{path}.id: expected an identifier (letters, digits, '_' or '-'), got {tid!r}")
        return None
    path = f"task {tid!r}"
    kind = obj.get("kind")
    if kind not in KINDS:
        errors.append(f"{path}: unknown kind {kind!r} (expected one of {', '.join(KINDS)})")
        return None
    req = obj.get("requirements", {})
    payload = obj.get("payload", {})
    if not isinstance(req, dict) or not isinstance(payload, dict):
        errors.append(f"{path}: requirements and payload must be objects")
        return None
    _unknown(req, _REQ_KEYS[kind], f"{path}.requirements", errors)
    _unknown(payload, _PAYLOAD_KEYS[kind], f"{path}.payload", errors)
    needs = obj.get("needs", [])
    if not isinstance(needs, list) or not all(isinstance(n, str) for n in needs):
        errors.append(f"{path}.needs: expected a list of task ids")
        needs = []
    params = payload.get("params", {})
    if not isinstance(params, dict):
        errors.append(f"{path}.payload.params: expected an object")
        params = {}
    before = len(errors)
    if kind == "classical":
        cores = _number(req.get("cores", 1), f"{path}.requirements.cores", errors, integer=True, minimum=1)
        gpus = _number(req.get("gpus", 0), f"{path}.requirements.gpus", errors, integer=True)
        if "compute_cost_us" not in req:
            errors.append(f"{path}.requirements.compute_cost_us: missing")
        cost = _number(req.get("compute_cost_us", 0), f"{path}.requirements.compute_cost_us", errors)
        action = payload.get("action")
        if not isinstance(action, str) or not action:
            errors.append(f"{path}.payload.action: missing")
        if len(errors) > before:
            return None
        return TaskSpec(tid, kind, cores=cores, gpus=gpus, compute_cost_us=cost, action=action,
                        params=params, needs=tuple(needs))
    if kind == "quantum":
        has_inline, has_file = "qasm" in payload, "qasm_file" in payload
        if has_inline == has_file:
            errors.append(f"{path}.payload: exactly one of 'qasm' or 'qasm_file' is required")
            return None
        text = payload.get("qasm")
        qfile = payload.get("qasm_file")
        if has_file:
            full = qfile if os.path.isabs(qfile) else os.path.join(base_dir, qfile)
            try:
                with open(full, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as e:
                errors.append(f"{path}.payload.qasm_file: cannot read {qfile!r}: {e.strerror}")
                return None
        if not isinstance(text, str):
            errors.append(f"{path}.payload.qasm: expected a string")
            return None
        try:
            circuit = parse_qasm(text, name=tid)
        except QasmError as e:
            for d in e.diagnostics:
                errors.append(f"{path}: invalid circuit: line {d.line}, column {d.column}: {d.message}")
            return None
        if "shots" not in req:
            errors.append(f"{path}.requirements.shots: missing")
        shots = _number(req.get("shots", 1), f"{path}.requirements.shots", errors, integer=True, minimum=1)
        qmin = _number(req.get("qpu_qubits_min", circuit.num_qubits), f"{path}.requirements.qpu_qubits_min",
                       errors, integer=True, minimum=1)
        if qmin is not None and qmin < circuit.num_qubits:
            errors.append(f"{path}.requirements.qpu_qubits_min: {qmin} is below the circuit width {circuit.num_qubits}")
        if len(errors) > before:
            return None
        return TaskSpec(tid, kind, qpu_qubits_min=qmin, shots=shots, circuit=circuit,
                        qasm=text if has_inline else None, qasm_file=qfile, needs=tuple(needs))
    template = payload.get("template")
    if not isinstance(template, str) or not template:
        errors.append(f"{path}.payload.template: missing")
        return None
    return TaskSpec(tid, kind, template=template, params=params, needs=tuple(needs))


def _find_cycle(ids: Sequence[str], edges: Sequence[Edge]) -> Optional[List[str]]:
    graph: Dict[str, set] = {t: set() for t in ids}
    for e in edges:
        graph[e.dst].add(e.src)
    try:
        graphlib.TopologicalSorter(graph).prepare()
    except graphlib.CycleError as e:
        cycle = list(e.args[1])
        return cycle[:-1] if len(cycle) > 1 and cycle[0] == cycle[-1] else cycle
    return None


def validate_spec(spec: WorkflowSpec) -> None:
    """Structural checks shared by file parsing and the programmatic builders."""
    errors: List[str] = []
    ids = [t.id for t in spec.tasks]
    seen = set()
    for tid in ids:
        if tid in seen:
            errors.append(f"duplicate task id {tid!r}")
        seen.add(tid)
    pairs = set()
    for e in spec.edges:
        for end in (e.src, e.dst):
            if end not in seen:
                errors.append(f"edge {e.src}->{e.dst}: unknown task {end!r}")
        if e.src == e.dst:
            errors.append(f"edge {e.src}->{e.dst}: self-loop")
        if e.coupling not in COUPLINGS:
            errors.append(f"edge {e.src}->{e.dst}: unknown coupling {e.coupling!r}")
        if (e.src, e.dst) in pairs:
            errors.append(f"edge {e.src}->{e.dst}: duplicate")
        pairs.add((e.src, e.dst))
    for t in spec.tasks:
        for n in t.needs:
            if (n, t.id) not in pairs:
                errors.append(f"task {t.id!r} needs input from {n!r} but there is no edge {n}->{t.id}")
    if errors:
        raise WorkflowError(errors)
    cycle = _find_cycle(ids, spec.edges)
    if cycle:
        raise WorkflowError([f"cycle detected: {' -> '.join(cycle + cycle[:1])}"], cycle=cycle)


def workflow_from_dict(data: Any, base_dir: str = ".") -> WorkflowSpec:
    errors: List[str] = []
    if not isinstance(data, dict):
        raise WorkflowError(["workflow: expected a JSON object"])
    _unknown(data, ("name", "defaults", "tasks", "edges"), "workflow", errors)
    name = data.get("name", "workflow")
    if not isinstance(name, str):
        errors.append("workflow.name: expected a string")
    defaults = data.get("defaults", {})
    tight, medium = DEFAULT_TIGHT_US, DEFAULT_MEDIUM_US
    if not isinstance(defaults, dict):
        errors.append("workflow.defaults: expected an object")
    else:
        _unknown(defaults, ("tight_latency_us", "medium_latency_us"), "workflow.defaults", errors)
        if "tight_latency_us" in defaults:
            tight = _number(defaults["tight_latency_us"], "workflow.defaults.tight_latency_us", errors)
        if "medium_latency_us" in defaults:
            medium = _number(defaults["medium_latency_us"], "workflow.defaults.medium_latency_us", errors)
    raw_tasks = data.get("tasks")
    if not isinstance(raw_tasks, list) or not raw_tasks:
        errors.append("workflow.tasks: expected a non-empty array")
        raw_tasks = []
    tasks = [t for i, obj in enumerate(raw_tasks) if (t := _parse_task(obj, i, base_dir, errors)) is not None]
    edges: List[Edge] = []
    raw_edges = data.get("edges", [])
    if not isinstance(raw_edges, list):
        errors.append("workflow.edges: expected an array")
        raw_edges = []
    for i, obj in enumerate(raw_edges):
        if not isinstance(obj, dict):
            errors.append(f"edges[{i}]: expected an object")
            continue
        _unknown(obj, ("from", "to", "coupling"), f"edges[{i}]", errors)
        src, dst = obj.get("from"), obj.get("to")
        if not isinstance(src, str) or not isinstance(dst, str):
            errors.append(f"edges[{i}]: 'from' and 'to' must be task ids")
            continue
        edges.append(Edge(src, dst, obj.get("coupling", "loose")))
    if errors:
        raise WorkflowError(errors)
    spec = WorkflowSpec(name, tuple(tasks), tuple(edges), tight, medium, base_dir=base_dir)
    validate_spec(spec)
    return spec


def parse_workflow(path: Union[str, os.PathLike]) -> WorkflowSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise WorkflowError([f"{path}: invalid JSON at line {e.lineno}: {e.msg}"]) from None
    return workflow_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def workflow_to_dict(spec: WorkflowSpec) -> Dict[str, Any]:
    tasks = []
    for t in spec.tasks:
        d: Dict[str, Any] = {"id": t.id, "kind": t.kind}
        if t.kind == "classical":
            d["requirements"] = {"cores": t.cores, "gpus": t.gpus, "compute_cost_us": t.compute_cost_us}
            d["payload"] = {"action": t.action, "params": dict(t.params)}
        elif t.kind == "quantum":
            d["requirements"] = {"qpu_qubits_min": t.qpu_qubits_min, "shots": t.shots}
            d["payload"] = {"qasm_file": t.qasm_file} if t.qasm_file else {"qasm": t.qasm}
        else:
            d["payload"] = {"template": t.template, "params": dict(t.params)}
        if t.needs:
            d["needs"] = list(t.needs)
        tasks.append(d)
    return {
        "name": spec.name,
        "defaults": {"tight_latency_us": spec.tight_latency_us, "medium_latency_us": spec.medium_latency_us},
        "tasks": tasks,
        "edges": [{"from": e.src, "to": e.dst, "coupling": e.coupling} for e in spec.edges],
    }


# ---------------------------------------------------------------- compiling


def _executable(t: TaskSpec) -> ExecutableTask:
    if t.kind == "classical":
        return ExecutableTask(t.id, "classical", cores=t.cores, gpus=t.gpus, compute_cost_us=t.compute_cost_us,
                              action=t.action, params=dict(t.params), needs=t.needs)
    return ExecutableTask(t.id, "quantum", qpu_qubits_min=t.qpu_qubits_min, shots=t.shots,
                          circuit=t.circuit, needs=t.needs)


def default_registry() -> Dict[str, Template]:
    from .patterns import TEMPLATES

    return dict(TEMPLATES)


def compile(w: WorkflowSpec, registry: Optional[Mapping[str, Template]] = None) -> Workload:  # noqa: A001
    """Expand composites and derive placement constraints from coupled edges."""
    if registry is None:
        registry = default_registry()
    tasks: List[ExecutableTask] = []
    edges: List[Edge] = []
    constraints: List[PlacementConstraint] = []
    sources: Dict[str, List[str]] = {}
    sinks: Dict[str, List[str]] = {}
    aliases: Dict[str, Tuple[str, ...]] = {}
    drivers = set()
    for t in w.tasks:
        if t.kind != "composite":
            tasks.append(_executable(t))
            sources[t.id] = sinks[t.id] = [t.id]
            continue
        if t.template not in registry:
            raise WorkflowError([f"task {t.id!r}: unknown template {t.template!r}"])
        exp = registry[t.template](t, w)
        if not exp.tasks:
            raise WorkflowError([f"task {t.id!r}: template {t.template!r} expanded to nothing"])
        for et in exp.tasks:
            if not et.id.startswith(t.id + "."):
                raise WorkflowError([f"task {t.id!r}: expanded id {et.id!r} is not namespaced"])
            if et.driver:
                drivers.add(et.id)
        tasks.extend(exp.tasks)
        edges.extend(exp.edges)
        constraints.extend(exp.constraints)
        sources[t.id], sinks[t.id] = exp.sources(), exp.sinks()
        aliases[t.id] = tuple(sinks[t.id])
    for e in w.edges:
        for u in sinks[e.src]:
            for v in sources[e.dst]:
                edges.append(Edge(u, v, e.coupling))
                bound = w.threshold(e.coupling)
                if bound is not None:
                    constraints.append(PlacementConstraint(frozenset((u, v)), bound, e.coupling))
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise WorkflowError(["expansion produced duplicate task ids"])
    cycle = _find_cycle(ids, edges)
    if cycle:
        raise WorkflowError([f"expansion produced a cycle: {' -> '.join(cycle + cycle[:1])}"], cycle=cycle)
    return Workload(w.name, tuple(tasks), tuple(edges), tuple(constraints), frozenset(drivers), aliases,
                    base_dir=w.base_dir,
                    thresholds={"tight": w.tight_latency_us, "medium": w.medium_latency_us})


def generations(wl: Workload) -> List[List[str]]:
    """Topological layers by longest predecessor chain; ids sorted within a layer."""
    preds: Dict[str, List[str]] = {t.id: [] for t in wl.tasks}
    for e in wl.edges:
        preds[e.dst].append(e.src)
    order = graphlib.TopologicalSorter(preds).static_order()
    level: Dict[str, int] = {}
    for tid in order:
        level[tid] = max((level[p] + 1 for p in preds[tid]), default=0)
    layers: List[List[str]] = [[] for _ in range(max(level.values(), default=-1) + 1)]
    for tid, k in level.items():
        layers[k].append(tid)
    return [sorted(layer) for layer in layers]
