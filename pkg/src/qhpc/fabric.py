"""Resource layer: classical nodes, QPUs, link latencies and the QPU timing model.

Fabric files are JSON::

    {"nodes": [{"id": "n1", "cores": 8, "gpus": 0, "core_speed": 1.0}],
     "qpus": [{"id": "q1", "num_qubits": 5, "modality": "simulated",
               "coherence_time_us": 100, "gate_time_1q_us": 0.05,
               "gate_time_2q_us": 0.3, "readout_time_us": 1.0,
               "shot_overhead_us": 10, "compile_overhead_us": 1000,
               "failure_prob": 0.0}],
     "links": [{"a": "n1", "b": "q1", "latency_us": 0.5}],
     "default_latency_us": 10000}
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple, Union

from .qasm import Circuit, Instruction

MODALITIES = ("simulated", "superconducting", "ion_trap")


class FabricError(ValueError):
    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class ClassicalNode:
    id: str
    cores: int
    gpus: int = 0
    core_speed: float = 1.0

    def __post_init__(self) -> None:
        if self.cores < 1:
            raise ValueError(f"node {self.id}: cores must be >= 1")
        if self.gpus < 0:
            raise ValueError(f"node {self.id}: gpus must be >= 0")
        if not self.core_speed > 0:
            raise ValueError(f"node {self.id}: core_speed must be > 0")


@dataclass(frozen=True)
class QpuDevice:
    id: str
    num_qubits: int
    modality: str = "simulated"
    coherence_time_us: float = 100.0
    gate_time_1q_us: float = 0.05
    gate_time_2q_us: float = 0.3
    readout_time_us: float = 1.0
    shot_overhead_us: float = 10.0
    compile_overhead_us: float = 1000.0
    failure_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.num_qubits < 1:
            raise ValueError(f"qpu {self.id}: num_qubits must be >= 1")
        if self.modality not in MODALITIES:
            raise ValueError(f"qpu {self.id}: unknown modality {self.modality!r}")
        for name in _QPU_TIMES:
            if not getattr(self, name) > 0:
                raise ValueError(f"qpu {self.id}: {name} must be > 0")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise ValueError(f"qpu {self.id}: failure_prob must be in [0, 1]")


_QPU_TIMES = (
    "coherence_time_us",
    "gate_time_1q_us",
    "gate_time_2q_us",
    "readout_time_us",
    "shot_overhead_us",
    "compile_overhead_us",
)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency_us: float


@dataclass(frozen=True)
class Fabric:
    nodes: Tuple[ClassicalNode, ...] = ()
    qpus: Tuple[QpuDevice, ...] = ()
    links: Tuple[Link, ...] = ()
    default_latency_us: float = 10000.0
    _index: Dict[str, Union[ClassicalNode, QpuDevice]] = field(init=False, repr=False, compare=False)
    _lat: Dict[frozenset, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "qpus", tuple(self.qpus))
        object.__setattr__(self, "links", tuple(self.links))
        index: Dict[str, Union[ClassicalNode, QpuDevice]] = {}
        for r in self.nodes + self.qpus:
            if r.id in index:
                raise FabricError([f"duplicate resource id {r.id!r}"])
            index[r.id] = r
        lat: Dict[frozenset, float] = {}
        for ln in self.links:
            for end in (ln.a, ln.b):
                if end not in index:
                    raise FabricError([f"link endpoint {end!r} does not name a resource"])
            if ln.latency_us < 0:
                raise FabricError([f"link {ln.a}-{ln.b}: latency must be >= 0"])
            key = frozenset((ln.a, ln.b))
            if ln.a == ln.b and ln.latency_us != 0:
                raise FabricError([f"self-link on {ln.a!r} must have zero latency"])
            if key in lat and lat[key] != ln.latency_us:
                raise FabricError([f"conflicting latencies for link {ln.a}-{ln.b}"])
            lat[key] = ln.latency_us
        if self.default_latency_us < 0:
            raise FabricError(["default_latency_us must be >= 0"])
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_lat", lat)

    @property
    def resource_ids(self) -> List[str]:
        return list(self._index)

    def resource(self, rid: str) -> Union[ClassicalNode, QpuDevice]:
        try:
            return self._index[rid]
        except KeyError:
            raise KeyError(f"unknown resource {rid!r}") from None

    def is_qpu(self, rid: str) -> bool:
        return isinstance(self.resource(rid), QpuDevice)

    def latency(self, r1: str, r2: str) -> float:
        return latency(self, r1, r2)


def latency(f: Fabric, r1: str, r2: str) -> float:
    f.resource(r1)
    f.resource(r2)
    if r1 == r2:
        return 0.0
    return f._lat.get(frozenset((r1, r2)), f.default_latency_us)


# ------------------------------------------------------------------- timing


def instruction_time(q: QpuDevice, inst: Instruction) -> float:
    if inst.kind == "barrier":
        return 0.0
    if inst.kind == "measure":
        return q.readout_time_us
    return q.gate_time_2q_us if inst.gate == "cx" else q.gate_time_1q_us


def shot_time(q: QpuDevice, c: Circuit) -> float:
    return sum(instruction_time(q, i) for i in c.instructions)


def qpu_exec_time(q: QpuDevice, c: Circuit, shots: int) -> float:
    """compile + shots * (per-shot setup + sum of instruction times), in microseconds."""
    if c.num_qubits > q.num_qubits:
        raise ValueError(f"circuit needs {c.num_qubits} qubits, {q.id} has {q.num_qubits}")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    return q.compile_overhead_us + shots * (q.shot_overhead_us + shot_time(q, c))


def coherence_budget_ok(q: QpuDevice, c: Circuit, feedback_latency_us: float) -> bool:
    # each conditioned instruction needs a round trip to the classical side
    budget = shot_time(q, c) + c.num_conditioned * 2.0 * feedback_latency_us
    return budget <= q.coherence_time_us


# ------------------------------------------------------------------ loading

_NODE_KEYS = {"id": str, "cores": int, "gpus": int, "core_speed": float}
_QPU_KEYS = {
    "id": str,
    "num_qubits": int,
    "modality": str,
    "coherence_time_us": float,
    "gate_time_1q_us": float,
    "gate_time_2q_us": float,
    "readout_time_us": float,
    "shot_overhead_us": float,
    "compile_overhead_us": float,
    "failure_prob": float,
}
_LINK_KEYS = {"a": str, "b": str, "latency_us": float}


def _typed(value: Any, kind: type, path: str, errors: List[str]) -> Any:
    if kind is str:
        if not isinstance(value, str) or not value:
            errors.append(f"{path}: expected a non-empty string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}: expected a number, got {value!r}")
        return None
    if kind is int and (not float(value).is_integer()):
        errors.append(f"{path}: expected an integer, got {value!r}")
        return None
    return kind(value)


def _record(obj: Any, spec: Mapping[str, type], path: str, errors: List[str], optional=()) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        errors.append(f"{path}: expected an object")
        return {}
    out: Dict[str, Any] = {}
    for key in obj:
        if key not in spec:
            errors.append(f"{path}.{key}: unknown key")
    for key, kind in spec.items():
        if key not in obj:
            if key not in optional:
                errors.append(f"{path}.{key}: missing")
            continue
        out[key] = _typed(obj[key], kind, f"{path}.{key}", errors)
    return out


def fabric_from_dict(data: Any) -> Fabric:
    errors: List[str] = []
    if not isinstance(data, dict):
        raise FabricError(["fabric: expected a JSON object"])
    for key in data:
        if key not in ("nodes", "qpus", "links", "default_latency_us"):
            errors.append(f"{key}: unknown key")
    nodes, qpus, links = [], [], []
    for section, spec, ctor, sink, opt in (
        ("nodes", _NODE_KEYS, ClassicalNode, nodes, ("gpus", "core_speed")),
        ("qpus", _QPU_KEYS, QpuDevice, qpus, tuple(k for k in _QPU_KEYS if k not in ("id", "num_qubits"))),
        ("links", _LINK_KEYS, Link, links, ()),
    ):
        items = data.get(section, [])
        if not isinstance(items, list):
            errors.append(f"{section}: expected an array")
            continue
        for i, obj in enumerate(items):
            path = f"{section}[{i}]"
            before = len(errors)
            rec = _record(obj, spec, path, errors, optional=opt)
            if len(errors) > before:
                continue
            try:
                sink.append(ctor(**rec))
            except ValueError as e:
                errors.append(f"{path}: {e}")
    default = 10000.0
    if "default_latency_us" in data:
        default = _typed(data["default_latency_us"], float, "default_latency_us", errors)
    if errors:
        raise FabricError(errors)
    return Fabric(tuple(nodes), tuple(qpus), tuple(links), default)


def load_fabric(path: Union[str, os.PathLike]) -> Fabric:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise FabricError([f"{path}: invalid JSON at line {e.lineno}: {e.msg}"]) from None
    return fabric_from_dict(data)


def fabric_to_dict(f: Fabric) -> Dict[str, Any]:
    return {
        "nodes": [dict(id=n.id, cores=n.cores, gpus=n.gpus, core_speed=n.core_speed) for n in f.nodes],
        "qpus": [{k: getattr(q, k) for k in _QPU_KEYS} for q in f.qpus],
        "links": [dict(a=ln.a, b=ln.b, latency_us=ln.latency_us) for ln in f.links],
        "default_latency_us": f.default_latency_us,
    }
