"""Classical task actions.

An action is ``fn(params, inputs, ctx) -> output``. ``inputs`` maps each name
in the task's ``needs`` to that task's output. Files an action produces are
queued on ``ctx.artifacts`` and written once the run is over.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Tuple

from .patterns import load_hamiltonian, warm_start


class ActionError(RuntimeError):
    pass


@dataclass
class ActionContext:
    task_id: str
    base_dir: str = "."
    seed: int = 0
    artifacts: List[Tuple[str, str]] = field(default_factory=list)


def _input_path(ctx: ActionContext, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(ctx.base_dir, path)


def noop(params: Mapping[str, Any], inputs: Mapping[str, Any], ctx: ActionContext) -> Any:
    return dict(params) if params else None


def load_hamiltonian_action(params: Mapping[str, Any], inputs: Mapping[str, Any], ctx: ActionContext) -> Any:
    """Read the Hamiltonian file and pre-compute initial parameters."""
    if "path" not in params:
        raise ActionError("load_hamiltonian needs a 'path' parameter")
    path = _input_path(ctx, params["path"])
    try:
        h = load_hamiltonian(path)
    except OSError as e:
        raise ActionError(f"cannot read hamiltonian {params['path']!r}: {e.strerror}") from None
    except ValueError as e:
        raise ActionError(f"{params['path']}: {e}") from None
    init = warm_start(h) if params.get("warm_start", True) else tuple(0.0 for _ in range(h.num_qubits))
    return {"hamiltonian": [[c, p] for c, p in h.terms], "initial_params": list(init)}


def write_report(params: Mapping[str, Any], inputs: Mapping[str, Any], ctx: ActionContext) -> Any:
    results = {k: v for k, v in inputs.items() if isinstance(v, dict) and "final_energy" in v}
    if not results:
        raise ActionError("write_report found no VQE result among its inputs")
    name, res = sorted(results.items())[0]
    report = {
        "source": name,
        "final_energy": res["final_energy"],
        "iterations_used": res["iterations_used"],
        "circuit_evaluations": res["circuit_evaluations"],
        "converged": res["converged"],
        "parameters": [{"index": j, "theta": t} for j, t in enumerate(res["final_params"])],
    }
    path = params.get("path", "report.json")
    ctx.artifacts.append((path, json.dumps(report, indent=2) + "\n"))
    return {"path": path, "final_energy": res["final_energy"]}


def select_min(params: Mapping[str, Any], inputs: Mapping[str, Any], ctx: ActionContext) -> Any:
    energies = {k: v["final_energy"] for k, v in inputs.items() if isinstance(v, dict) and "final_energy" in v}
    if not energies:
        raise ActionError("select_min found no energies among its inputs")
    best = min(sorted(energies), key=lambda k: energies[k])
    return {"best": best, "final_energy": energies[best], "energies": dict(sorted(energies.items()))}


def decode_feedback(params: Mapping[str, Any], inputs: Mapping[str, Any], ctx: ActionContext) -> Any:
    counts: Dict[str, int] = {}
    for v in inputs.values():
        if isinstance(v, dict) and "counts" in v:
            for k, n in v["counts"].items():
                counts[k] = counts.get(k, 0) + n
    total = sum(counts.values())
    zeros = sum(n for k, n in counts.items() if set(k) <= {"0"})
    return {"counts": dict(sorted(counts.items())), "shots": total, "zero_fraction": zeros / total if total else 0.0}


ACTIONS: Dict[str, Callable[[Mapping[str, Any], Mapping[str, Any], ActionContext], Any]] = {
    "noop": noop,
    "load_hamiltonian": load_hamiltonian_action,
    "write_report": write_report,
    "select_min": select_min,
    "decode_feedback": decode_feedback,
}
# run by the runtime's driver machinery, not called directly
DRIVER_ACTIONS = ("vqe",)
