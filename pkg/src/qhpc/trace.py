"""Trace records (NDJSON) and metrics derived from them.

``detail`` is a space-separated list of ``key=value`` tokens, optionally
followed by free text after `` -- ``. Metrics are a pure fold over records, so
``qhpc report`` recomputes exactly what ``qhpc run`` wrote.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

KINDS = ("task_start", "task_end", "task_fail", "pilot_acquire", "pilot_release", "bind")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    kind: str
    at_us: int
    task_id: Optional[str] = None
    resource_id: Optional[str] = None
    attempt: Optional[int] = None
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "at_us": self.at_us,
            "task_id": self.task_id,
            "resource_id": self.resource_id,
            "attempt": self.attempt,
            "detail": self.detail,
        }, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Any, lineno: int = 0) -> "TraceRecord":
        where = f"line {lineno}" if lineno else "record"
        if not isinstance(d, dict):
            raise TraceError(f"{where}: expected an object")
        extra = set(d) - {"kind", "at_us", "task_id", "resource_id", "attempt", "detail"}
        if extra:
            raise TraceError(f"{where}: unknown key {sorted(extra)[0]!r}")
        if d.get("kind") not in KINDS:
            raise TraceError(f"{where}: unknown kind {d.get('kind')!r}")
        at = d.get("at_us")
        if isinstance(at, bool) or not isinstance(at, int) or at < 0:
            raise TraceError(f"{where}: at_us must be a non-negative integer")
        att = d.get("attempt")
        if att is not None and (isinstance(att, bool) or not isinstance(att, int)):
            raise TraceError(f"{where}: attempt must be an integer")
        for k in ("task_id", "resource_id"):
            if d.get(k) is not None and not isinstance(d[k], str):
                raise TraceError(f"{where}: {k} must be a string")
        detail = d.get("detail", "")
        if not isinstance(detail, str):
            raise TraceError(f"{where}: detail must be a string")
        return cls(d["kind"], at, d.get("task_id"), d.get("resource_id"), att, detail)


def parse_detail(detail: str) -> Dict[str, str]:
    head = detail.split(" -- ", 1)[0]
    out = {}
    for tok in head.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def format_detail(_text: str = "", **fields: Any) -> str:
    toks = " ".join(f"{k}={v}" for k, v in fields.items() if v is not None)
    if _text:
        return f"{toks} -- {_text}" if toks else f"-- {_text}"
    return toks


def dumps(records: Iterable[TraceRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def write_trace(path: Union[str, os.PathLike], records: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(records))


def loads(text: str) -> List[TraceRecord]:
    out = []
    for i, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"line {i}: invalid JSON: {e.msg}") from None
        out.append(TraceRecord.from_dict(d, i))
    for i in range(1, len(out)):
        if out[i].at_us < out[i - 1].at_us:
            raise TraceError(f"record {i + 1}: time goes backwards ({out[i].at_us} < {out[i - 1].at_us})")
    return out


def read_trace(path: Union[str, os.PathLike]) -> List[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# ------------------------------------------------------------------ metrics


@dataclass
class RunMetrics:
    makespan_us: int = 0
    busy_us: Dict[str, int] = field(default_factory=dict)
    utilization: Dict[str, float] = field(default_factory=dict)
    total_quantum_tasks: int = 0
    total_shots: int = 0
    total_circuit_evaluations: int = 0
    outcome: str = "success"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outcome": self.outcome,
            "makespan_us": self.makespan_us,
            "total_quantum_tasks": self.total_quantum_tasks,
            "total_shots": self.total_shots,
            "total_circuit_evaluations": self.total_circuit_evaluations,
            "busy_us": dict(self.busy_us),
            "utilization": dict(self.utilization),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def intervals(records: Iterable[TraceRecord]) -> List[Tuple[str, str, int, int, int, str]]:
    """Executed attempts as ``(task, resource, start, end, attempt, status)``,
    in start order. Attempts still open at the end of the trace are dropped."""
    open_: Dict[Tuple[str, int], Tuple[str, int]] = {}
    out = []
    for r in records:
        key = (r.task_id, r.attempt)
        if r.kind == "task_start":
            open_[key] = (r.resource_id, r.at_us)
        elif r.kind in ("task_end", "task_fail") and key in open_:
            rid, start = open_.pop(key)
            out.append((r.task_id, rid, start, r.at_us, r.attempt, "ok" if r.kind == "task_end" else "fail"))
    out.sort(key=lambda t: (t[2], t[0], t[4]))
    return out


def _union_length(spans: List[Tuple[int, int]], limit: int) -> int:
    total, cur_s, cur_e = 0, None, None
    for s, e in sorted(spans):
        s, e = min(s, limit), min(e, limit)
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def fold(records: Iterable[TraceRecord]) -> RunMetrics:
    records = list(records)
    m = RunMetrics()
    ends = [r.at_us for r in records if r.kind == "task_end"]
    m.makespan_us = max(ends, default=0)
    resources = sorted({r.resource_id for r in records if r.resource_id is not None and r.kind != "bind"})
    spans: Dict[str, List[Tuple[int, int]]] = {rid: [] for rid in resources}
    for tid, rid, s, e, _, _ in intervals(records):
        spans.setdefault(rid, []).append((s, e))
    for rid in sorted(spans):
        busy = _union_length(spans[rid], m.makespan_us)
        m.busy_us[rid] = busy
        m.utilization[rid] = busy / m.makespan_us if m.makespan_us else 0.0
    quantum = set()
    for r in records:
        d = parse_detail(r.detail)
        if r.kind == "task_start" and d.get("kind") == "quantum":
            quantum.add(r.task_id)
        elif r.kind == "task_end" and d.get("kind") == "quantum":
            m.total_circuit_evaluations += 1
            m.total_shots += int(d.get("shots", 0))
        elif r.kind == "task_fail":
            if d.get("outcome") == "unsatisfiable":
                m.outcome = "unsatisfiable"
            elif d.get("terminal") == "1" and m.outcome == "success":
                m.outcome = "failed"
    m.total_quantum_tasks = len(quantum)
    return m


def gantt_rows(records: Iterable[TraceRecord]) -> List[Tuple[str, str, int, int, int, str]]:
    return intervals(records)


def write_gantt(path: Union[str, os.PathLike], records: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("task\tresource\tstart_us\tend_us\tattempt\tstatus\n")
        for row in gantt_rows(records):
            fh.write("\t".join(str(x) for x in row) + "\n")


def format_report(records: List[TraceRecord], metrics: Optional[RunMetrics] = None) -> str:
    m = metrics or fold(records)
    rows = intervals(records)
    lines = [f"{'resource':<12} {'tasks':>6} {'first_us':>12} {'last_us':>12} {'busy_us':>12} {'util':>7}"]
    for rid in sorted(m.busy_us):
        mine = [r for r in rows if r[1] == rid]
        first = min((r[2] for r in mine), default=0)
        last = max((r[3] for r in mine), default=0)
        lines.append(f"{rid:<12} {len(mine):>6} {first:>12} {last:>12} {m.busy_us[rid]:>12} {m.utilization[rid]:>7.3f}")
    lines.append("")
    lines.append(f"outcome                    {m.outcome}")
    lines.append(f"makespan_us                {m.makespan_us}")
    lines.append(f"total_quantum_tasks        {m.total_quantum_tasks}")
    lines.append(f"total_shots                {m.total_shots}")
    lines.append(f"total_circuit_evaluations  {m.total_circuit_evaluations}")
    return "\n".join(lines) + "\n"
