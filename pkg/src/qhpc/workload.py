"""Workload layer: resource selection, early planning and late binding.

The policy is greedy earliest-finish-time list scheduling over per-resource
reservation timelines. Ties go to the earlier start, then the smaller
resource id. Placement constraints are checked against members that are
already bound; the unbound members linked to a candidate through constraints
must still admit a joint placement (a small backtracking search), so an
infeasible grouping is reported (or avoided) when its first member is placed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .fabric import ClassicalNode, Fabric, QpuDevice, coherence_budget_ok, latency, qpu_exec_time
from .workflow import ExecutableTask, PlacementConstraint, Workload, generations

INF = 1 << 62


class BindingMode(str, Enum):
    EARLY = "early"
    LATE = "late"


class UnsatisfiableConstraint(Exception):
    def __init__(self, task_id: str, message: str):
        self.task_id = task_id
        super().__init__(f"task {task_id}: {message}")


class CoherenceViolation(UnsatisfiableConstraint):
    """No QPU can run the task's feedback loop within its coherence time."""


class OverlapError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScheduleDecision:
    task_id: str
    resource_id: str
    planned_start_us: int
    planned_end_us: int
    bound_at: int = 0

    def __post_init__(self) -> None:
        if self.planned_end_us <= self.planned_start_us:
            raise ValueError(f"{self.task_id}: planned_end must exceed planned_start")


@dataclass
class Reservation:
    task_id: str
    start: int
    end: int
    cores: int = 1
    gpus: int = 0


# ---------------------------------------------------------------- estimator


def capable(task: ExecutableTask, res) -> bool:
    if task.kind == "quantum":
        width = task.circuit.num_qubits if task.circuit is not None else 0
        return isinstance(res, QpuDevice) and res.num_qubits >= max(task.qpu_qubits_min, width)
    return isinstance(res, ClassicalNode) and res.cores >= task.cores and res.gpus >= task.gpus


def demand(task: ExecutableTask) -> Tuple[int, int]:
    return (1, 0) if task.kind == "quantum" else (task.cores, task.gpus)


@dataclass
class Estimator:
    """Duration model. Drivers have no knowable duration; the plan books
    ``driver_us`` for them and the runtime holds their core until they finish."""

    fabric: Fabric
    driver_us: int = 1

    def duration(self, task: ExecutableTask, rid: str) -> int:
        res = self.fabric.resource(rid)
        if task.driver:
            return self.driver_us
        if task.kind == "quantum":
            if task.measure_terms:
                from .qsim import measurement_circuit

                t = sum(qpu_exec_time(res, measurement_circuit(task.circuit, p), task.shots) for p in task.measure_terms)
            else:
                t = qpu_exec_time(res, task.circuit, task.shots)
        else:
            t = task.compute_cost_us / res.core_speed
        return int(math.ceil(t - 1e-9))


# ------------------------------------------------------------------- state


class SchedulerState:
    """Reservation timelines plus dependency bookkeeping for one run."""

    def __init__(self, fabric: Fabric, workload: Optional[Workload] = None,
                 constraints: Iterable[PlacementConstraint] = ()):
        self.fabric = fabric
        self.timeline: Dict[str, List[Reservation]] = {rid: [] for rid in fabric.resource_ids}
        self.tasks: Dict[str, ExecutableTask] = {}
        self.succs: Dict[str, List[str]] = {}
        self.waiting_on: Dict[str, int] = {}
        self.ready: List[str] = []
        self.completed: Set[str] = set()
        self.bound: Dict[str, str] = {}
        self.constraints: List[PlacementConstraint] = list(constraints)
        if workload is not None:
            self.constraints.extend(workload.constraints)
            for t in workload.tasks:
                self.add_task(t, workload.predecessors(t.id))

    def add_task(self, task: ExecutableTask, preds: Sequence[str] = ()) -> None:
        self.tasks[task.id] = task
        self.succs.setdefault(task.id, [])
        open_preds = [p for p in preds if p not in self.completed]
        for p in preds:
            self.succs.setdefault(p, []).append(task.id)
        self.waiting_on[task.id] = len(open_preds)
        if not open_preds:
            self.ready.append(task.id)

    def capacity(self, rid: str) -> Tuple[int, int]:
        res = self.fabric.resource(rid)
        return (1, 0) if isinstance(res, QpuDevice) else (res.cores, res.gpus)

    def usage_peak(self, rid: str, start: int, end: int, ignore: Optional[str] = None) -> Tuple[int, int]:
        end = max(end, start + 1)
        live = [r for r in self.timeline[rid] if r.start < end and r.end > start and r.task_id != ignore]
        peak_c = peak_g = 0
        for t in {start, *(r.start for r in live if r.start > start)}:
            c = sum(r.cores for r in live if r.start <= t < r.end)
            g = sum(r.gpus for r in live if r.start <= t < r.end)
            peak_c, peak_g = max(peak_c, c), max(peak_g, g)
        return peak_c, peak_g

    def fits(self, rid: str, start: int, end: int, cores: int, gpus: int, ignore: Optional[str] = None) -> bool:
        cap_c, cap_g = self.capacity(rid)
        use_c, use_g = self.usage_peak(rid, start, end, ignore)
        return use_c + cores <= cap_c and use_g + gpus <= cap_g

    def earliest_start(self, rid: str, ready_at: int, duration: int, cores: int, gpus: int) -> Optional[int]:
        """Earliest slot at or after ``ready_at``; ``None`` if only open-ended
        reservations stand in the way."""
        cands = sorted({ready_at, *(r.end for r in self.timeline[rid] if ready_at < r.end < INF)})
        for c in cands:
            if self.fits(rid, c, c + duration, cores, gpus):
                return c
        return None

    def reserve(self, task_id: str, rid: str, start: int, end: int, cores: int = 1, gpus: int = 0) -> None:
        """Record a reservation without checking it (live bookkeeping)."""
        self.timeline[rid] = [r for r in self.timeline[rid] if r.task_id != task_id]
        self.timeline[rid].append(Reservation(task_id, start, end, cores, gpus))

    def truncate(self, task_id: str, at: int) -> None:
        for rid, rs in self.timeline.items():
            keep = []
            for r in rs:
                if r.task_id == task_id:
                    if at > r.start:
                        keep.append(Reservation(r.task_id, r.start, at, r.cores, r.gpus))
                else:
                    keep.append(r)
            self.timeline[rid] = keep

    def release(self, task_id: str) -> None:
        for rid in self.timeline:
            self.timeline[rid] = [r for r in self.timeline[rid] if r.task_id != task_id]


def admit(state: SchedulerState, decision: ScheduleDecision) -> SchedulerState:
    task = state.tasks[decision.task_id]
    cores, gpus = demand(task)
    if not state.fits(decision.resource_id, decision.planned_start_us, decision.planned_end_us, cores, gpus,
                      ignore=decision.task_id):
        raise OverlapError(
            f"{decision.task_id} on {decision.resource_id} [{decision.planned_start_us}, "
            f"{decision.planned_end_us}) exceeds capacity"
        )
    state.reserve(decision.task_id, decision.resource_id, decision.planned_start_us, decision.planned_end_us,
                  cores, gpus)
    state.bound[decision.task_id] = decision.resource_id
    if decision.task_id in state.ready:
        state.ready.remove(decision.task_id)
    return state


def complete(state: SchedulerState, task_id: str, at: int) -> List[str]:
    """Mark ``task_id`` done at ``at``; returns successors that became ready."""
    if task_id in state.completed:
        return []
    state.completed.add(task_id)
    state.truncate(task_id, at)
    if task_id in state.ready:
        state.ready.remove(task_id)
    newly = []
    for s in state.succs.get(task_id, []):
        state.waiting_on[s] -= 1
        if state.waiting_on[s] == 0:
            state.ready.append(s)
            newly.append(s)
    return newly


# --------------------------------------------------------------- selection


def _candidate_resources(task: ExecutableTask, fabric: Fabric) -> List[str]:
    return sorted(r.id for r in fabric.nodes + fabric.qpus if capable(task, r))


def _constraint_ok(task: ExecutableTask, rid: str, state: SchedulerState,
                   constraints: Sequence[PlacementConstraint]) -> Optional[str]:
    """``None`` if placing ``task`` on ``rid`` keeps every constraint satisfiable,
    else a reason."""
    f = state.fabric
    for con in constraints:
        if task.id not in con.members:
            continue
        for m in sorted(con.members - {task.id}):
            if m in state.bound:
                d = latency(f, rid, state.bound[m])
                if d > con.max_latency_us:
                    return (f"{con.coupling} constraint with {m}: latency {rid}-{state.bound[m]} "
                            f"is {d:g} us > {con.max_latency_us:g} us")
    stuck = _unplaceable_partners(task.id, rid, state, constraints)
    if stuck:
        return (f"no joint placement of {', '.join(stuck)} within their latency bounds "
                f"once {task.id} sits on {rid}")
    return None


def _unplaceable_partners(tid: str, rid: str, state: SchedulerState,
                          constraints: Sequence[PlacementConstraint]) -> List[str]:
    """Unbound tasks linked to ``tid`` through constraints, if they cannot all
    be placed together once ``tid`` sits on ``rid``; empty when they can.

    Small backtracking search over capable resources, most constrained task
    first. Capacity and timing are ignored; only latency bounds matter here.
    """
    f = state.fabric
    cons = [c for c in constraints if any(m in state.tasks or m in state.bound for m in c.members)]
    group, todo = {tid}, [tid]
    while todo:
        cur = todo.pop()
        for c in cons:
            if cur in c.members:
                for m in c.members - group:
                    if m in state.tasks and m not in state.bound:
                        group.add(m)
                        todo.append(m)
    free = sorted(group - {tid})
    if not free:
        return []
    assign = dict(state.bound)
    assign[tid] = rid
    pairs: Dict[str, List[Tuple[str, float]]] = {m: [] for m in free}
    for c in cons:
        for m in c.members:
            if m in pairs:
                pairs[m] += [(o, c.max_latency_us) for o in c.members - {m}]
    options = {m: _candidate_resources(state.tasks[m], f) for m in free}
    free.sort(key=lambda m: (len(options[m]), m))

    def fits(m: str, r: str) -> bool:
        return all(latency(f, r, assign[o]) <= lim for o, lim in pairs[m] if o in assign)

    def search(i: int) -> bool:
        if i == len(free):
            return True
        m = free[i]
        for r in options[m]:
            if fits(m, r):
                assign[m] = r
                if search(i + 1):
                    return True
                del assign[m]
        return False

    return [] if search(0) else free


def _feedback_latency(task: ExecutableTask, rid: str, state: SchedulerState,
                      constraints: Sequence[PlacementConstraint]) -> float:
    """Latency to the classical side of the feedback loop: the worst tight
    partner, counting unbound partners at their best reachable resource."""
    f = state.fabric
    worst = 0.0
    for con in constraints:
        if con.coupling != "tight" or task.id not in con.members:
            continue
        for m in con.members - {task.id}:
            if m in state.bound:
                worst = max(worst, latency(f, rid, state.bound[m]))
            elif m in state.tasks:
                opts = [latency(f, rid, o) for o in _candidate_resources(state.tasks[m], f)]
                if opts:
                    worst = max(worst, min(opts))
    return worst


def _feasible(task: ExecutableTask, state: SchedulerState, constraints: Sequence[PlacementConstraint]) -> List[str]:
    f = state.fabric
    cands = _candidate_resources(task, f)
    if not cands:
        need = (f"{max(task.qpu_qubits_min, task.circuit.num_qubits)} qubits" if task.kind == "quantum"
                else f"{task.cores} cores and {task.gpus} gpus")
        raise UnsatisfiableConstraint(task.id, f"no resource offers {need}")
    reasons = []
    ok = []
    for rid in cands:
        why = _constraint_ok(task, rid, state, constraints)
        if why is None:
            ok.append(rid)
        else:
            reasons.append(why)
    if not ok:
        raise UnsatisfiableConstraint(task.id, "; ".join(sorted(set(reasons))))
    if task.kind == "quantum" and task.circuit is not None and task.circuit.num_conditioned:
        coherent = [r for r in ok if coherence_budget_ok(f.resource(r), task.circuit,
                                                         _feedback_latency(task, r, state, constraints))]
        if not coherent:
            details = ", ".join(
                f"{r}: feedback {_feedback_latency(task, r, state, constraints):g} us, "
                f"coherence {f.resource(r).coherence_time_us:g} us" for r in ok)
            raise CoherenceViolation(task.id, f"coherence budget exceeded ({details})")
        ok = coherent
    return ok


def choose(task: ExecutableTask, state: SchedulerState, estimator: Estimator, ready_at: int,
           constraints: Optional[Sequence[PlacementConstraint]] = None, bound_at: int = 0) -> Optional[ScheduleDecision]:
    """EFT choice among feasible resources; ``None`` when every feasible
    resource is blocked by open-ended reservations."""
    cons = state.constraints if constraints is None else constraints
    best = None
    cores, gpus = demand(task)
    for rid in _feasible(task, state, cons):
        dur = max(estimator.duration(task, rid), 1)
        start = state.earliest_start(rid, ready_at, dur, cores, gpus)
        if start is None:
            continue
        key = (start + dur, start, rid)
        if best is None or key < best[0]:
            best = (key, rid, start, dur)
    if best is None:
        return None
    _, rid, start, dur = best
    return ScheduleDecision(task.id, rid, start, start + dur, bound_at)


def select_resource(task: ExecutableTask, fabric: Fabric, state: SchedulerState,
                    constraints: Sequence[PlacementConstraint] = (), ready_at: int = 0,
                    estimator: Optional[Estimator] = None) -> str:
    est = estimator or Estimator(fabric)
    state.tasks.setdefault(task.id, task)
    d = choose(task, state, est, ready_at, list(constraints) + state.constraints)
    if d is None:
        raise UnsatisfiableConstraint(task.id, "every feasible resource is held indefinitely")
    return d.resource_id


def plan_early(wl: Workload, fabric: Fabric, estimator: Optional[Estimator] = None,
               state: Optional[SchedulerState] = None) -> List[ScheduleDecision]:
    """List-schedule every workload task in generation order with ``bound_at = 0``.

    ``state`` may carry reservations the plan should respect; by default the
    plan assumes an idle fabric.
    """
    est = estimator or Estimator(fabric)
    st = state if state is not None else SchedulerState(fabric, wl)
    for t in wl.tasks:
        st.tasks.setdefault(t.id, t)
    planned_end: Dict[str, int] = {}
    out: List[ScheduleDecision] = []
    for gen in generations(wl):
        for tid in gen:
            task = wl.task(tid)
            ready_at = max((planned_end[p] for p in wl.predecessors(tid)), default=0)
            d = choose(task, st, est, ready_at, bound_at=0)
            if d is None:  # pragma: no cover - plan timelines are finite
                raise UnsatisfiableConstraint(tid, "no finite slot in the plan")
            admit(st, d)
            planned_end[tid] = d.planned_end_us
            out.append(d)
    return out


def bind_late(task: ExecutableTask, fabric: Fabric, state: SchedulerState, now: int,
              estimator: Optional[Estimator] = None) -> Optional[ScheduleDecision]:
    """Bind a ready task against the live timeline; reserves the slot.

    Returns ``None`` when the task must wait for an open-ended holder to end.
    """
    est = estimator or Estimator(fabric)
    state.tasks.setdefault(task.id, task)
    d = choose(task, state, est, now, bound_at=now)
    if d is not None:
        admit(state, d)
    return d


def check_schedule(intervals: Sequence[Tuple[str, str, int, int]], wl_edges: Iterable[Tuple[str, str]],
                   fabric: Fabric, tasks: Mapping[str, ExecutableTask],
                   constraints: Sequence[PlacementConstraint]) -> List[str]:
    """Audit executed intervals ``(task, resource, start, end)``: dependency
    order, QPU exclusivity, node capacity and constraint latencies."""
    problems: List[str] = []
    last: Dict[str, Tuple[str, int, int]] = {}
    for tid, rid, s, e in intervals:
        last[tid] = (rid, s, e)
    first_start: Dict[str, int] = {}
    for tid, rid, s, e in intervals:
        first_start[tid] = min(first_start.get(tid, s), s)
    for u, v in wl_edges:
        if u in last and v in first_start and first_start[v] < last[u][2]:
            problems.append(f"dependency {u}->{v}: {v} started at {first_start[v]} before {u} ended at {last[u][2]}")
    by_res: Dict[str, List[Tuple[int, int, str]]] = {}
    for tid, rid, s, e in intervals:
        by_res.setdefault(rid, []).append((s, e, tid))
    for rid, ivs in by_res.items():
        res = fabric.resource(rid)
        cap = 1 if isinstance(res, QpuDevice) else res.cores
        points = sorted({s for s, _, _ in ivs})
        for t in points:
            used = sum(1 if isinstance(res, QpuDevice) else tasks[tid].cores
                       for s, e, tid in ivs if s <= t < e)
            if used > cap:
                problems.append(f"{rid} over capacity at {t}: {used} > {cap}")
    for con in constraints:
        placed = [(m, last[m][0]) for m in sorted(con.members) if m in last]
        for i, (a, ra) in enumerate(placed):
            for b, rb in placed[i + 1:]:
                if latency(fabric, ra, rb) > con.max_latency_us:
                    problems.append(f"constraint {a},{b}: {ra}-{rb} latency exceeds {con.max_latency_us:g}")
    return problems
