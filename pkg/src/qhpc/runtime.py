"""Event-driven execution of a compiled workload on a fabric.

The runtime owns one :class:`~qhpc.engine.EventQueue`, a live
:class:`~qhpc.workload.SchedulerState` and a :class:`~qhpc.taskmgr.TaskManager`.
A task starts once it is bound, its predecessors are complete, its hold time
has passed (early binding holds tasks to their planned start) and its
resource's pilot has room. Drivers run a :func:`~qhpc.patterns.vqe_program`
and turn every evaluation request into a late-bound quantum task.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from ._rng import derive_key
from .actions import ACTIONS, ActionContext, ActionError
from .engine import EventQueue
from .fabric import Fabric, QpuDevice
from .patterns import EvalRequest, VqeConfig, evaluate, vqe_config_from_params, vqe_program
from .qsim import run as run_circuit
from .taskmgr import Pilot, RetryPolicy, TaskAttempt, TaskManager
from .trace import RunMetrics, TraceRecord, fold, format_detail
from .workflow import ExecutableTask, PlacementConstraint, Workload
from .workload import (
    INF,
    BindingMode,
    Estimator,
    ScheduleDecision,
    SchedulerState,
    UnsatisfiableConstraint,
    bind_late,
    complete,
    demand,
    plan_early,
)

DEFAULT_PILOT_US = 3_600_000_000  # one simulated hour
EXIT_CODES = {"success": 0, "unsatisfiable": 2, "failed": 3}


@dataclass(frozen=True)
class RunConfig:
    binding: str = "early"
    seed: int = 0
    mode: Optional[str] = None  # overrides every VQE driver's mode when set
    retry: RetryPolicy = RetryPolicy()
    pilot_duration_us: int = DEFAULT_PILOT_US
    # resource -> time until which it is busy with work outside this run
    background: Mapping[str, int] = field(default_factory=dict)
    driver_estimate_us: int = 1
    step_cost_us: int = 100
    max_expiries: int = 3

    def __post_init__(self) -> None:
        BindingMode(self.binding)
        if self.mode not in (None, "exact", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.pilot_duration_us < 1:
            raise ValueError("pilot_duration_us must be >= 1")


@dataclass
class RunResult:
    outcome: str
    records: List[TraceRecord]
    metrics: RunMetrics
    outputs: Dict[str, Any]
    plan: List[ScheduleDecision]
    decisions: Dict[str, ScheduleDecision]
    artifacts: List[Tuple[str, str]]
    message: str = ""

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]


@dataclass
class _Driver:
    cfg: VqeConfig
    prog: Any
    step_cost_us: int
    coupling: str
    gen: int = 0
    batch: List[EvalRequest] = field(default_factory=list)
    results: Dict[int, float] = field(default_factory=dict)
    waiting: Dict[str, int] = field(default_factory=dict)
    dead: bool = False


@dataclass
class _Running:
    pilot: Pilot
    attempt: TaskAttempt
    fate: str
    end: Optional[int]


class Runtime:
    def __init__(self, wl: Workload, fabric: Fabric, cfg: RunConfig = RunConfig()):
        self.wl, self.fabric, self.cfg = wl, fabric, cfg
        self.mode = BindingMode(cfg.binding)
        self.q = EventQueue()
        self.state = SchedulerState(fabric, wl)
        self.est = Estimator(fabric, cfg.driver_estimate_us)
        self.tm = TaskManager(fabric, on_expiry=lambda p: self.q.schedule_at(p.expires_at, ("expire", p.id)))
        self.records: List[TraceRecord] = []
        self.tasks: Dict[str, ExecutableTask] = {t.id: t for t in wl.tasks}
        self.decisions: Dict[str, ScheduleDecision] = {}
        self.plan: List[ScheduleDecision] = []
        self.hold: Dict[str, int] = {}
        self.bind_seq: Dict[str, int] = {}
        self.pending: List[str] = []
        self.unbound: List[str] = []
        self.running: Dict[str, _Running] = {}
        self.attempts: Dict[str, int] = {}
        self.faults: Dict[str, int] = {}
        self.expiries: Dict[str, int] = {}
        self.done: Dict[str, bool] = {}
        self.outputs: Dict[str, Any] = {}
        self.drivers: Dict[str, _Driver] = {}
        self.eval_owner: Dict[str, Tuple[str, int, EvalRequest]] = {}
        self.blocked_until: Dict[str, int] = dict(cfg.background)
        self.unsat_waiting: Dict[str, UnsatisfiableConstraint] = {}
        self.unsat_retried: set = set()
        self.artifacts: List[Tuple[str, str]] = []
        self.outcome = "success"
        self.message = ""
        self.halted = False
        self._work_events = 0  # queued events other than pilot expiries

    def _at(self, at: int, payload) -> None:
        self._work_events += 1
        self.q.schedule_at(at, payload)

    def _idle(self) -> bool:
        waiting = [t for t in self.unbound if t not in self.unsat_waiting]
        return not (self.running or self.pending or waiting or self._work_events)

    @property
    def now(self) -> int:
        return self.q.now

    # ------------------------------------------------------------ records

    def _emit(self, kind: str, task_id=None, resource_id=None, attempt=None, detail="") -> None:
        self.records.append(TraceRecord(kind, self.now, task_id, resource_id, attempt, detail))

    def _task_detail(self, task: ExecutableTask, **extra) -> str:
        source = "driver" if task.id in self.eval_owner else None
        if task.kind == "quantum":
            shots = task.shots * max(len(task.measure_terms), 1)
            return format_detail(kind="quantum", shots=shots, source=source, **extra)
        return format_detail(kind="driver" if task.driver else "classical", **extra)

    # ------------------------------------------------------------ binding

    def _bind(self, d: ScheduleDecision, how: str) -> None:
        task = self.tasks[d.task_id]
        self.decisions[d.task_id] = d
        self.bind_seq[d.task_id] = len(self.bind_seq)
        self.hold[d.task_id] = d.planned_start_us if how == "early" else self.now
        self.pending.append(d.task_id)
        cores, gpus = demand(task)
        self.state.reserve(d.task_id, d.resource_id, d.planned_start_us, d.planned_end_us, cores, gpus)
        self.state.bound[d.task_id] = d.resource_id
        self._emit("bind", d.task_id, d.resource_id, None,
                   format_detail(mode=how, planned_start=d.planned_start_us, planned_end=d.planned_end_us))
        if self.hold[d.task_id] > self.now:
            self._at(self.hold[d.task_id], ("wake",))

    def _unsatisfiable(self, err: UnsatisfiableConstraint) -> None:
        self._emit("task_fail", err.task_id, None, None, format_detail(str(err), outcome="unsatisfiable"))
        self.outcome = "unsatisfiable"
        self.message = str(err)
        self.halted = True

    def _bind_ready(self) -> bool:
        progressed = False
        for tid in list(self.unbound):
            if tid in self.unsat_waiting:
                continue
            try:
                d = bind_late(self.tasks[tid], self.fabric, self.state, self.now, self.est)
            except UnsatisfiableConstraint as e:
                if tid in self.unsat_retried:
                    self._unsatisfiable(e)
                    return False
                # a later completion may free a resource the constraint needs
                self.unsat_retried.add(tid)
                self.unsat_waiting[tid] = e
                continue
            if d is None:
                continue
            self.unbound.remove(tid)
            self._bind(d, "late")
            progressed = True
        return progressed

    # ----------------------------------------------------------- starting

    def _start_ready(self) -> bool:
        progressed = False
        for tid in sorted(self.pending, key=lambda t: (self.hold[t], self.bind_seq[t])):
            if self.halted:
                break
            if self.hold[tid] > self.now or self.state.waiting_on[tid] > 0:
                continue
            rid = self.decisions[tid].resource_id
            if self.blocked_until.get(rid, 0) > self.now:
                continue
            task = self.tasks[tid]
            cores, gpus = demand(task)
            dur = None if task.driver else max(self.est.duration(task, rid), 0)
            if dur is not None and dur > self.cfg.pilot_duration_us:
                self.pending.remove(tid)
                self._terminal(tid, rid, None, f"duration {dur} us exceeds the pilot duration")
                continue
            pilot = self.tm.active_pilot(rid, self.now)
            if pilot is None:
                pilot = self.tm.acquire_pilot(rid, self.cfg.pilot_duration_us, self.now)
                self._emit("pilot_acquire", None, rid, None, format_detail(pilot=pilot.id, expires_at=pilot.expires_at))
            if not pilot.fits(cores, gpus):
                continue
            self.pending.remove(tid)
            self._start(tid, task, pilot, dur)
            progressed = True
        return progressed

    def _start(self, tid: str, task: ExecutableTask, pilot: Pilot, dur: Optional[int]) -> None:
        rid = pilot.resource_id
        no = self.attempts.get(tid, 0) + 1
        self.attempts[tid] = no
        res = self.fabric.resource(rid)
        fp = res.failure_prob if isinstance(res, QpuDevice) else 0.0
        cores, gpus = demand(task)
        att, end, fate = self.tm.start_attempt(pilot, tid, no, cores, gpus, dur, self.now, self.cfg.seed, fp)
        self.running[tid] = _Running(pilot, att, fate, end)
        self.state.reserve(tid, rid, self.now, INF if end is None else max(end, self.now + 1), cores, gpus)
        self._emit("task_start", tid, rid, no, self._task_detail(task))
        if end is not None:
            self._at(end, ("end", tid, no))
        if task.driver:
            self._start_driver(tid, task)

    # -------------------------------------------------------------- ending

    def _inputs(self, task: ExecutableTask) -> Dict[str, Any]:
        out = {}
        for name in task.needs:
            ids = self.wl.resolve(name)
            vals = [self.outputs.get(i) for i in ids]
            out[name] = vals[0] if len(vals) == 1 else vals
        return out

    def _execute(self, task: ExecutableTask) -> Any:
        if task.id in self.eval_owner:
            owner, _, req = self.eval_owner[task.id]
            return {"energy": evaluate(self.drivers[owner].cfg, req), "index": req.index}
        if task.kind == "quantum":
            res = run_circuit(task.circuit, task.shots, derive_key(self.cfg.seed, task.id))
            return {"counts": res.counts, "shots": res.shots}
        ctx = ActionContext(task.id, self.wl.base_dir, self.cfg.seed, self.artifacts)
        return ACTIONS[task.action](task.params, self._inputs(task), ctx)

    def _finish(self, tid: str, fate: str) -> _Running:
        run = self.running.pop(tid)
        self.tm.end_attempt(run.pilot, run.attempt, self.now, fate)
        return run

    def _on_end(self, tid: str, no: int) -> None:
        run = self.running.get(tid)
        if run is None or run.attempt.attempt_no != no:
            return
        task = self.tasks[tid]
        rid = run.pilot.resource_id
        if run.fate == "completed":
            try:
                out = self._execute(task)
            except (ActionError, ValueError, OSError) as e:
                self._finish(tid, "failed")
                self._terminal(tid, rid, no, f"action error: {e}")
                return
            self._finish(tid, "completed")
            self._complete(tid, rid, no, out)
            return
        self._finish(tid, run.fate)
        self.state.release(tid)
        self._retry_or_fail(tid, rid, no, run.fate)

    def _complete(self, tid: str, rid: str, no: int, out: Any) -> None:
        task = self.tasks[tid]
        self._emit("task_end", tid, rid, no, self._task_detail(task))
        self.outputs[tid] = out
        self.done[tid] = True
        newly = complete(self.state, tid, self.now)
        if self.mode is BindingMode.LATE:
            self.unbound.extend(t for t in newly if t not in self.decisions)
        # completions may have freed what an unsatisfiable binding needed
        for t in list(self.unsat_waiting):
            del self.unsat_waiting[t]
        if tid in self.eval_owner:
            self._eval_done(tid, out["energy"])

    def _retry_or_fail(self, tid: str, rid: str, no: int, fate: str) -> None:
        if fate == "pilot_expired":
            self.expiries[tid] = self.expiries.get(tid, 0) + 1
            if self.expiries[tid] > self.cfg.max_expiries:
                self._terminal(tid, rid, no, "pilot expired too often", reason="pilot_expired")
                return
            self._emit("task_fail", tid, rid, no, format_detail(reason="pilot_expired"))
            self._requeue(tid, self.now, rebind=True)
            return
        self.faults[tid] = self.faults.get(tid, 0) + 1
        if self.faults[tid] > self.cfg.retry.max_retries:
            self._terminal(tid, rid, no, "retries exhausted", reason="transient")
            return
        self._emit("task_fail", tid, rid, no, format_detail(reason="transient"))
        at = self.now + self.cfg.retry.backoff_us
        rebind = self.mode is BindingMode.LATE or tid in self.eval_owner
        self._requeue(tid, at, rebind)

    def _requeue(self, tid: str, at: int, rebind: bool) -> None:
        if tid in self.drivers:
            self._reset_driver(tid)
        if rebind:
            self.decisions.pop(tid, None)
            self.state.bound.pop(tid, None)
            if at > self.now:
                self._at(at, ("ready", tid))
            else:
                self.unbound.append(tid)
            return
        d = self.decisions[tid]
        task = self.tasks[tid]
        dur = max(d.planned_end_us - d.planned_start_us, 1)
        cores, gpus = demand(task)
        self.state.reserve(tid, d.resource_id, at, at + dur, cores, gpus)
        self.hold[tid] = at
        self.pending.append(tid)
        if at > self.now:
            self._at(at, ("wake",))

    def _terminal(self, tid: str, rid: Optional[str], no: Optional[int], message: str, reason: str = "error") -> None:
        self._emit("task_fail", tid, rid, no, format_detail(message, reason=reason, terminal=1))
        self.done[tid] = False
        self.state.release(tid)
        if self.outcome == "success":
            self.outcome = "failed"
            self.message = f"task {tid}: {message}"
        if tid in self.eval_owner:
            owner, gen, _ = self.eval_owner[tid]
            dr = self.drivers[owner]
            if gen == dr.gen and not dr.dead and owner in self.running:
                dr.dead = True
                orun = self.running[owner]
                self._finish(owner, "failed")
                self.state.release(owner)
                self._terminal(owner, orun.pilot.resource_id, orun.attempt.attempt_no,
                               f"evaluation {tid} failed", reason="eval_failed")

    # -------------------------------------------------------------- drivers

    def _start_driver(self, tid: str, task: ExecutableTask) -> None:
        params = task.params
        seed = params["seed"] if "seed" in params else derive_key(self.cfg.seed, tid)
        try:
            cfg = vqe_config_from_params(params, self._inputs(task), self.wl.base_dir, seed, self.cfg.mode)
        except (ValueError, OSError, KeyError, TypeError) as e:
            run = self.running[tid]
            self._finish(tid, "failed")
            self._terminal(tid, run.pilot.resource_id, run.attempt.attempt_no, f"bad VQE configuration: {e}")
            return
        prev = self.drivers.get(tid)
        dr = _Driver(cfg, vqe_program(cfg), int(params.get("step_cost_us", self.cfg.step_cost_us)),
                     params.get("eval_coupling", "loose"), gen=prev.gen + 1 if prev else 0)
        self.drivers[tid] = dr
        self._submit(tid, dr, next(dr.prog))

    def _reset_driver(self, tid: str) -> None:
        dr = self.drivers.get(tid)
        if dr is not None:
            dr.dead = True

    def _submit(self, tid: str, dr: _Driver, batch: List[EvalRequest]) -> None:
        dr.batch, dr.results, dr.waiting = batch, {}, {}
        terms = tuple(p for _, p in dr.cfg.hamiltonian.terms if set(p) != {"I"})
        prefix = f"{tid}.eval" if dr.gen == 0 else f"{tid}.r{dr.gen}.eval"
        for pos, req in enumerate(batch):
            eid = f"{prefix}{req.index}"
            et = ExecutableTask(eid, "quantum", qpu_qubits_min=dr.cfg.ansatz.num_qubits, shots=dr.cfg.shots,
                                circuit=dr.cfg.ansatz.instantiate(req.params), measure_terms=terms,
                                parent=tid)
            self.tasks[eid] = et
            self.eval_owner[eid] = (tid, dr.gen, req)
            self.state.add_task(et)
            if dr.coupling != "loose":
                self.state.constraints.append(
                    PlacementConstraint(frozenset((tid, eid)), self.wl.thresholds[dr.coupling], dr.coupling))
            dr.waiting[eid] = pos
            self.unbound.append(eid)

    def _eval_done(self, eid: str, energy: float) -> None:
        owner, gen, req = self.eval_owner[eid]
        dr = self.drivers[owner]
        if gen != dr.gen or dr.dead or eid not in dr.waiting:
            return
        dr.results[dr.waiting.pop(eid)] = energy
        if not dr.waiting:
            self._at(self.now + dr.step_cost_us, ("step", owner, gen))

    def _on_step(self, tid: str, gen: int) -> None:
        dr = self.drivers.get(tid)
        if dr is None or dr.gen != gen or dr.dead or tid not in self.running:
            return
        energies = [dr.results[i] for i in range(len(dr.batch))]
        try:
            batch = dr.prog.send(energies)
        except StopIteration as stop:
            run = self.running[tid]
            self._finish(tid, "completed")
            self._complete(tid, run.pilot.resource_id, run.attempt.attempt_no, stop.value.to_dict())
            return
        self._submit(tid, dr, batch)

    # --------------------------------------------------------------- pilots

    def _on_expire(self, pid: str) -> None:
        pilot = next(p for p in self.tm.pilots if p.id == pid)
        if not pilot.active:
            return
        for tid, run in list(self.running.items()):
            if run.pilot is pilot and run.end is None:
                run.fate = "pilot_expired"
                self._finish(tid, "pilot_expired")
                self.state.release(tid)
                self._retry_or_fail(tid, pilot.resource_id, run.attempt.attempt_no, "pilot_expired")
        if pilot.running:
            # attempts ending exactly now are still queued behind this event
            self.q.schedule(0, ("expire", pid))
            return
        self.tm.release(pilot, self.now)
        self._emit("pilot_release", None, pilot.resource_id, None,
                   format_detail(pilot=pilot.id, busy_us=pilot.busy_us, idle_us=pilot.idle_us))

    # ----------------------------------------------------------------- loop

    def run(self) -> RunResult:
        for rid, until in sorted(self.blocked_until.items()):
            self.fabric.resource(rid)
            cap = self.state.capacity(rid)
            self.state.reserve(f"background@{rid}", rid, 0, until, cap[0], cap[1])
            self._at(until, ("wake",))
        if self.mode is BindingMode.EARLY:
            # the plan sees an idle fabric: background load is not known to it
            try:
                self.plan = plan_early(self.wl, self.fabric, self.est)
            except UnsatisfiableConstraint as e:
                self._unsatisfiable(e)
                return self._result()
            for d in self.plan:
                self._bind(d, "early")
        else:
            self.unbound.extend(self.state.ready)
        while not self.halted:
            while not self.halted and (self._bind_ready() | self._start_ready()):
                pass
            if self.halted:
                break
            ev = None if self._idle() else self.q.advance()
            if ev is None:
                if self.unsat_waiting:
                    tid = sorted(self.unsat_waiting)[0]
                    self._unsatisfiable(self.unsat_waiting[tid])
                break
            _, payload = ev
            kind = payload[0]
            if kind != "expire":
                self._work_events -= 1
            if kind == "end":
                self._on_end(payload[1], payload[2])
            elif kind == "expire":
                self._on_expire(payload[1])
            elif kind == "step":
                self._on_step(payload[1], payload[2])
            elif kind == "ready":
                self.unbound.append(payload[1])
        if not self.halted and self.outcome == "success":
            stuck = sorted(t for t in self.tasks if t not in self.done)
            for tid in stuck:
                self._emit("task_fail", tid, None, None, format_detail("never became runnable", reason="stalled",
                                                                        terminal=1))
            if stuck:
                self.outcome = "failed"
                self.message = f"{len(stuck)} task(s) never ran: {', '.join(stuck[:5])}"
        for pilot in self.tm.pilots:
            if pilot.active and not pilot.running:
                self.tm.release(pilot, self.now)
                self._emit("pilot_release", None, pilot.resource_id, None,
                           format_detail(pilot=pilot.id, busy_us=pilot.busy_us, idle_us=pilot.idle_us))
        return self._result()

    def _result(self) -> RunResult:
        return RunResult(self.outcome, self.records, fold(self.records), self.outputs, self.plan,
                         self.decisions, self.artifacts, self.message)


def execute(wl: Workload, fabric: Fabric, cfg: RunConfig = RunConfig()) -> RunResult:
    return Runtime(wl, fabric, cfg).run()
