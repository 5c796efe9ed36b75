import pytest

from qhpc.fabric import ClassicalNode, Fabric, QpuDevice
from qhpc.runtime import RunConfig, execute
from qhpc.taskmgr import (
    AttemptState, CapacityExceeded, PilotConflict, PilotExpired, PilotState, RetryPolicy, TaskAttempt, TaskManager,
    TaskManagerError, attempt_fault, release,
)
from qhpc.trace import parse_detail
from qhpc.workflow import Edge, TaskSpec, WorkflowSpec, compile

F = Fabric((ClassicalNode("n1", 4),), (QpuDevice("q1", 5), QpuDevice("q2", 5, failure_prob=1.0)))


def test_acquire_qpu_pilot_and_expiry_hook():
    seen = []
    tm = TaskManager(F, on_expiry=seen.append)
    p = tm.acquire_pilot("q1", 1_000_000, 0)
    assert p.active and p.expires_at == 1_000_000 and (p.cores, p.gpus) == (1, 0)
    assert seen == [p]
    assert tm.active_pilot("q1", 10) is p
    assert tm.active_pilot("q1", 1_000_000) is None


def test_overlapping_qpu_pilot_rejected():
    tm = TaskManager(F)
    tm.acquire_pilot("q1", 1000, 0)
    with pytest.raises(PilotConflict):
        tm.acquire_pilot("q1", 1000, 500)
    tm.acquire_pilot("q1", 1000, 1000)  # back to back is fine


def test_unknown_resource():
    with pytest.raises(KeyError):
        TaskManager(F).acquire_pilot("nope", 10, 0)


def test_node_pilot_capacity():
    tm = TaskManager(F)
    p = tm.acquire_pilot("n1", 1000, 0)
    assert p.cores == 4
    for i in range(4):
        tm.start_attempt(p, f"t{i}", 1, 1, 0, 10, 0)
    with pytest.raises(CapacityExceeded):
        tm.start_attempt(p, "t4", 1, 1, 0, 10, 0)


def test_forced_failure_three_attempts():
    tm = TaskManager(F)
    p = tm.acquire_pilot("q2", 10**9, 0)
    atts = tm.submit(p, "t", 100, 0, failure_prob=1.0, policy=RetryPolicy(2, 5))
    assert [a.attempt_no for a in atts] == [1, 2, 3]
    assert all(a.state is AttemptState.FAILED for a in atts)
    # failures strike inside the window and retries wait for the backoff
    for prev, nxt in zip(atts, atts[1:]):
        assert nxt.started_at == prev.ended_at + 5
    for a in atts:
        assert a.started_at <= a.ended_at <= a.started_at + 100


def test_no_failure_single_attempt():
    tm = TaskManager(F)
    p = tm.acquire_pilot("q1", 10**9, 0)
    atts = tm.submit(p, "t", 100, 7)
    assert len(atts) == 1 and atts[0].state is AttemptState.COMPLETED
    assert (atts[0].started_at, atts[0].ended_at) == (7, 107)


def test_pilot_expiring_mid_task():
    tm = TaskManager(F)
    p = tm.acquire_pilot("q1", 50, 0)
    with pytest.raises(PilotExpired) as e:
        tm.submit(p, "t", 100, 0)
    att = e.value.attempts[-1]
    assert att.failure_reason == "pilot_expired" and att.ended_at == 50


def test_release_rules():
    tm = TaskManager(F)
    p = tm.acquire_pilot("n1", 1000, 0)
    att, end, fate = tm.start_attempt(p, "t", 1, 1, 0, 100, 0)
    with pytest.raises(TaskManagerError, match="still runs t"):
        release(p, 50)
    tm.end_attempt(p, att, end, fate)
    release(p, p.expires_at)
    assert p.state is PilotState.RELEASED and p.released_at == 1000
    assert p.busy_us == 100 and p.idle_us == 900
    with pytest.raises(TaskManagerError):
        release(p, 1000)


def test_attempt_state_machine():
    a = TaskAttempt("t", 1)
    with pytest.raises(TaskManagerError):
        a.advance(AttemptState.RUNNING)
    a.advance(AttemptState.STAGED)
    a.advance(AttemptState.RUNNING, 3)
    assert not a.terminal and a.ended_at is None
    a.advance(AttemptState.COMPLETED, 9)
    assert a.terminal and a.ended_at == 9
    with pytest.raises(TaskManagerError):
        a.advance(AttemptState.FAILED, 10)


def test_fault_stream_is_reproducible():
    draws = [attempt_fault(3, "t", k, 0.5, 1000) for k in range(1, 50)]
    assert draws == [attempt_fault(3, "t", k, 0.5, 1000) for k in range(1, 50)]
    assert any(d is None for d in draws) and any(d is not None for d in draws)
    assert attempt_fault(3, "t", 1, 0.0, 1000) is None
    assert all(0 <= attempt_fault(s, "t", 1, 1.0, 1000) < 1000 for s in range(20))


def test_retry_policy_validation():
    assert RetryPolicy(0).max_attempts == 1
    with pytest.raises(ValueError):
        RetryPolicy(-1)


# ---------------------------------------------------------- through runtime


def _two_step():
    return compile(WorkflowSpec("w", (TaskSpec("a", "classical", compute_cost_us=3000, action="noop"),
                                      TaskSpec("b", "classical", compute_cost_us=3000, action="noop")),
                                (Edge("a", "b"),)))


@pytest.mark.parametrize("binding", ["early", "late"])
def test_runtime_rebinds_after_expiry(binding):
    f = Fabric((ClassicalNode("n1", 1),))
    r = execute(_two_step(), f, RunConfig(binding=binding, pilot_duration_us=5000))
    assert r.outcome == "success" and r.metrics.makespan_us == 8000
    fails = [x for x in r.records if x.kind == "task_fail"]
    assert [(x.task_id, x.at_us, parse_detail(x.detail)["reason"]) for x in fails] == [("b", 5000, "pilot_expired")]
    releases = [(x.at_us, parse_detail(x.detail)["pilot"]) for x in r.records if x.kind == "pilot_release"]
    assert releases == [(5000, "pilot-n1-1"), (8000, "pilot-n1-2")]


def test_runtime_intervals_inside_pilot_windows():
    f = Fabric((ClassicalNode("n1", 1),))
    r = execute(_two_step(), f, RunConfig(pilot_duration_us=5000))
    windows = {}
    for x in r.records:
        if x.kind == "pilot_acquire":
            d = parse_detail(x.detail)
            windows.setdefault(x.resource_id, []).append((x.at_us, int(d["expires_at"])))
    starts = {}
    for x in r.records:
        if x.kind == "task_start":
            starts[(x.task_id, x.attempt)] = x.at_us
        elif x.kind in ("task_end", "task_fail") and (x.task_id, x.attempt) in starts:
            s = starts[(x.task_id, x.attempt)]
            assert any(a <= s and x.at_us <= b for a, b in windows[x.resource_id])


def test_runtime_task_longer_than_any_pilot_fails():
    f = Fabric((ClassicalNode("n1", 1),))
    r = execute(_two_step(), f, RunConfig(pilot_duration_us=2000))
    assert r.outcome == "failed" and r.exit_code == 3
    assert "exceeds the pilot duration" in r.message


def test_runtime_idle_pilot_released_at_expiry():
    # n1 goes idle after a; its pilot ends at expiry while n2 keeps working
    wl = compile(WorkflowSpec("w", (
        TaskSpec("a", "classical", compute_cost_us=100, action="noop"),
        TaskSpec("b", "classical", compute_cost_us=4000, cores=2, action="noop"),
        TaskSpec("c", "classical", compute_cost_us=4000, cores=2, action="noop")),
        (Edge("a", "b"), Edge("b", "c"))))
    f = Fabric((ClassicalNode("n1", 1), ClassicalNode("n2", 2)))
    r = execute(wl, f, RunConfig(pilot_duration_us=5000))
    assert r.outcome == "success"
    rel = [(x.resource_id, x.at_us) for x in r.records if x.kind == "pilot_release"]
    assert ("n1", 5000) in rel
    assert rel[-1] == ("n2", r.metrics.makespan_us)


@pytest.mark.parametrize("binding", ["early", "late"])
def test_runtime_retries_exhaust(binding, fabric, data_path):
    from qhpc.workflow import parse_workflow
    wl = compile(parse_workflow(data_path("workflow_dynamic.json")))
    r = execute(wl, fabric("fabric_flaky.json"), RunConfig(binding=binding, retry=RetryPolicy(2)))
    assert r.outcome == "failed"
    starts = [x for x in r.records if x.kind == "task_start" and x.task_id == "circuit"]
    assert len(starts) == 3
    last = [x for x in r.records if x.kind == "task_fail" and x.task_id == "circuit"][-1]
    assert parse_detail(last.detail).get("terminal") == "1"
