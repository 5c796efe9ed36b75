"""Task layer: pilots and task attempts.

A pilot is a time-boxed allocation of one resource. QPU pilots are
whole-device and exclusive; node pilots carry the node's cores and gpus as
capacity. Attempts run inside a pilot and end completed, failed (transient
fault, sampled per attempt) or failed with ``pilot_expired`` when the pilot's
window closes first. Expiry does not count against the retry budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from ._rng import derive_rng
from .fabric import Fabric, QpuDevice


class TaskManagerError(RuntimeError):
    pass


class CapacityExceeded(TaskManagerError):
    pass


class PilotConflict(TaskManagerError):
    pass


class PilotExpired(TaskManagerError):
    def __init__(self, task_id: str, attempts: List["TaskAttempt"]):
        self.task_id = task_id
        self.attempts = attempts
        super().__init__(f"pilot expired while running {task_id}")


class PilotState(str, Enum):
    REQUESTED = "requested"
    ACTIVE = "active"
    RELEASED = "released"


class AttemptState(str, Enum):
    PENDING = "pending"
    STAGED = "staged"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


_NEXT = {
    AttemptState.PENDING: {AttemptState.STAGED},
    AttemptState.STAGED: {AttemptState.RUNNING},
    AttemptState.RUNNING: {AttemptState.COMPLETED, AttemptState.FAILED},
    AttemptState.COMPLETED: set(),
    AttemptState.FAILED: set(),
}


@dataclass
class TaskAttempt:
    task_id: str
    attempt_no: int
    resource_id: Optional[str] = None
    state: AttemptState = AttemptState.PENDING
    started_at: Optional[int] = None
    ended_at: Optional[int] = None
    failure_reason: Optional[str] = None

    def advance(self, new: AttemptState, at: Optional[int] = None, reason: Optional[str] = None) -> None:
        if new not in _NEXT[self.state]:
            raise TaskManagerError(f"{self.task_id}#{self.attempt_no}: illegal transition {self.state.value} -> {new.value}")
        self.state = new
        if new is AttemptState.RUNNING:
            self.started_at = at
        elif new in (AttemptState.COMPLETED, AttemptState.FAILED):
            self.ended_at = at
            self.failure_reason = reason

    @property
    def terminal(self) -> bool:
        return self.state in (AttemptState.COMPLETED, AttemptState.FAILED)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_us: int = 0

    def __post_init__(self) -> None:
        if self.max_retries < 0 or self.backoff_us < 0:
            raise ValueError("max_retries and backoff_us must be non-negative")

    @property
    def max_attempts(self) -> int:
        return self.max_retries + 1


@dataclass
class Pilot:
    id: str
    resource_id: str
    cores: int
    gpus: int
    starts_at: int
    expires_at: int
    state: PilotState = PilotState.REQUESTED
    running: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    busy_us: int = 0
    released_at: Optional[int] = None
    idle_us: Optional[int] = None
    _since: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.expires_at <= self.starts_at:
            raise ValueError("pilot must expire after it starts")

    @property
    def active(self) -> bool:
        return self.state is PilotState.ACTIVE

    def fits(self, cores: int, gpus: int) -> bool:
        used_c = sum(c for c, _ in self.running.values())
        used_g = sum(g for _, g in self.running.values())
        return used_c + cores <= self.cores and used_g + gpus <= self.gpus

    def occupy(self, task_id: str, cores: int, gpus: int, at: int) -> None:
        if not self.active:
            raise TaskManagerError(f"pilot {self.id} is {self.state.value}")
        if not self.starts_at <= at < self.expires_at:
            raise TaskManagerError(f"pilot {self.id} window [{self.starts_at}, {self.expires_at}) excludes {at}")
        if not self.fits(cores, gpus):
            raise CapacityExceeded(f"{task_id} needs {cores} cores/{gpus} gpus; pilot {self.id} is full")
        self.running[task_id] = (cores, gpus)
        self._since[task_id] = at

    def vacate(self, task_id: str, at: int) -> None:
        self.running.pop(task_id)
        self.busy_us += at - self._since.pop(task_id)


def attempt_fault(seed: int, task_id: str, attempt_no: int, failure_prob: float, duration: int) -> Optional[int]:
    """Offset into the attempt at which a transient fault strikes, or ``None``."""
    if failure_prob <= 0.0:
        return None
    rng = derive_rng(seed, task_id, attempt_no)
    hit, where = rng.random(), rng.random()
    if hit >= failure_prob:
        return None
    return int(where * duration)


class TaskManager:
    """Pilot registry for one run. ``on_expiry`` (if given) is called with each
    new pilot so the caller can schedule its expiry event."""

    def __init__(self, fabric: Fabric, on_expiry=None):
        self.fabric = fabric
        self.pilots: List[Pilot] = []
        self.on_expiry = on_expiry
        self._count: Dict[str, int] = {}

    def acquire_pilot(self, resource_id: str, duration_us: int, at: int) -> Pilot:
        res = self.fabric.resource(resource_id)
        end = at + duration_us
        if isinstance(res, QpuDevice):
            for p in self.pilots:
                if p.resource_id == resource_id and p.state is not PilotState.RELEASED and p.starts_at < end and at < p.expires_at:
                    raise PilotConflict(f"{resource_id} already piloted by {p.id} over [{p.starts_at}, {p.expires_at})")
            cores, gpus = 1, 0
        else:
            cores, gpus = res.cores, res.gpus
        k = self._count.get(resource_id, 0) + 1
        self._count[resource_id] = k
        pilot = Pilot(f"pilot-{resource_id}-{k}", resource_id, cores, gpus, at, end)
        pilot.state = PilotState.ACTIVE
        self.pilots.append(pilot)
        if self.on_expiry is not None:
            self.on_expiry(pilot)
        return pilot

    def active_pilot(self, resource_id: str, at: int) -> Optional[Pilot]:
        for p in self.pilots:
            if p.resource_id == resource_id and p.active and p.starts_at <= at < p.expires_at:
                return p
        return None

    def release(self, pilot: Pilot, at: int) -> Pilot:
        return release(pilot, at)

    def start_attempt(self, pilot: Pilot, task_id: str, attempt_no: int, cores: int, gpus: int,
                      duration: Optional[int], at: int, seed: int = 0,
                      failure_prob: float = 0.0) -> Tuple[TaskAttempt, Optional[int], str]:
        """Start an attempt; returns it with its scheduled end time and fate
        (``completed``, ``failed`` or ``pilot_expired``). ``duration=None``
        means open-ended: only pilot expiry can end it from here."""
        att = TaskAttempt(task_id, attempt_no, pilot.resource_id)
        att.advance(AttemptState.STAGED)
        pilot.occupy(task_id, cores, gpus, at)
        att.advance(AttemptState.RUNNING, at)
        if duration is None:
            return att, None, "completed"
        fault = attempt_fault(seed, task_id, attempt_no, failure_prob, duration)
        end, fate = at + duration, "completed"
        if fault is not None:
            end, fate = at + fault, "failed"
        if end > pilot.expires_at:
            end, fate = pilot.expires_at, "pilot_expired"
        return att, end, fate

    def end_attempt(self, pilot: Pilot, att: TaskAttempt, at: int, fate: str) -> TaskAttempt:
        pilot.vacate(att.task_id, at)
        if fate == "completed":
            att.advance(AttemptState.COMPLETED, at)
        else:
            att.advance(AttemptState.FAILED, at, fate)
        return att

    def submit(self, pilot: Pilot, task_id: str, duration: int, at: int, *, cores: int = 1, gpus: int = 0,
               seed: int = 0, failure_prob: float = 0.0, policy: RetryPolicy = RetryPolicy()) -> List[TaskAttempt]:
        """Run a task to its end on one pilot, retrying after backoff.

        Raises :class:`PilotExpired` (carrying the attempts so far) if the
        pilot closes before an attempt can finish.
        """
        attempts: List[TaskAttempt] = []
        now = at
        for no in range(1, policy.max_attempts + 1):
            att, end, fate = self.start_attempt(pilot, task_id, no, cores, gpus, duration, now, seed, failure_prob)
            self.end_attempt(pilot, att, end, fate)
            attempts.append(att)
            if fate == "pilot_expired":
                raise PilotExpired(task_id, attempts)
            if fate == "completed":
                return attempts
            now = end + policy.backoff_us
            if now >= pilot.expires_at and no < policy.max_attempts:
                raise PilotExpired(task_id, attempts)
        return attempts


def release(pilot: Pilot, at: int) -> Pilot:
    if not pilot.active:
        raise TaskManagerError(f"pilot {pilot.id} is not active")
    if pilot.running:
        raise TaskManagerError(f"pilot {pilot.id} still runs {', '.join(sorted(pilot.running))}")
    pilot.state = PilotState.RELEASED
    pilot.released_at = at
    pilot.idle_us = max(at - pilot.starts_at - pilot.busy_us, 0)
    return pilot
