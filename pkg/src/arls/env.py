"""Semi-active schedule builder.

An operation sequence that respects job order is decoded into a schedule by
starting each chosen operation as early as its job and machine allow.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .instance import Instance


class IllegalActionError(RuntimeError):
    """An operation was chosen that is not currently ready."""


class StateError(RuntimeError):
    """A query that needs a terminal (or non-terminal) state got the other kind."""


class ScheduleState:
    """Partial schedule of one instance.

    ``next_order[j]`` is the sequence position of job ``j``'s first unassigned
    operation, so the ready set is ``{j*M + next_order[j]}`` over unfinished jobs.
    """

    __slots__ = (
        "inst",
        "next_order",
        "machine_free",
        "job_free",
        "start_time",
        "end_time",
        "sequence",
        "allow_noop",
    )

    def __init__(self, inst: Instance, allow_noop: bool = False):
        self.inst = inst
        self.next_order = np.zeros(inst.num_jobs, dtype=np.int64)
        self.machine_free = np.zeros(inst.num_machines, dtype=np.int64)
        self.job_free = np.zeros(inst.num_jobs, dtype=np.int64)
        self.start_time = np.full(inst.num_ops, -1, dtype=np.int64)
        self.end_time = np.full(inst.num_ops, -1, dtype=np.int64)
        self.sequence: list[int] = []
        self.allow_noop = allow_noop

    def copy(self) -> "ScheduleState":
        new = ScheduleState.__new__(ScheduleState)
        new.inst = self.inst
        new.next_order = self.next_order.copy()
        new.machine_free = self.machine_free.copy()
        new.job_free = self.job_free.copy()
        new.start_time = self.start_time.copy()
        new.end_time = self.end_time.copy()
        new.sequence = list(self.sequence)
        new.allow_noop = self.allow_noop
        return new

    @property
    def t(self) -> int:
        """Number of operations assigned so far."""
        return int(self.next_order.sum())

    @property
    def assigned(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.end_time >= 0).tolist())

    def ready_jobs(self) -> np.ndarray:
        return np.flatnonzero(self.next_order < self.inst.num_machines)

    @property
    def ready(self) -> frozenset[int]:
        return frozenset(self.ready_ops().tolist())

    def ready_ops(self) -> np.ndarray:
        jobs = self.ready_jobs()
        return jobs * self.inst.num_machines + self.next_order[jobs]

    def assigned_mask(self) -> np.ndarray:
        """Boolean mask over the J*M+1 model slots; the no-op slot is never assigned."""
        mask = np.zeros(self.inst.num_ops + 1, dtype=bool)
        mask[:-1] = self.end_time >= 0
        return mask

    def ready_mask(self) -> np.ndarray:
        mask = np.zeros(self.inst.num_ops + 1, dtype=bool)
        mask[self.ready_ops()] = True
        if self.allow_noop and self._noop_target() is not None:
            mask[-1] = True
        return mask

    def is_terminal(self) -> bool:
        return bool((self.next_order == self.inst.num_machines).all())

    def makespan(self) -> int:
        if not self.is_terminal():
            raise StateError("makespan requested before every operation was assigned")
        return int(self.end_time.max())

    def _noop_target(self) -> tuple[int, int] | None:
        """(machine, new free time) for an idle insertion, or None if idling cannot
        advance any clock. The target is the earliest-free machine that a ready
        operation is waiting for; it is pushed to the next event time."""
        inst = self.inst
        jobs = self.ready_jobs()
        if len(jobs) == 0:
            return None
        machines = np.unique(inst.machine_matrix[jobs, self.next_order[jobs]])
        m = int(machines[np.argmin(self.machine_free[machines])])
        now = self.machine_free[m]
        events = np.concatenate([self.machine_free, self.job_free])
        later = events[events > now]
        if len(later) == 0:
            return None
        return m, int(later.min())

    def apply(self, op_id: int) -> "ScheduleState":
        """Assign ``op_id`` in place and return self."""
        inst = self.inst
        M = inst.num_machines
        if op_id == inst.noop_id:
            target = self._noop_target() if self.allow_noop else None
            if target is None:
                raise IllegalActionError("no-op is disabled or would not advance time")
            m, when = target
            self.machine_free[m] = when
            return self
        if not 0 <= op_id < inst.num_ops:
            raise IllegalActionError(f"operation id {op_id} out of range")
        j, order = divmod(int(op_id), M)
        if self.next_order[j] != order:
            raise IllegalActionError(
                f"operation {op_id} (job {j}, order {order}) is not ready; "
                f"job {j} is at position {self.next_order[j]}"
            )
        m = inst.machine_matrix[j, order]
        start = max(self.machine_free[m], self.job_free[j])
        end = start + inst.ptime_matrix[j, order]
        self.start_time[op_id] = start
        self.end_time[op_id] = end
        self.machine_free[m] = end
        self.job_free[j] = end
        self.next_order[j] += 1
        self.sequence.append(int(op_id))
        return self


def init_state(inst: Instance, allow_noop: bool = False) -> ScheduleState:
    return ScheduleState(inst, allow_noop)


def step(state: ScheduleState, op_id: int) -> ScheduleState:
    """Return a new state with ``op_id`` assigned; ``state`` is left untouched."""
    return state.copy().apply(op_id)


def is_terminal(state: ScheduleState) -> bool:
    return state.is_terminal()


def makespan(state: ScheduleState) -> int:
    return state.makespan()


@dataclass(frozen=True)
class ScheduledOp:
    job: int
    order: int
    machine: int
    start: int
    end: int


@dataclass(frozen=True)
class ScheduleResult:
    ops: tuple[ScheduledOp, ...]

    @property
    def makespan(self) -> int:
        return max((op.end for op in self.ops), default=0)

    @classmethod
    def from_state(cls, state: ScheduleState) -> "ScheduleResult":
        if not state.is_terminal():
            raise StateError("cannot build a schedule result from a partial state")
        inst = state.inst
        return cls(
            tuple(
                ScheduledOp(
                    op.job,
                    op.order,
                    op.machine,
                    int(state.start_time[n]),
                    int(state.end_time[n]),
                )
                for n, op in enumerate(inst.ops)
            )
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["job", "order", "machine", "start", "end"])
        for op in self.ops:
            writer.writerow([op.job, op.order, op.machine, op.start, op.end])
        buf.write(f"# makespan={self.makespan}\n")
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source: str | Path | TextIO) -> "ScheduleResult":
        if isinstance(source, Path):
            source = source.read_text(encoding="utf-8")
        if isinstance(source, str):
            source = io.StringIO(source)
        lines = [line for line in source if line.strip() and not line.startswith("#")]
        reader = csv.DictReader(lines)
        return cls(
            tuple(
                ScheduledOp(*(int(row[k]) for k in ("job", "order", "machine", "start", "end")))
                for row in reader
            )
        )


def run_sequence(inst: Instance, sequence: Iterable[int]) -> ScheduleState:
    state = init_state(inst)
    for op_id in sequence:
        state.apply(op_id)
    return state


def validate_schedule(inst: Instance, result: ScheduleResult) -> list[str]:
    """List every precedence, machine-exclusivity, duration, or coverage violation."""
    violations: list[str] = []
    by_key: dict[tuple[int, int], ScheduledOp] = {}
    for op in result.ops:
        key = (op.job, op.order)
        if key in by_key:
            violations.append(f"coverage: operation (job {op.job}, order {op.order}) listed twice")
            continue
        by_key[key] = op
    for spec in inst.ops:
        op = by_key.get((spec.job, spec.order))
        if op is None:
            violations.append(f"coverage: operation (job {spec.job}, order {spec.order}) missing")
            continue
        if op.machine != spec.machine:
            violations.append(
                f"machine: job {spec.job} order {spec.order} on machine {op.machine}, "
                f"expected {spec.machine}"
            )
        if op.end - op.start != spec.ptime:
            violations.append(
                f"duration: job {spec.job} order {spec.order} runs {op.end - op.start}, "
                f"expected {spec.ptime}"
            )
        if op.start < 0:
            violations.append(f"duration: job {spec.job} order {spec.order} starts before 0")
        if spec.order > 0:
            prev = by_key.get((spec.job, spec.order - 1))
            if prev is not None and op.start < prev.end:
                violations.append(
                    f"precedence: job {spec.job} order {spec.order} starts at {op.start} "
                    f"before order {spec.order - 1} ends at {prev.end}"
                )
    per_machine: dict[int, list[ScheduledOp]] = {}
    for op in by_key.values():
        per_machine.setdefault(op.machine, []).append(op)
    for m, ops in sorted(per_machine.items()):
        ops.sort(key=lambda o: (o.start, o.end))
        a = ops[0]  # the earlier op that finishes last
        for b in ops[1:]:
            if b.start < a.end:
                violations.append(
                    f"exclusivity: machine {m} runs job {a.job} and job {b.job} "
                    f"concurrently in [{b.start}, {min(a.end, b.end)})"
                )
            if b.end > a.end:
                a = b
    return violations
