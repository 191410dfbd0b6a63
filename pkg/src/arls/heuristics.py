"""Priority dispatching rules (FIFO, SPT, LPT, MWKR) over the semi-active builder.

By default rules are non-delay: only ready operations that can start at the
earliest possible time compete, and the rule ranks those. With
``non_delay=False`` the rule ranks every ready operation.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .env import ScheduleResult, ScheduleState, StateError, init_state
from .instance import Instance


class DispatchRule(str, Enum):
    FIFO = "fifo"
    SPT = "spt"
    LPT = "lpt"
    MWKR = "mwkr"


RULES = tuple(DispatchRule)


def _priority(rule: DispatchRule, inst: Instance, state: ScheduleState, jobs: np.ndarray):
    """Lower is better; ties fall to the lowest flat id (jobs are ascending)."""
    order = state.next_order[jobs]
    ptime = inst.ptime_matrix[jobs, order]
    if rule is DispatchRule.FIFO:
        # the job that has been waiting longest, i.e. became free earliest
        return state.job_free[jobs]
    if rule is DispatchRule.SPT:
        return ptime
    if rule is DispatchRule.LPT:
        return -ptime
    if rule is DispatchRule.MWKR:
        remaining = np.array(
            [inst.ptime_matrix[j, o:].sum() for j, o in zip(jobs, order)], dtype=np.int64
        )
        return -remaining
    raise ValueError(f"unknown dispatch rule {rule!r}")


def dispatch(
    rule: DispatchRule | str,
    inst: Instance,
    state: ScheduleState,
    non_delay: bool = True,
) -> int:
    """Flat id of the ready operation the rule picks next."""
    rule = DispatchRule(rule)
    if state.is_terminal():
        raise StateError("cannot dispatch from a terminal state")
    jobs = state.ready_jobs()
    if non_delay:
        order = state.next_order[jobs]
        machines = inst.machine_matrix[jobs, order]
        est = np.maximum(state.machine_free[machines], state.job_free[jobs])
        jobs = jobs[est == est.min()]
    # ready op ids increase with job index, so argmin's first hit is the lowest id
    best = int(np.argmin(_priority(rule, inst, state, jobs)))
    j = int(jobs[best])
    return j * inst.num_machines + int(state.next_order[j])


def rollout(rule: DispatchRule | str, inst: Instance, non_delay: bool = True) -> ScheduleResult:
    rule = DispatchRule(rule)
    state = init_state(inst)
    while not state.is_terminal():
        state.apply(dispatch(rule, inst, state, non_delay))
    return ScheduleResult.from_state(state)


def best_heuristic(inst: Instance, non_delay: bool = True) -> tuple[DispatchRule, int]:
    """(rule, makespan) of the best rule on ``inst``; ties go to the earlier rule in RULES."""
    results = [(rollout(rule, inst, non_delay).makespan, i) for i, rule in enumerate(RULES)]
    span, i = min(results)
    return RULES[i], span
