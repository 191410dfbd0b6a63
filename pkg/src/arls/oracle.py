"""Depth-first branch and bound for exact makespans of small instances.

Branching follows Giffler-Thompson active-schedule generation: at each node
only the ready operations that conflict on the machine of the earliest
completing ready operation are expanded. Every optimal makespan is attained by
some active schedule, so the search is exact when it runs to completion.
"""

from __future__ import annotations

from dataclasses import dataclass

from .heuristics import RULES, rollout
from .instance import Instance

DEFAULT_NODE_BUDGET = 200_000


@dataclass(frozen=True)
class OracleResult:
    makespan: int
    proven: bool
    sequence: tuple[int, ...]
    nodes: int


class _Search:
    def __init__(self, inst: Instance, budget: int):
        self.J, self.M = inst.num_jobs, inst.num_machines
        self.mach = inst.machine_matrix.tolist()
        self.pt = inst.ptime_matrix.tolist()
        # tail[j][t]: work left in job j after position t
        self.tail = [
            [sum(row[t + 1 :]) for t in range(self.M)] for row in self.pt
        ]
        self.budget = budget
        self.nodes = 0
        self.exhausted = False
        self.best = 0
        self.best_seq: list[int] = []

    def lower_bound(self, nxt, mfree, jfree) -> int:
        J, M, pt, mach, tail = self.J, self.M, self.pt, self.mach, self.tail
        lb = 0
        head_min = [None] * M
        tail_min = [None] * M
        load = [0] * M
        for j in range(J):
            t0 = nxt[j]
            if t0 == M:
                continue
            lb = max(lb, jfree[j] + pt[j][t0] + tail[j][t0])
            head = jfree[j]
            for t in range(t0, M):
                m = mach[j][t]
                p = pt[j][t]
                load[m] += p
                if head_min[m] is None or head < head_min[m]:
                    head_min[m] = head
                if tail_min[m] is None or tail[j][t] < tail_min[m]:
                    tail_min[m] = tail[j][t]
                head += p
        for m in range(M):
            if load[m]:
                lb = max(lb, max(mfree[m], head_min[m]) + load[m] + tail_min[m])
        return lb

    def run(self, nxt, mfree, jfree, seq, cmax) -> None:
        if self.exhausted:
            return
        self.nodes += 1
        if self.nodes > self.budget:
            self.exhausted = True
            return
        J, M, pt, mach = self.J, self.M, self.pt, self.mach
        ready = [j for j in range(J) if nxt[j] < M]
        if not ready:
            if cmax < self.best:
                self.best = cmax
                self.best_seq = list(seq)
            return
        if max(cmax, self.lower_bound(nxt, mfree, jfree)) >= self.best:
            return
        est = {}
        ect_min, m_star = None, None
        for j in ready:
            m = mach[j][nxt[j]]
            s = max(mfree[m], jfree[j])
            est[j] = s
            c = s + pt[j][nxt[j]]
            if ect_min is None or c < ect_min:
                ect_min, m_star = c, m
        conflict = [j for j in ready if mach[j][nxt[j]] == m_star and est[j] < ect_min]
        conflict.sort(key=lambda j: (est[j], pt[j][nxt[j]], j))
        for j in conflict:
            t = nxt[j]
            m = m_star
            end = est[j] + pt[j][t]
            old_m, old_j = mfree[m], jfree[j]
            mfree[m] = end
            jfree[j] = end
            nxt[j] = t + 1
            seq.append(j * M + t)
            self.run(nxt, mfree, jfree, seq, max(cmax, end))
            seq.pop()
            nxt[j] = t
            mfree[m], jfree[j] = old_m, old_j
            if self.exhausted:
                return


def oracle_optimal(inst: Instance, node_budget: int = DEFAULT_NODE_BUDGET) -> OracleResult:
    """Exact optimum when the search finishes within ``node_budget`` nodes,
    otherwise the best schedule found with ``proven=False``."""
    search = _Search(inst, node_budget)
    # seed the incumbent with the dispatching rules
    for non_delay in (True, False):
        for rule in RULES:
            res = rollout(rule, inst, non_delay)
            if search.best == 0 or res.makespan < search.best:
                search.best = res.makespan
                search.best_seq = _sequence_of(inst, res)
    if search.best > inst.lower_bound():
        search.run(
            [0] * inst.num_jobs,
            [0] * inst.num_machines,
            [0] * inst.num_jobs,
            [],
            0,
        )
    return OracleResult(
        search.best, not search.exhausted, tuple(search.best_seq), search.nodes
    )


def _sequence_of(inst: Instance, result) -> list[int]:
    """Operation ids ordered by start time; replaying them reproduces ``result``."""
    M = inst.num_machines
    keyed = sorted((op.start, op.job, op.order) for op in result.ops)
    return [job * M + order for _, job, order in keyed]
