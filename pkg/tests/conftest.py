from __future__ import annotations

import itertools
from pathlib import Path

import pytest

from arls.instance import Instance, parse_instance

DATA = Path(__file__).parent / "data"

TINY_TEXT = "2 2\n0 3 1 2\n1 4 0 1\n"


@pytest.fixture
def tiny() -> Instance:
    """J0: (m0, 3) then (m1, 2); J1: (m1, 4) then (m0, 1)."""
    return parse_instance(TINY_TEXT, name="tiny")


@pytest.fixture
def ft06() -> Instance:
    return parse_instance((DATA / "ft06.txt").read_text(), name="ft06")


def decode_jobs(inst: Instance, job_seq) -> int:
    """Makespan of a job-repetition sequence, decoded without the package's env."""
    M = inst.num_machines
    nxt = [0] * inst.num_jobs
    mfree = [0] * M
    jfree = [0] * inst.num_jobs
    for j in job_seq:
        op = inst.ops[j * M + nxt[j]]
        start = max(mfree[op.machine], jfree[j])
        mfree[op.machine] = jfree[j] = start + op.ptime
        nxt[j] += 1
    return max(jfree)


def enumerate_makespans(inst: Instance) -> dict[tuple[int, ...], int]:
    """Every precedence-respecting sequence (as job repetitions) and its makespan."""
    base = [j for j in range(inst.num_jobs) for _ in range(inst.num_machines)]
    out = {}
    for seq in set(itertools.permutations(base)):
        out[seq] = decode_jobs(inst, seq)
    return out


def job_seq_to_ops(inst: Instance, job_seq) -> list[int]:
    nxt = [0] * inst.num_jobs
    ops = []
    for j in job_seq:
        ops.append(j * inst.num_machines + nxt[j])
        nxt[j] += 1
    return ops


# acceptance verdicts, printed once at the end of the session
VERDICTS: dict[int, str] = {}


def record_verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
