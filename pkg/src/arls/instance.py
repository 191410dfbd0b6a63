"""Job shop instances: generation, the standard text format, and best-known registries.

Operations are addressed by a flat id ``n = job * M + order``. The id ``J * M``
is reserved for the no-op (idle) token used by the model.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np


class InstanceError(ValueError):
    """Invalid instance parameters or instance data."""


class ParseError(InstanceError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class OperationSpec:
    job: int
    order: int
    machine: int
    ptime: int


@dataclass(frozen=True)
class Instance:
    num_jobs: int
    num_machines: int
    ops: tuple[OperationSpec, ...]
    name: str = ""

    def __post_init__(self) -> None:
        J, M = self.num_jobs, self.num_machines
        if J < 1 or M < 1:
            raise InstanceError("an instance needs at least one job and one machine")
        if len(self.ops) != J * M:
            raise InstanceError(f"expected {J * M} operations, got {len(self.ops)}")
        for n, op in enumerate(self.ops):
            if (op.job, op.order) != divmod(n, M):
                raise InstanceError(f"operation {n} is stored out of (job, order) position")
            if not 0 <= op.machine < M:
                raise InstanceError(f"operation {n}: machine {op.machine} out of range")
            if op.ptime < 1:
                raise InstanceError(f"operation {n}: processing time must be >= 1")
        for j in range(J):
            if len(set(self.machine_matrix[j].tolist())) != M:
                raise InstanceError(f"job {j} does not visit every machine exactly once")

    @classmethod
    def from_matrices(cls, machines, ptimes, name: str = "") -> "Instance":
        """Build from two J x M matrices (machine ids, processing times) in job order."""
        machines = np.asarray(machines, dtype=np.int64)
        ptimes = np.asarray(ptimes, dtype=np.int64)
        if machines.ndim != 2 or machines.shape != ptimes.shape:
            raise InstanceError("machine and ptime matrices must be 2-D with equal shapes")
        J, M = machines.shape
        ops = tuple(
            OperationSpec(j, t, int(machines[j, t]), int(ptimes[j, t]))
            for j in range(J)
            for t in range(M)
        )
        return cls(J, M, ops, name)

    @property
    def num_ops(self) -> int:
        return self.num_jobs * self.num_machines

    @property
    def noop_id(self) -> int:
        return self.num_jobs * self.num_machines

    def op_id(self, job: int, order: int) -> int:
        return job * self.num_machines + order

    @cached_property
    def machine_matrix(self) -> np.ndarray:
        m = np.array([op.machine for op in self.ops], dtype=np.int64)
        m = m.reshape(self.num_jobs, self.num_machines)
        m.flags.writeable = False
        return m

    @cached_property
    def ptime_matrix(self) -> np.ndarray:
        p = np.array([op.ptime for op in self.ops], dtype=np.int64)
        p = p.reshape(self.num_jobs, self.num_machines)
        p.flags.writeable = False
        return p

    def lower_bound(self) -> int:
        """max(longest job, busiest machine); no schedule can beat it."""
        job_sum = int(self.ptime_matrix.sum(axis=1).max())
        mach = np.zeros(self.num_machines, dtype=np.int64)
        np.add.at(mach, self.machine_matrix.ravel(), self.ptime_matrix.ravel())
        return max(job_sum, int(mach.max()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.num_jobs, self.num_machines, self.ops) == (
            other.num_jobs,
            other.num_machines,
            other.ops,
        )

    def __hash__(self) -> int:
        return hash((self.num_jobs, self.num_machines, self.ops))


def generate_instance(
    jobs: int,
    machines: int,
    pmin: int = 1,
    pmax: int = 15,
    seed: int | np.random.Generator | None = None,
    name: str = "",
) -> Instance:
    """Random instance: i.i.d. uniform integer ptimes on [pmin, pmax] and an
    independent uniform machine permutation per job."""
    if jobs < 1 or machines < 1:
        raise InstanceError("jobs and machines must be >= 1")
    if not 1 <= pmin <= pmax:
        raise InstanceError(f"need 1 <= pmin <= pmax, got pmin={pmin}, pmax={pmax}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ptimes = rng.integers(pmin, pmax + 1, size=(jobs, machines))
    order = np.stack([rng.permutation(machines) for _ in range(jobs)])
    return Instance.from_matrices(order, ptimes, name)


def parse_instance(text: str | TextIO, name: str = "") -> Instance:
    """Parse the standard ``J M`` + ``machine ptime`` pair layout.

    Lines starting with ``#`` and blank lines are ignored. Errors carry the
    1-based line number of the offending line.
    """
    if not isinstance(text, str):
        text = text.read()
    rows = [
        (i, line.split())
        for i, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise ParseError("empty instance")
    header_line, header = rows[0]
    if len(header) != 2:
        raise ParseError(f"header must hold 'J M', found {len(header)} tokens", header_line)
    try:
        J, M = (int(tok) for tok in header)
    except ValueError:
        raise ParseError("header values must be integers", header_line) from None
    if J < 1 or M < 1:
        raise ParseError("J and M must be positive", header_line)
    body = rows[1:]
    if len(body) != J:
        line = body[-1][0] if len(body) > J else header_line
        raise ParseError(f"expected {J} job lines, found {len(body)}", line)

    machines = np.zeros((J, M), dtype=np.int64)
    ptimes = np.zeros((J, M), dtype=np.int64)
    for j, (lineno, toks) in enumerate(body):
        if len(toks) != 2 * M:
            raise ParseError(f"expected {2 * M} tokens, found {len(toks)}", lineno)
        try:
            vals = [int(tok) for tok in toks]
        except ValueError:
            raise ParseError("non-integer token", lineno) from None
        seen: set[int] = set()
        for t in range(M):
            m, p = vals[2 * t], vals[2 * t + 1]
            if not 0 <= m < M:
                raise ParseError(f"machine index {m} out of range [0, {M})", lineno)
            if m in seen:
                raise ParseError(f"machine {m} repeated within job {j}", lineno)
            if p < 1:
                raise ParseError(f"non-positive processing time {p}", lineno)
            seen.add(m)
            machines[j, t], ptimes[j, t] = m, p
    return Instance.from_matrices(machines, ptimes, name)


def write_instance(inst: Instance) -> str:
    lines = [f"{inst.num_jobs} {inst.num_machines}"]
    for j in range(inst.num_jobs):
        pairs = zip(inst.machine_matrix[j].tolist(), inst.ptime_matrix[j].tolist())
        lines.append(" ".join(f"{m} {p}" for m, p in pairs))
    return "\n".join(lines) + "\n"


def load_instance(path: str | Path) -> Instance:
    path = Path(path)
    return parse_instance(path.read_text(encoding="utf-8"), name=path.stem)


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(write_instance(inst), encoding="utf-8")


class BestKnownRegistry(dict):
    """Instance name -> best-known (or optimal) makespan."""

    def __setitem__(self, key: str, value: int) -> None:
        if int(value) != value or value < 1:
            raise InstanceError(f"best-known makespan for {key!r} must be a positive integer")
        super().__setitem__(key, int(value))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, int]]) -> "BestKnownRegistry":
        reg = cls()
        for name, value in rows:
            reg[name] = value
        return reg

    @classmethod
    def read_csv(cls, source: str | Path | TextIO) -> "BestKnownRegistry":
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as fh:
                return cls.read_csv(fh)
        reader = csv.DictReader(source)
        if reader.fieldnames is None or not {"name", "makespan"} <= set(reader.fieldnames):
            raise ParseError("registry CSV needs a 'name,makespan' header")
        reg = cls()
        for row in reader:
            try:
                value = float(row["makespan"])
            except (TypeError, ValueError):
                raise ParseError(
                    f"bad makespan {row['makespan']!r} for {row['name']!r}", reader.line_num
                ) from None
            reg[row["name"].strip()] = value
        return reg

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "makespan"])
        for name in sorted(self):
            writer.writerow([name, self[name]])
        return buf.getvalue()
