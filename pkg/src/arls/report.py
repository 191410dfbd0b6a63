"""Optimality-gap reports over a directory of benchmark instances."""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .heuristics import RULES, DispatchRule, best_heuristic, rollout
from .instance import BestKnownRegistry, Instance, load_instance
from .model import ArlsParams
from .oracle import DEFAULT_NODE_BUDGET, oracle_optimal
from .trainer import evaluate_policy, parallel_map

log = logging.getLogger(__name__)

CSV_HEADER = (
    "dataset", "instance", "jobs", "machines", "policy", "makespan", "reference", "gap_pct", "proven",
)
POLICIES = tuple(r.value for r in RULES) + ("model", "oracle")
REFERENCES = ("registry", "oracle", "heuristic")
INSTANCE_SUFFIXES = {".txt", ".jss", ".jsp", ".dat", ""}


class ReportError(ValueError):
    pass


def gap(obj: float, obj_star: float) -> float:
    """Relative optimality gap (obj - obj*) / obj*."""
    if obj_star <= 0:
        raise ReportError(f"reference objective must be positive, got {obj_star}")
    return (obj - obj_star) / obj_star


@dataclass(frozen=True)
class GapRow:
    dataset: str
    instance: str
    jobs: int
    machines: int
    policy: str
    makespan: int
    reference: int | None
    gap: float | None
    proven: bool | None

    def cells(self) -> list[str]:
        return [
            self.dataset,
            self.instance,
            str(self.jobs),
            str(self.machines),
            self.policy,
            str(self.makespan),
            "" if self.reference is None else str(self.reference),
            "" if self.gap is None else f"{100 * self.gap:.4f}",
            "" if self.proven is None else str(self.proven).lower(),
        ]


@dataclass
class GapReport:
    rows: list[GapRow] = field(default_factory=list)

    def aggregates(self) -> list[tuple[str, str, str, int, float | None]]:
        """(dataset, JxM, policy, count, mean gap %) in first-seen order.

        Rows without a reference are left out of the mean.
        """
        groups: dict[tuple[str, str, str], list[float]] = {}
        counts: dict[tuple[str, str, str], int] = defaultdict(int)
        for r in self.rows:
            key = (r.dataset, f"{r.jobs}x{r.machines}", r.policy)
            groups.setdefault(key, [])
            counts[key] += 1
            if r.gap is not None:
                groups[key].append(100 * r.gap)
        return [
            (*key, counts[key], sum(g) / len(g) if g else None) for key, g in groups.items()
        ]

    def mean_gap(self, policy: str) -> float | None:
        gaps = [r.gap for r in self.rows if r.policy == policy and r.gap is not None]
        return sum(gaps) / len(gaps) if gaps else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [
            "| dataset | size | policy | instances | mean gap % |",
            "|---|---|---|---:|---:|",
        ]
        for dataset, size, policy, n, mean in self.aggregates():
            cell = "" if mean is None else f"{mean:.1f}"
            lines.append(f"| {dataset} | {size} | {policy} | {n} | {cell} |")
        return "\n".join(lines) + "\n"


def dataset_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ReportError(f"not a directory: {directory}")
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and not p.name.startswith(".") and p.suffix in INSTANCE_SUFFIXES
    )


def _reference(
    inst: Instance, mode: str, registry: BestKnownRegistry | None, budget: int
) -> tuple[int | None, bool | None]:
    if mode == "registry":
        if registry is None or inst.name not in registry:
            return None, None
        return registry[inst.name], None
    if mode == "oracle":
        res = oracle_optimal(inst, budget)
        return res.makespan, res.proven
    return best_heuristic(inst)[1], False


def run_suite(
    dataset_dir: str | Path,
    policies: Sequence[str],
    checkpoint: str | Path | ArlsParams | None = None,
    registry: BestKnownRegistry | None = None,
    reference: str = "registry",
    node_budget: int = DEFAULT_NODE_BUDGET,
    samples: int = 0,
    seed: int = 0,
    threads: int = 1,
    instances: Sequence[Instance] | None = None,
    dataset: str | None = None,
) -> GapReport:
    """Evaluate each policy on every instance in ``dataset_dir``.

    ``reference`` picks obj*: the best-known ``registry``, the branch and
    bound ``oracle`` (its incumbent when unproven), or the best dispatching
    rule (``heuristic``). Passing ``instances`` skips the directory scan.
    """
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ReportError(f"unknown policies {unknown}; choose from {', '.join(POLICIES)}")
    if reference not in REFERENCES:
        raise ReportError(f"reference must be one of {REFERENCES}, got {reference!r}")
    params = checkpoint
    if "model" in policies:
        if checkpoint is None:
            raise ReportError("policy 'model' needs a checkpoint")
        if not isinstance(checkpoint, ArlsParams):
            params = ArlsParams.load(checkpoint)
    if instances is None:
        files = dataset_files(dataset_dir)
        instances = [load_instance(p) for p in files]
    name = dataset if dataset is not None else Path(dataset_dir).name
    if not instances:
        log.warning("no instances found in %s", dataset_dir)
        return GapReport()

    def one(k: int) -> list[GapRow]:
        inst = instances[k]
        ref, proven = _reference(inst, reference, registry, node_budget)
        if ref is None:
            log.warning("no reference value for instance %s; gap left blank", inst.name)
        oracle_ms = ref if reference == "oracle" else None
        rows = []
        for policy in policies:
            if policy == "model":
                ms = evaluate_policy(params, [inst], samples=samples, seed=seed + k)[0]
            elif policy == "oracle":
                ms = oracle_ms if oracle_ms is not None else oracle_optimal(inst, node_budget).makespan
            else:
                ms = rollout(DispatchRule(policy), inst).makespan
            g = gap(ms, ref) if ref is not None else None
            rows.append(GapRow(name, inst.name, inst.num_jobs, inst.num_machines, policy, ms, ref, g, proven))
        return rows

    report = GapReport()
    for rows in parallel_map(one, range(len(instances)), threads):
        report.rows.extend(rows)
    return report
