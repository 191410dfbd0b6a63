"""Multi-trajectory REINFORCE with a per-instance mean-makespan baseline."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .instance import Instance, generate_instance
from .model import ArlsParams, ModelConfig, RolloutBatch, init_params, rollout_batch

log = logging.getLogger(__name__)

VALIDATION_SEED = 7_350_101
METRICS_HEADER = ("step", "mean_sample_makespan", "mean_greedy_makespan", "loss")
LR_SCHEDULES = ("constant", "linear")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    jobs: int = 6
    machines: int = 6
    pmin: int = 1
    pmax: int = 15
    instances: int = 100_000
    n_traj: int = 8
    batch: int = 4
    lr: float = 1e-4
    lr_schedule: str = "constant"
    steps: int = 10_000
    seed: int = 0
    eval_every: int = 500
    checkpoint_every: int = 0
    val_size: int = 50
    corpus: bool = False
    threads: int = 1
    deterministic: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.n_traj < 2:
            raise ConfigError("n_traj must be >= 2: the mean baseline needs several trajectories")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.steps < 0 or self.eval_every < 1:
            raise ConfigError("steps must be >= 0 and eval_every >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.corpus and self.instances < 1:
            raise ConfigError("a replayed corpus needs at least one instance")


def compute_loss(batches: Sequence[RolloutBatch]) -> Tensor:
    """Mean over instances of (1/N) sum_n (R_n - b) * log pi(tau_n), b = mean R.

    Minimizing this loss lowers the expected makespan. Sets each trajectory's
    ``advantage`` to ``-(R - b)``.
    """
    losses = []
    for batch in batches:
        R = batch.makespans
        n = len(R)
        if n < 2:
            raise ConfigError(f"need at least 2 trajectories per instance, got {n}")
        if not np.isfinite(R).all():
            raise ValueError("non-finite makespan in batch")
        adv = R - R.mean()
        for traj, a in zip(batch.trajectories, adv):
            traj.advantage = float(-a)
        weights = adv.astype(batch.log_prob.dtype) / n
        losses.append(ad.sum(ad.mul(batch.log_prob, weights)))
    loss = losses[0]
    for extra in losses[1:]:
        loss = loss + extra
    return ad.scale(loss, 1.0 / len(losses))


def validation_set(
    jobs: int, machines: int, size: int = 50, pmin: int = 1, pmax: int = 15
) -> list[Instance]:
    rng = np.random.default_rng([VALIDATION_SEED, jobs, machines])
    return [
        generate_instance(jobs, machines, pmin, pmax, rng, name=f"val{jobs}x{machines}_{i:03d}")
        for i in range(size)
    ]


def evaluate_policy(
    params: ArlsParams,
    instances: Sequence[Instance],
    samples: int = 0,
    greedy: bool = True,
    seed: int = 0,
    threads: int = 1,
) -> list[int]:
    """Best makespan per instance over one greedy rollout plus ``samples`` sampled ones."""
    if samples < 0 or (samples == 0 and not greedy):
        raise ValueError("need at least one rollout per instance")

    def one(k: int) -> int:
        inst = instances[k]
        best = math.inf
        with ad.no_grad():
            if greedy:
                best = rollout_batch(inst, params, 1, "greedy").makespans.min()
            if samples:
                rng = np.random.default_rng([seed, k])
                best = min(best, rollout_batch(inst, params, samples, "sample", rng).makespans.min())
        return int(best)

    return parallel_map(one, range(len(instances)), threads)


def parallel_map(fn: Callable, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Step size for update ``step``; ``linear`` decays to zero at ``cfg.steps``."""
    if cfg.lr_schedule == "linear":
        return cfg.lr * (1.0 - step / max(cfg.steps, 1))
    return cfg.lr


@dataclass
class TrainResult:
    params: ArlsParams
    metrics: list[dict]
    checkpoint: Path | None = None


class _InstanceSource:
    def __init__(self, cfg: TrainConfig, fixed: Sequence[Instance] | None = None):
        self.cfg = cfg
        self.fixed = list(fixed) if fixed is not None else None
        self.size = len(self.fixed) if self.fixed is not None else cfg.instances
        self._perm: np.ndarray | None = None
        self._epoch = -1

    def _corpus_instance(self, k: int) -> Instance:
        cfg = self.cfg
        if self.fixed is not None:
            return self.fixed[k]
        return generate_instance(
            cfg.jobs, cfg.machines, cfg.pmin, cfg.pmax, np.random.default_rng([cfg.seed, 1, k])
        )

    def batch(self, step: int) -> list[Instance]:
        cfg = self.cfg
        if not cfg.corpus and self.fixed is None:
            rng = np.random.default_rng([cfg.seed, 0, step])
            return [
                generate_instance(cfg.jobs, cfg.machines, cfg.pmin, cfg.pmax, rng)
                for _ in range(cfg.batch)
            ]
        out = []
        for i in range(cfg.batch):
            pos = step * cfg.batch + i
            epoch, k = divmod(pos, self.size)
            if epoch != self._epoch:
                self._perm = np.random.default_rng([cfg.seed, 2, epoch]).permutation(self.size)
                self._epoch = epoch
            out.append(self._corpus_instance(int(self._perm[k])))
        return out


def train(
    cfg: TrainConfig,
    checkpoint: str | Path | None = None,
    metrics_out: TextIO | None = None,
    params: ArlsParams | None = None,
    on_metrics: Callable[[dict], None] | None = None,
    instances: Sequence[Instance] | None = None,
) -> TrainResult:
    """Train a policy; metrics rows go to ``metrics_out`` as CSV when given.

    ``instances`` replaces generated data with a fixed corpus replayed in
    shuffled epochs.
    """
    cfg.validate()
    threads = 1 if cfg.deterministic else max(1, cfg.threads)
    if params is None:
        params = init_params(cfg.model, seed=np.random.default_rng([cfg.seed, 3]))
    adam = AdamState(lr=cfg.lr)
    source = _InstanceSource(cfg, instances)
    val = validation_set(cfg.jobs, cfg.machines, cfg.val_size, cfg.pmin, cfg.pmax)
    writer = None
    if metrics_out is not None:
        writer = csv.writer(metrics_out, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    metrics: list[dict] = []
    checkpoint = Path(checkpoint) if checkpoint is not None else None

    def sample(step: int) -> list[RolloutBatch]:
        insts = source.batch(step)

        def one(i: int) -> RolloutBatch:
            rng = np.random.default_rng([cfg.seed, 4, step, i])
            return rollout_batch(insts[i], params, cfg.n_traj, "sample", rng)

        return parallel_map(one, range(len(insts)), threads)

    def emit(step: int, batches: list[RolloutBatch], loss: float) -> None:
        greedy = evaluate_policy(params, val, threads=threads) if val else []
        row = {
            "step": step,
            "mean_sample_makespan": float(np.mean([b.makespans.mean() for b in batches])),
            "mean_greedy_makespan": float(np.mean(greedy)) if greedy else float("nan"),
            "loss": loss,
        }
        metrics.append(row)
        log.info("step %d  sample %.3f  greedy %.3f  loss %.4f", step, row["mean_sample_makespan"],
                 row["mean_greedy_makespan"], loss)
        if writer is not None:
            writer.writerow([step, f"{row['mean_sample_makespan']:.4f}",
                             f"{row['mean_greedy_makespan']:.4f}", f"{loss:.6g}"])
            metrics_out.flush()
        if on_metrics is not None:
            on_metrics(row)

    extra = {"train": {k: v for k, v in asdict(cfg).items() if k != "model"}}
    for step in range(cfg.steps + 1):
        batches = sample(step)
        loss = compute_loss(batches)
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            if checkpoint is not None:
                params.save(checkpoint.with_suffix(".diverged"), extra)
            raise TrainingDiverged(f"non-finite loss {loss_value} at step {step}")
        if step % cfg.eval_every == 0 or step == cfg.steps:
            emit(step, batches, loss_value)
        if step == cfg.steps:
            break
        params.zero_grad()
        ad.backward(loss)
        adam.lr = learning_rate(cfg, step)
        adam_step(params.arrays(), params.grads(), adam)
        if checkpoint is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            params.save(checkpoint, {**extra, "step": step + 1})
    if checkpoint is not None:
        params.save(checkpoint, {**extra, "step": cfg.steps})
    return TrainResult(params, metrics, checkpoint)
