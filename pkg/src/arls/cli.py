"""Command-line entry point: ``arls <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .env import ScheduleResult, validate_schedule
from .heuristics import DispatchRule, rollout
from .instance import BestKnownRegistry, InstanceError, generate_instance, load_instance, write_instance
from .model import ArlsParams, ModelConfig, sample_trajectory
from .oracle import DEFAULT_NODE_BUDGET, oracle_optimal
from .report import POLICIES, REFERENCES, ReportError, run_suite
from .trainer import LR_SCHEDULES, ConfigError, TrainConfig, TrainingDiverged, train

log = logging.getLogger("arls")


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.count == 1 and args.out in (None, "-"):
        _emit(write_instance(generate_instance(args.jobs, args.machines, args.pmin, args.pmax, rng)), None)
        return 0
    if args.out in (None, "-"):
        log.error("--count > 1 needs --out DIR")
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_instance(args.jobs, args.machines, args.pmin, args.pmax, rng)
        name = f"{args.prefix}{args.jobs}x{args.machines}_{i:04d}.txt"
        (outdir / name).write_text(write_instance(inst), encoding="utf-8")
    return 0


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.policy == "model":
        if args.checkpoint is None:
            log.error("--policy model needs --checkpoint")
            return 2
        params = ArlsParams.load(args.checkpoint)
        rng = np.random.default_rng(args.seed)
        best = sample_trajectory(inst, params, "greedy")
        for _ in range(args.samples):
            traj = sample_trajectory(inst, params, "sample", rng)
            if traj.makespan < best.makespan:
                best = traj
        result = best.schedule
    else:
        result = rollout(DispatchRule(args.policy), inst, non_delay=not args.all_ready)
    _emit(result.to_csv(), args.out)
    log.info("%s makespan %d", inst.name, result.makespan)
    return 0


def cmd_train(args) -> int:
    model = ModelConfig(
        d_model=args.d_model,
        heads=args.heads,
        d_ff=args.d_ff,
        enc_layers=args.enc_layers,
        dec_layers=args.dec_layers,
        lam=args.lam,
        learn_lambda=args.learn_lambda,
        reencode_every_step=args.reencode_every_step,
        allow_noop=args.allow_noop,
    )
    cfg = TrainConfig(
        jobs=args.jobs,
        machines=args.machines,
        pmin=args.pmin,
        pmax=args.pmax,
        instances=args.instances,
        n_traj=args.n_traj,
        batch=args.batch,
        lr=args.lr,
        lr_schedule=args.lr_schedule,
        steps=args.steps,
        seed=args.seed,
        eval_every=args.eval_every,
        checkpoint_every=args.checkpoint_every,
        val_size=args.val_size,
        corpus=args.corpus,
        threads=args.threads,
        deterministic=args.deterministic,
        model=model,
    )
    init = ArlsParams.load(args.resume) if args.resume else None
    if args.metrics in (None, "-"):
        train(cfg, args.checkpoint, sys.stdout, params=init)
    else:
        with open(args.metrics, "w", newline="", encoding="utf-8") as fh:
            train(cfg, args.checkpoint, fh, params=init)
    return 0


def cmd_eval(args) -> int:
    registry = BestKnownRegistry.read_csv(args.registry) if args.registry else None
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    report = run_suite(
        args.dataset,
        policies,
        checkpoint=args.checkpoint,
        registry=registry,
        reference=args.reference,
        node_budget=args.node_budget,
        samples=args.samples,
        seed=args.seed,
        threads=1 if args.deterministic else args.threads,
    )
    _emit(report.to_markdown() if args.format == "md" else report.to_csv(), args.out)
    return 0


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    res = oracle_optimal(inst, args.node_budget)
    print(f"instance={inst.name} makespan={res.makespan} proven={str(res.proven).lower()} nodes={res.nodes}")
    return 0


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    result = ScheduleResult.read_csv(Path(args.schedule))
    problems = validate_schedule(inst, result)
    for p in problems:
        print(p)
    if problems:
        return 1
    print(f"ok makespan={result.makespan}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arls", description="Attention-based job shop scheduling toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for per-instance work")
    parser.add_argument("--deterministic", action="store_true", help="force single-threaded, bit-reproducible runs")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random instances")
    p.add_argument("jobs", type=int)
    p.add_argument("machines", type=int)
    p.add_argument("--pmin", type=int, default=1)
    p.add_argument("--pmax", type=int, default=15)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--prefix", default="rand")
    p.add_argument("--out", help="file (count 1) or directory; stdout when omitted")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="schedule one instance and print the schedule CSV")
    p.add_argument("instance")
    p.add_argument("--policy", choices=[r.value for r in DispatchRule] + ["model"], default="spt")
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int, default=0, help="extra sampled rollouts for the model policy")
    p.add_argument("--all-ready", action="store_true", help="rank all ready ops instead of non-delay dispatching")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a policy with multi-trajectory REINFORCE")
    d = TrainConfig()
    m = ModelConfig()
    p.add_argument("--jobs", type=int, default=d.jobs)
    p.add_argument("--machines", type=int, default=d.machines)
    p.add_argument("--pmin", type=int, default=d.pmin)
    p.add_argument("--pmax", type=int, default=d.pmax)
    p.add_argument("--instances", type=int, default=d.instances, help="corpus size with --corpus")
    p.add_argument("--corpus", action="store_true", help="replay a fixed corpus instead of fresh instances")
    p.add_argument("--n-traj", type=int, default=d.n_traj)
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES, default=d.lr_schedule)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--val-size", type=int, default=d.val_size)
    p.add_argument("--checkpoint", help="checkpoint path written at the end")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="initial parameters from an existing checkpoint")
    p.add_argument("--metrics", help="metrics CSV path; stdout when omitted")
    p.add_argument("--d-model", type=int, default=m.d_model)
    p.add_argument("--heads", type=int, default=m.heads)
    p.add_argument("--d-ff", type=int, default=m.d_ff)
    p.add_argument("--enc-layers", type=int, default=m.enc_layers)
    p.add_argument("--dec-layers", type=int, default=m.dec_layers)
    p.add_argument("--lam", type=float, default=m.lam, help="job/machine encoder mixing weight")
    p.add_argument("--learn-lambda", action="store_true")
    p.add_argument("--reencode-every-step", action="store_true")
    p.add_argument("--allow-noop", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="gap report over a directory of instances")
    p.add_argument("dataset")
    p.add_argument("--policies", default="fifo,spt,lpt,mwkr", help=f"comma list from {', '.join(POLICIES)}")
    p.add_argument("--checkpoint")
    p.add_argument("--registry", help="CSV of name,makespan best-known values")
    p.add_argument("--reference", choices=REFERENCES, default="registry")
    p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="branch-and-bound optimum of one instance")
    p.add_argument("instance")
    p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="check a schedule CSV against its instance")
    p.add_argument("instance")
    p.add_argument("schedule")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InstanceError, ReportError, ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
