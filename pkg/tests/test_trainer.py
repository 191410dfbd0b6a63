import io

import numpy as np
import pytest

from arls import autodiff as ad
from arls.env import validate_schedule
from arls.instance import generate_instance, parse_instance
from arls.model import ModelConfig, RolloutBatch, init_params, rollout_batch, sequence_log_prob
from arls.trainer import (
    ConfigError,
    TrainConfig,
    compute_loss,
    evaluate_policy,
    learning_rate,
    train,
    validation_set,
)

from .conftest import enumerate_makespans, job_seq_to_ops
from .gradcheck import numeric_grad

TINY_CFG = ModelConfig(d_model=8, heads=2, d_ff=8, enc_layers=2)
TOY = "2 2\n0 1 1 10\n0 10 1 1\n"  # starting job 0 allows 12; starting job 1 costs >= 21


def fixed_batch(inst, params, seqs, spans):
    batch = rollout_batch(inst, params, forced=seqs)
    for traj, span in zip(batch.trajectories, spans):
        traj.makespan = span
    return batch


def grads_for(params, make_batches):
    params.zero_grad()
    ad.backward(compute_loss(make_batches()))
    return {k: (v.copy() if v is not None else None) for k, v in params.grads().items()}


def test_mean_baseline_advantages(tiny):
    params = init_params(TINY_CFG, seed=0, dtype=np.float64)
    batch = fixed_batch(tiny, params, [[0, 2, 1, 3], [0, 1, 2, 3], [2, 3, 0, 1]], [10, 20, 30])
    compute_loss([batch])
    assert [t.advantage for t in batch.trajectories] == [10.0, 0.0, -10.0]


def test_equal_makespans_give_zero_gradient(tiny):
    params = init_params(TINY_CFG, seed=0, dtype=np.float64)
    g = grads_for(params, lambda: [fixed_batch(tiny, params, [[0, 2, 1, 3], [2, 3, 0, 1]], [7, 7])])
    assert all(v is None or not v.any() for v in g.values())


def test_constant_shift_leaves_gradient_unchanged(tiny):
    params = init_params(TINY_CFG, seed=1, dtype=np.float64)
    seqs = [[0, 2, 1, 3], [0, 1, 2, 3], [2, 3, 0, 1], [2, 0, 1, 3]]
    spans = np.array([6.0, 10.0, 10.0, 6.0])
    g1 = grads_for(params, lambda: [fixed_batch(tiny, params, seqs, spans)])
    g2 = grads_for(params, lambda: [fixed_batch(tiny, params, seqs, spans + 1234.5)])
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], atol=1e-6, rtol=0)


def test_loss_gradient_matches_finite_differences(tiny):
    params = init_params(TINY_CFG, seed=2, dtype=np.float64)
    seqs = [[0, 2, 1, 3], [2, 3, 0, 1], [0, 1, 2, 3]]
    spans = [6, 10, 10]
    other = parse_instance("2 2\n1 2 0 5\n0 1 1 1\n")
    oseqs = [[0, 1, 2, 3], [2, 0, 3, 1]]
    ospans = [8, 9]

    def batches():
        return [fixed_batch(tiny, params, seqs, spans), fixed_batch(other, params, oseqs, ospans)]

    analytic = grads_for(params, batches)
    for name in ("input.W", "job.1.attn.Wk", "mach.0.ff.W1", "dec.0.attn.Wq", "head.Wk", "start"):
        tensor = params[name]
        base = tensor.data

        def f(x):
            tensor.data = x
            with ad.no_grad():
                value = float(compute_loss(batches()).data)
            tensor.data = base
            return value

        numeric = numeric_grad(f, base.copy())
        err = np.abs(analytic[name] - numeric) / np.maximum(
            np.maximum(np.abs(analytic[name]), np.abs(numeric)), 1e-6
        )
        assert err.max() < 1e-4, name


def test_loss_sign_descends_on_worse_trajectories(tiny):
    # one gradient step must raise the log-probability of the shorter schedule
    params = init_params(TINY_CFG, seed=3, dtype=np.float64)
    good, bad = [0, 2, 1, 3], [0, 1, 2, 3]
    before = float(sequence_log_prob(tiny, params, good).data)
    grads_for(params, lambda: [fixed_batch(tiny, params, [good, bad], [6, 10])])
    for t in params.tensors.values():
        if t.grad is not None:
            t.data -= 1e-3 * t.grad
    assert float(sequence_log_prob(tiny, params, good).data) > before


def test_single_trajectory_is_rejected(tiny):
    params = init_params(TINY_CFG, seed=0)
    with pytest.raises(ConfigError):
        compute_loss([fixed_batch(tiny, params, [[0, 2, 1, 3]], [6])])
    with pytest.raises(ConfigError):
        train(TrainConfig(n_traj=1))
    with pytest.raises(ConfigError):
        TrainConfig(batch=0).validate()


def test_validation_set_is_fixed():
    a = validation_set(3, 3, 5)
    assert a == validation_set(3, 3, 5)
    assert len(a) == 5 and all(i.num_jobs == 3 for i in a)


def test_evaluate_policy_properties():
    params = init_params(TINY_CFG, seed=0)
    insts = [generate_instance(3, 3, seed=s) for s in range(5)]
    greedy = evaluate_policy(params, insts)
    sampled = evaluate_policy(params, insts, samples=8, seed=1)
    assert all(s <= g for s, g in zip(sampled, greedy))
    single = parse_instance("1 3\n0 2 1 3 2 4\n")
    assert evaluate_policy(params, [single]) == [9]
    with pytest.raises(ValueError):
        evaluate_policy(params, insts, samples=0, greedy=False)


def test_bandit_toy_learns_the_better_first_move():
    toy = parse_instance(TOY)
    cfg = TrainConfig(
        jobs=2, machines=2, n_traj=8, batch=1, lr=1e-3, steps=500, eval_every=500,
        val_size=0, model=TINY_CFG,
    )
    result = train(cfg, instances=[toy])
    # marginal probability of starting with job 0, summed over full sequences
    p_better = 0.0
    with ad.no_grad():
        for seq in enumerate_makespans(toy):
            if seq[0] == 0:
                ops = job_seq_to_ops(toy, seq)
                p_better += float(np.exp(sequence_log_prob(toy, result.params, ops).data))
    assert p_better > 0.9


def test_short_training_run_is_deterministic_and_feasible():
    cfg = TrainConfig(
        jobs=3, machines=3, n_traj=4, batch=2, lr=1e-3, steps=6, eval_every=3, val_size=4,
        model=TINY_CFG, seed=5, deterministic=True,
    )
    out1, out2 = io.StringIO(), io.StringIO()
    r1 = train(cfg, metrics_out=out1)
    r2 = train(cfg, metrics_out=out2)
    assert out1.getvalue() == out2.getvalue()
    assert out1.getvalue().splitlines()[0] == "step,mean_sample_makespan,mean_greedy_makespan,loss"
    assert [m["step"] for m in r1.metrics] == [0, 3, 6]
    for k in r1.params.tensors:
        np.testing.assert_array_equal(r1.params[k].data, r2.params[k].data)


def test_threads_do_not_change_results():
    base = dict(jobs=3, machines=3, n_traj=4, batch=3, lr=1e-3, steps=3, eval_every=3,
                val_size=3, model=TINY_CFG, seed=2)
    r1 = train(TrainConfig(**base, threads=1))
    r2 = train(TrainConfig(**base, threads=3))
    assert r1.metrics == r2.metrics


def test_corpus_mode_replays_instances(tmp_path):
    cfg = TrainConfig(jobs=2, machines=2, instances=3, corpus=True, n_traj=2, batch=2, steps=4,
                      eval_every=10, val_size=0, model=TINY_CFG, checkpoint_every=2)
    ckpt = tmp_path / "c.ckpt"
    result = train(cfg, checkpoint=ckpt)
    assert ckpt.exists() and result.checkpoint == ckpt
    _, meta = ad.load_tensors(ckpt)
    assert meta["step"] == 4 and meta["train"]["corpus"] is True


def test_sampled_training_trajectories_are_feasible():
    params = init_params(TINY_CFG, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        inst = generate_instance(int(rng.integers(1, 5)), int(rng.integers(1, 5)), seed=rng)
        batch: RolloutBatch = rollout_batch(inst, params, 4, "sample", rng)
        for traj in batch.trajectories:
            assert validate_schedule(inst, traj.schedule) == []


def test_linear_schedule_reaches_zero():
    cfg = TrainConfig(lr=1e-3, steps=10, lr_schedule="linear")
    assert learning_rate(cfg, 0) == 1e-3
    assert learning_rate(cfg, 5) == pytest.approx(5e-4)
    assert learning_rate(cfg, 10) == 0.0
    assert learning_rate(TrainConfig(lr=1e-3, steps=10), 7) == 1e-3
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="cosine").validate()
