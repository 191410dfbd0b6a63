"""Attention policy for job shop dispatching.

Operations (plus one idle token) are embedded linearly, passed through two
independent masked transformer encoders (attention restricted to the same job,
resp. the same machine), and mixed as ``lam * job_enc + (1 - lam) * mach_enc``.
A transformer decoder queried with the last chosen operation attends over the
unassigned operations; a clipped-tanh pointer head scores every slot.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import ScheduleResult, ScheduleState, init_state
from .instance import Instance

NUM_FEATURES = 4


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    heads: int = 16
    d_ff: int = 512
    enc_layers: int = 3
    dec_layers: int = 1
    clip: float = 10.0
    lam: float = 0.5
    learn_lambda: bool = False
    reencode_every_step: bool = False
    allow_noop: bool = False

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


@dataclass
class ArlsParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["input.W"].dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: t.grad for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        ad.zero_grad(self.tensors.values())

    def astype(self, dtype) -> "ArlsParams":
        return ArlsParams(
            self.config,
            {k: Tensor(t.data.astype(dtype), requires_grad=True) for k, t in self.tensors.items()},
        )

    def copy(self) -> "ArlsParams":
        return self.astype(self.dtype)

    def lam(self) -> Tensor | float:
        if self.config.learn_lambda:
            return ad.sigmoid(self.tensors["lambda_logit"])
        return self.config.lam

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"model": asdict(self.config)}
        if extra:
            meta.update(extra)
        ad.save_tensors(path, self.arrays(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "ArlsParams":
        arrays, meta = ad.load_tensors(path)
        known = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in meta["model"].items() if k in known})
        return cls(config, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})


def init_params(config: ModelConfig | None = None, seed=0, dtype=np.float32) -> ArlsParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm gains."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    d, dff, dk = config.d_model, config.d_ff, config.d_k
    arrays: dict[str, np.ndarray] = {}

    def weight(name, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=(fan_in, fan_out))

    def norm(prefix):
        arrays[prefix + ".g"] = np.ones(d)
        arrays[prefix + ".b"] = np.zeros(d)

    def block(prefix):
        norm(prefix + ".ln1")
        for w in ("Wq", "Wk", "Wv", "Wo"):
            weight(f"{prefix}.attn.{w}", d, d)
        norm(prefix + ".ln2")
        weight(prefix + ".ff.W1", d, dff)
        arrays[prefix + ".ff.b1"] = np.zeros(dff)
        weight(prefix + ".ff.W2", dff, d)
        arrays[prefix + ".ff.b2"] = np.zeros(d)

    weight("input.W", NUM_FEATURES, d)
    arrays["input.b"] = np.zeros(d)
    arrays["noop"] = rng.normal(0.0, 1.0, size=d)
    arrays["start"] = rng.normal(0.0, 1.0, size=d)
    for enc in ("job", "mach"):
        for layer in range(config.enc_layers):
            block(f"{enc}.{layer}")
        norm(enc + ".ln")
    for layer in range(config.dec_layers):
        block(f"dec.{layer}")
    norm("dec.ln")
    weight("head.Wq", d, dk)
    weight("head.Wk", d, dk)
    if config.learn_lambda:
        lam = min(max(config.lam, 1e-6), 1 - 1e-6)
        arrays["lambda_logit"] = np.array([math.log(lam / (1 - lam))])
    return ArlsParams(
        config, {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in arrays.items()}
    )


# -- featurization and masks ----------------------------------------------------


def op_features(inst: Instance) -> np.ndarray:
    """(J*M) x 4 matrix: job / J, order / M, machine / M, ptime / max ptime."""
    J, M = inst.num_jobs, inst.num_machines
    jobs, orders = np.divmod(np.arange(J * M), M)
    return np.stack(
        [
            jobs / J,
            orders / M,
            inst.machine_matrix.ravel() / M,
            inst.ptime_matrix.ravel() / inst.ptime_matrix.max(),
        ],
        axis=1,
    )


@dataclass(frozen=True)
class AttentionMasks:
    """Boolean (JM+1) x (JM+1) matrices; True means attention is allowed."""

    job: np.ndarray
    machine: np.ndarray


def attention_masks(inst: Instance) -> AttentionMasks:
    M = inst.num_machines
    n = inst.num_ops
    job = np.arange(n) // M
    mach = inst.machine_matrix.ravel()

    def build(key):
        mask = np.ones((n + 1, n + 1), dtype=bool)
        mask[:n, :n] = key[:, None] == key[None, :]
        return mask

    return AttentionMasks(build(job), build(mach))


# -- network pieces --------------------------------------------------------------


def _norm(params: ArlsParams, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x) * params[prefix + ".g"] + params[prefix + ".b"]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = ad.reshape(x, (*lead, n, heads, d // heads))
    r = len(lead)
    return ad.transpose(x, (*range(r), r + 1, r, r + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dk = x.shape
    r = len(lead)
    x = ad.transpose(x, (*range(r), r + 1, r, r + 2))
    return ad.reshape(x, (*lead, n, h * dk))


def multi_head_attention(
    params: ArlsParams,
    prefix: str,
    xq: Tensor,
    xkv: Tensor,
    allowed: np.ndarray,
    trace: list | None = None,
) -> Tensor:
    """Masked multi-head scaled dot-product attention.

    ``xq`` is (..., nq, d), ``xkv`` is (..., nk, d) and ``allowed`` broadcasts to
    (..., nq, nk); it is expanded over the head axis internally.
    """
    h = params.config.heads
    q = _split_heads(xq @ params[prefix + ".Wq"], h)
    k = _split_heads(xkv @ params[prefix + ".Wk"], h)
    v = _split_heads(xkv @ params[prefix + ".Wv"], h)
    k_t = ad.transpose(k, (*range(k.data.ndim - 2), -1, -2))
    scores = ad.scale(q @ k_t, 1.0 / math.sqrt(params.config.d_k))
    allowed = np.expand_dims(np.asarray(allowed, dtype=bool), -3)
    weights = ad.softmax(ad.mask_add(scores, allowed))
    if trace is not None:
        trace.append((prefix, weights.data))
    return _merge_heads(weights @ v) @ params[prefix + ".Wo"]


def _block(params, prefix, x, kv, allowed, trace=None):
    """Pre-norm transformer layer. ``kv`` None means self-attention."""
    y = _norm(params, prefix + ".ln1", x)
    src = y if kv is None else kv
    x = x + multi_head_attention(params, prefix + ".attn", y, src, allowed, trace)
    y = _norm(params, prefix + ".ln2", x)
    hidden = ad.relu(y @ params[prefix + ".ff.W1"] + params[prefix + ".ff.b1"])
    return x + (hidden @ params[prefix + ".ff.W2"] + params[prefix + ".ff.b2"])


def embed_initial(inst: Instance, params: ArlsParams, features: np.ndarray | None = None) -> Tensor:
    """(JM+1) x d_model initial embedding; the last row is the learned idle token."""
    if features is None:
        features = op_features(inst)
    x = Tensor(np.asarray(features, dtype=params.dtype))
    real = x @ params["input.W"] + params["input.b"]
    noop = ad.reshape(params["noop"], (1, params.config.d_model))
    return ad.concat([real, noop], axis=0)


def encode_stack(params: ArlsParams, name: str, h0: Tensor, allowed: np.ndarray, trace=None) -> Tensor:
    x = h0
    for layer in range(params.config.enc_layers):
        x = _block(params, f"{name}.{layer}", x, None, allowed, trace)
    return _norm(params, name + ".ln", x)


def encode(
    h0: Tensor,
    masks: AttentionMasks,
    params: ArlsParams,
    assigned: np.ndarray | None = None,
    trace: list | None = None,
    lam: float | Tensor | None = None,
) -> Tensor:
    """Run both encoders on the same ``h0`` and mix them convexly.

    With ``assigned`` (N x (JM+1) booleans) every trajectory gets its own pass
    in which assigned operations are hidden as keys from all other rows; the
    result is then N x (JM+1) x d.
    """
    job_allowed, mach_allowed = masks.job, masks.machine
    if assigned is not None:
        keep = ~np.asarray(assigned, dtype=bool)[:, None, :] | np.eye(len(masks.job), dtype=bool)
        job_allowed = job_allowed & keep
        mach_allowed = mach_allowed & keep
    h_job = encode_stack(params, "job", h0, job_allowed, trace)
    h_mach = encode_stack(params, "mach", h0, mach_allowed, trace)
    if lam is None:
        lam = params.lam()
    if isinstance(lam, Tensor):
        return h_job * lam + h_mach * (1.0 - lam)
    if lam == 1.0:
        return h_job
    if lam == 0.0:
        return h_mach
    return ad.add(ad.scale(h_job, lam), ad.scale(h_mach, 1.0 - lam))


def decode_step(
    h_enc: Tensor,
    last: np.ndarray | None,
    assigned: np.ndarray,
    params: ArlsParams,
    trace: list | None = None,
) -> Tensor:
    """Clipped logits (N x (JM+1)) for the next choice of N parallel trajectories.

    ``h_enc`` is (S, d) shared by all trajectories or (N, S, d) per trajectory;
    ``last`` holds the slot each trajectory chose previously (None at t = 0,
    where the learned start token is the query). Assigned slots get the mask
    value.
    """
    cfg = params.config
    assigned = np.asarray(assigned, dtype=bool)
    n, S = assigned.shape
    d = cfg.d_model
    if last is None:
        query = ad.add(Tensor(np.zeros((n, d), dtype=params.dtype)), params["start"])
    elif h_enc.data.ndim == 2:
        query = ad.gather_rows(h_enc, last)
    else:
        flat = ad.reshape(h_enc, (n * S, d))
        query = ad.gather_rows(flat, np.arange(n) * S + np.asarray(last))
    x = ad.reshape(query, (n, 1, d))
    allowed = ~assigned[:, None, :]  # (n, 1, S)
    for layer in range(cfg.dec_layers):
        x = _block(params, f"dec.{layer}", x, h_enc, allowed, trace)
    q = _norm(params, "dec.ln", x) @ params["head.Wq"]  # (n, 1, dk)
    k = h_enc @ params["head.Wk"]  # (S, dk) or (n, S, dk)
    k_t = ad.transpose(k, (1, 0)) if k.data.ndim == 2 else ad.transpose(k, (0, 2, 1))
    scores = ad.reshape(q @ k_t, (n, S))
    logits = ad.scale(ad.tanh(ad.scale(scores, 1.0 / math.sqrt(cfg.d_k))), cfg.clip)
    return ad.mask_add(logits, ~assigned)


def action_distribution(logits: Tensor, ready_mask: np.ndarray) -> Tensor:
    """Softmax restricted to ready slots (assigned ones are already masked in ``logits``)."""
    ready_mask = np.asarray(ready_mask, dtype=bool)
    if not ready_mask.any(axis=-1).all():
        raise RuntimeError("no ready operation in a non-terminal state")
    return ad.softmax(ad.mask_add(logits, ready_mask))


# -- rollouts ---------------------------------------------------------------------


@dataclass
class Trajectory:
    instance: Instance
    actions: list[int]
    log_probs: np.ndarray
    makespan: int
    advantage: float | None = None
    schedule: ScheduleResult | None = None

    @property
    def total_log_prob(self) -> float:
        return float(self.log_probs.sum())


@dataclass
class RolloutBatch:
    trajectories: list[Trajectory]
    log_prob: Tensor  # (N,) summed over steps, differentiable

    @property
    def makespans(self) -> np.ndarray:
        return np.array([t.makespan for t in self.trajectories], dtype=np.float64)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = probs.astype(np.float64)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cdf[:, -1]
    choice = (cdf <= u[:, None]).sum(axis=1)
    # never land on a zero-probability slot through rounding
    for i, c in enumerate(choice):
        if c >= p.shape[1] or p[i, c] == 0.0:
            choice[i] = int(np.flatnonzero(p[i] > 0)[-1])
    return choice


def rollout_batch(
    inst: Instance,
    params: ArlsParams,
    n: int = 1,
    mode: str = "sample",
    rng: np.random.Generator | int | None = None,
    forced: Sequence[Sequence[int]] | None = None,
) -> RolloutBatch:
    """Run ``n`` trajectories on ``inst`` in lockstep, sharing one encoder pass
    (or one encoder pass per step and trajectory when re-encoding).

    ``forced`` replays given action sequences instead of choosing actions,
    which yields their log-probabilities under ``params``.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    if forced is not None:
        n = len(forced)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cfg = params.config
    states = [init_state(inst, allow_noop=cfg.allow_noop) for _ in range(n)]
    S = inst.num_ops + 1
    masks = attention_masks(inst)
    h0 = embed_initial(inst, params)
    h_static = None if cfg.reencode_every_step else encode(h0, masks, params)

    last = None
    step_logps: list[np.ndarray] = []
    total = None
    actions: list[list[int]] = [[] for _ in range(n)]
    while True:
        active = np.array([not s.is_terminal() for s in states])
        if not active.any():
            break
        assigned = np.stack([s.assigned_mask() for s in states])
        ready = np.zeros((n, S), dtype=bool)
        for i, s in enumerate(states):
            if active[i]:
                ready[i] = s.ready_mask()
            else:
                ready[i, -1] = True  # finished rows idle on the no-op slot
        h_enc = h_static if h_static is not None else encode(h0, masks, params, assigned)
        logits = decode_step(h_enc, last, assigned, params)
        probs = action_distribution(logits, ready)
        if forced is not None:
            t = len(step_logps)
            choice = np.array(
                [seq[t] if t < len(seq) else inst.noop_id for seq in forced], dtype=np.int64
            )
        elif mode == "greedy":
            choice = probs.data.argmax(axis=1)
        else:
            choice = _sample_rows(probs.data, rng)
        logp = ad.mul(ad.log(ad.pick(probs, choice)), active.astype(params.dtype))
        total = logp if total is None else total + logp
        step_logps.append(logp.data.astype(np.float64))
        for i, s in enumerate(states):
            if active[i]:
                s.apply(int(choice[i]))
                actions[i].append(int(choice[i]))
        last = choice

    logps = np.stack(step_logps, axis=1)
    trajectories = []
    for i, s in enumerate(states):
        steps = len(actions[i])
        trajectories.append(
            Trajectory(
                inst,
                actions[i],
                logps[i, :steps].copy(),
                s.makespan(),
                schedule=ScheduleResult.from_state(s),
            )
        )
    return RolloutBatch(trajectories, total)


def sample_trajectory(
    inst: Instance,
    params: ArlsParams,
    mode: str = "sample",
    seed: int | np.random.Generator | None = None,
) -> Trajectory:
    with ad.no_grad():
        return rollout_batch(inst, params, 1, mode, seed).trajectories[0]


def sequence_log_prob(inst: Instance, params: ArlsParams, actions: Sequence[int]) -> Tensor:
    """Differentiable total log-probability of one complete action sequence."""
    batch = rollout_batch(inst, params, forced=[list(actions)])
    return ad.reshape(batch.log_prob, ())
