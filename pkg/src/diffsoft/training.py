"""Policy training: Adam, BPTT through the simulator, and a PPO baseline.

Seeds are split with ``numpy.random.SeedSequence``: spawn key ``(0,)``
initializes the policy (shared by both trainers, so they start from the
same mean policy) and key ``(1, iteration, trajectory)`` drives the noise
of each PPO trajectory.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layer import Simulator
from .policy import A_MAX, A_MIN, PolicyParams, feature_dim, features, init_policy, policy_forward
from .rollout import Trajectory, bptt_gradient, rollout


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update that *descends* ``grads``; returns new arrays."""
    state.step += 1
    t = state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


@dataclass
class LogRecord:
    iteration: int
    reward: float
    env_steps: int
    wall_ms: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, iteration: int, reward: float, env_steps: int, wall_ms: float) -> None:
        self.records.append(LogRecord(iteration, reward, env_steps, wall_ms))

    @property
    def rewards(self) -> list[float]:
        return [r.reward for r in self.records]

    @property
    def env_steps(self) -> list[int]:
        return [r.env_steps for r in self.records]

    def steps_to_reach(self, threshold: float) -> int | None:
        """Environment steps at the first record with reward >= threshold."""
        for r in self.records:
            if r.reward >= threshold:
                return r.env_steps
        return None

    def to_csv(self, wall_clock: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "reward", "env_steps", "wall_ms"])
        for r in self.records:
            w.writerow([r.iteration, repr(float(r.reward)), r.env_steps, f"{r.wall_ms:.3f}" if wall_clock else "0"])
        return buf.getvalue()

    def write_csv(self, path, wall_clock: bool = True) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv(wall_clock))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    eval_horizon: int = 100
    init_out_scale: float = 1.0
    # PPO
    batch_size: int = 4
    epochs: int = 10
    clip: float = 0.2
    init_log_std: float = math.log(0.1)


def initial_policy(sim: Simulator, seed: int, config: TrainConfig | None = None,
                   init_log_std: float | None = None) -> PolicyParams:
    config = config or TrainConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return init_policy(feature_dim(sim.scene.n_vertices), sim.scene.n_fibers, rng,
                       init_log_std=init_log_std, out_scale=config.init_out_scale)


def _evaluate(sim, params, H, keep_contexts=False) -> Trajectory:
    return rollout(sim, params.mean_part(), H, deterministic=True, keep_contexts=keep_contexts)


def train_bptt(
    sim: Simulator,
    H: int,
    iterations: int,
    seed: int,
    config: TrainConfig | None = None,
    params: PolicyParams | None = None,
    callback=None,
) -> tuple[PolicyParams, TrainLog]:
    """One deterministic rollout, one BPTT gradient and one Adam step per iteration.

    Log row 0 evaluates the initial policy; row ``i`` evaluates the policy
    after ``i`` updates with a deterministic ``eval_horizon`` rollout.
    """
    config = config or TrainConfig()
    params = (params or initial_policy(sim, seed, config)).mean_part()
    adam = AdamState(lr=config.lr)
    log = TrainLog()
    t0 = time.perf_counter()
    reuse = H == config.eval_horizon
    ev = _evaluate(sim, params, config.eval_horizon, keep_contexts=reuse)
    log.add(0, ev.reward, 0, 0.0)
    for it in range(1, iterations + 1):
        grad, _ = bptt_gradient(sim, params, H, traj=ev if reuse else None)
        # ascend the reward: Adam descends the negated gradient
        new = adam_step(adam, params.as_dict(), {k: -g for k, g in grad.as_dict().items()})
        params = PolicyParams(**new)
        ev = _evaluate(sim, params, config.eval_horizon, keep_contexts=reuse)
        log.add(it, ev.reward, it * H, (time.perf_counter() - t0) * 1e3)
        if callback:
            callback(log.records[-1])
    return params, log


def gaussian_log_prob(mean, log_std, sample):
    """Row-wise log density of a diagonal Gaussian, summed over action entries."""
    z = (sample - mean) / ad.exp(log_std)
    per = ad.square(z) * -0.5 - log_std - 0.5 * math.log(2 * math.pi)
    return ad.sum(per, axis=-1)


def ppo_surrogate(pv: dict, feats: np.ndarray, samples: np.ndarray, logp_old: np.ndarray,
                  adv: np.ndarray, clip: float):
    """Negated clipped surrogate objective, averaged over samples (a ``Var``)."""
    mean = policy_forward(pv, feats)
    logp = gaussian_log_prob(mean, pv["log_std"], samples)
    ratio = ad.exp(logp - logp_old)
    surr = ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)
    return -ad.mean(surr)


def normalized_advantages(returns: np.ndarray) -> np.ndarray:
    returns = np.asarray(returns, dtype=np.float64)
    centered = returns - returns.mean()
    std = returns.std()
    return centered / (std + 1e-8)


def ppo_update(params: PolicyParams, adam: AdamState, batch: list, config: TrainConfig) -> PolicyParams:
    """K epochs of full-batch Adam steps on the clipped surrogate."""
    feats = np.concatenate([b[0] for b in batch])
    samples = np.concatenate([b[1] for b in batch])
    adv = np.concatenate([np.full(len(b[0]), b[2]) for b in batch])
    names = params.names()
    with ad.no_grad():
        logp_old = gaussian_log_prob(
            policy_forward(params.as_dict(), feats), ad.constant(params.log_std), samples
        ).value
    for _ in range(config.epochs):
        pv = {k: ad.variable(getattr(params, k)) for k in names}
        loss = ppo_surrogate(pv, feats, samples, logp_old, adv, config.clip)
        grads = ad.gradient(loss, [pv[k] for k in names])
        new = adam_step(adam, params.as_dict(), {k: g.value for k, g in zip(names, grads)})
        params = PolicyParams(**new)
    return params


def _trajectory_features(sim: Simulator, traj: Trajectory) -> np.ndarray:
    center = sim.scene.policy_io.center_x
    return np.stack([features(s.x, s.v, center).value for s in traj.states[:-1]])


def train_ppo(
    sim: Simulator,
    H: int,
    iterations: int,
    batch_size: int,
    seed: int,
    init_log_std: float | None = None,
    config: TrainConfig | None = None,
    callback=None,
    stop=None,
) -> tuple[PolicyParams, TrainLog]:
    """PPO with a Gaussian policy whose mean network matches the BPTT policy.

    Each episode's advantage is its terminal reward, normalized across the
    batch (no value network).  ``stop(log)`` may end training early.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    config = config or TrainConfig()
    log_std0 = config.init_log_std if init_log_std is None else init_log_std
    params = initial_policy(sim, seed, config, init_log_std=log_std0)
    adam = AdamState(lr=config.lr)
    log = TrainLog()
    t0 = time.perf_counter()
    log.add(0, _evaluate(sim, params, config.eval_horizon).reward, 0, 0.0)
    for it in range(1, iterations + 1):
        trajs = []
        for j in range(batch_size):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, it, j)))
            trajs.append(rollout(sim, params, H, deterministic=False, rng=rng))
        adv = normalized_advantages([t.reward for t in trajs])
        batch = [(_trajectory_features(sim, t), np.stack(t.samples), adv[j]) for j, t in enumerate(trajs)]
        params = ppo_update(params, adam, batch, config)
        ev = _evaluate(sim, params, config.eval_horizon)
        log.add(it, ev.reward, it * batch_size * H, (time.perf_counter() - t0) * 1e3)
        if callback:
            callback(log.records[-1])
        if stop is not None and stop(log):
            break
    return params, log


__all__ = [
    "A_MAX",
    "A_MIN",
    "AdamState",
    "LogRecord",
    "PolicyParams",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "gaussian_log_prob",
    "initial_policy",
    "normalized_advantages",
    "policy_forward",
    "ppo_surrogate",
    "ppo_update",
    "train_bptt",
    "train_ppo",
]
