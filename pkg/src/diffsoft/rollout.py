"""Episodes with a policy in the loop, the displacement reward, and BPTT."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layer import ForwardError, Simulator, StepContext
from .policy import A_MAX, A_MIN, PolicyParams, features, policy_forward
from .scene import State, initial_state


class RolloutError(RuntimeError):
    def __init__(self, step: int, cause: ForwardError):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.report = cause.report


@dataclass
class Trajectory:
    states: list  # H + 1 states
    actions: list  # H applied (clamped) activation vectors
    reward: float = 0.0
    samples: list = field(default_factory=list)  # unclamped Gaussian draws, stochastic rollouts only
    contexts: list = field(default_factory=list, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.actions)


def displacement(x_start: np.ndarray, x_end: np.ndarray) -> float:
    """Mean horizontal displacement of the vertices."""
    return float(np.mean(x_end[:, 0] - x_start[:, 0]))


def reward(traj: Trajectory) -> float:
    return displacement(traj.states[0].x, traj.states[-1].x)


def act(sim: Simulator, params: PolicyParams, state: State) -> np.ndarray:
    feat = features(state.x, state.v, sim.scene.policy_io.center_x)
    return policy_forward(params, feat).value


def rollout(
    sim: Simulator,
    params: PolicyParams | None,
    H: int,
    deterministic: bool = True,
    rng: np.random.Generator | None = None,
    actions=None,
    keep_contexts: bool = False,
    state0: State | None = None,
) -> Trajectory:
    """Run ``H`` dynamic steps.

    Actions come from ``params`` (the policy mean, plus Gaussian noise with
    ``exp(params.log_std)`` when ``deterministic`` is false) or, if ``params``
    is None, from ``actions`` (a fixed vector or a ``(H, f)`` array).
    """
    if H < 1:
        raise ValueError("horizon must be >= 1")
    if not deterministic and (rng is None or params is None or params.log_std is None):
        raise ValueError("stochastic rollouts need an rng and a policy with log_std")
    state = (state0 or initial_state(sim.scene)).copy()
    traj = Trajectory([state], [])
    fixed = None if actions is None else np.asarray(actions, dtype=np.float64)
    for t in range(H):
        if params is not None:
            a = act(sim, params, state)
            if not deterministic:
                sample = a + np.exp(params.log_std) * rng.standard_normal(a.shape)
                traj.samples.append(sample)
                a = np.clip(sample, A_MIN, A_MAX)
        else:
            a = fixed if fixed.ndim == 1 else fixed[t]
        try:
            state, ctx = sim.dynamic_forward(state, a)
        except ForwardError as exc:
            raise RolloutError(t, exc) from exc
        traj.states.append(state)
        traj.actions.append(np.array(a, dtype=np.float64))
        if keep_contexts:
            traj.contexts.append(ctx)
    traj.reward = reward(traj)
    return traj


def bptt_gradient(
    sim: Simulator,
    params: PolicyParams,
    H: int,
    traj: Trajectory | None = None,
    reward_scale: float = 1.0,
) -> tuple[PolicyParams, float]:
    """Gradient of ``reward_scale * reward`` with respect to the policy parameters.

    Runs a deterministic rollout (or reuses ``traj`` if it carries step
    contexts), then sweeps backwards through each implicit step and each
    policy evaluation.  Returns ``(gradient, reward)``; ascend the gradient.
    """
    if traj is None or len(traj.contexts) != H:
        traj = rollout(sim, params, H, deterministic=True, keep_contexts=True)
    n = sim.scene.n_vertices
    center = sim.scene.policy_io.center_x
    names = params.mean_part().names()
    grads = {k: np.zeros_like(getattr(params, k)) for k in names}
    # work with the loss L = -scale * reward
    gx = np.zeros((n, 2))
    gx[:, 0] = -reward_scale / n
    gv = np.zeros((n, 2))
    for t in reversed(range(H)):
        ctx: StepContext = traj.contexts[t]
        dx0, dv0, da = sim.dynamic_backward(ctx, gx, gv)
        state = traj.states[t]
        xv, vv = ad.variable(state.x), ad.variable(state.v)
        pv = {k: ad.variable(getattr(params, k)) for k in names}
        a = policy_forward(pv, features(xv, vv, center))
        res = ad.gradient(ad.dot(a, da), [pv[k] for k in names] + [xv, vv])
        for k, g in zip(names, res):
            grads[k] += g.value
        gx = dx0 + res[-2].value
        gv = dv0 + res[-1].value
    grad = PolicyParams(**{k: -g for k, g in grads.items()})
    return grad, traj.reward * reward_scale


def trajectory_records(traj: Trajectory) -> list[dict]:
    recs = []
    for t, s in enumerate(traj.states):
        rec = {"t": t, "x": s.x.tolist(), "v": s.v.tolist()}
        if t < len(traj.actions):
            rec["a"] = traj.actions[t].tolist()
        recs.append(rec)
    return recs


def write_trajectory(traj: Trajectory, path) -> None:
    """Newline-delimited JSON, one record per state; the last record has no ``a``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in trajectory_records(traj):
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
