"""Finite-difference oracles for the implicit backward passes.

Every oracle re-runs the forward solve on perturbed inputs and never touches
the adjoint machinery, so agreement is an independent check.  The re-solves
may use a separate, tighter ``oracle`` simulator: finite differences of a
solve converged to ``tol`` carry noise of order ``tol / (curvature * step)``,
which matters for the dynamic objective (forces enter it scaled by ``h^2``).
Errors are reported per input block as ``max|g - fd| / max|fd|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layer import Simulator, SolverConfig
from .policy import PolicyParams
from .rollout import bptt_gradient, rollout
from .scene import Scene, State, initial_state, scene_from_dict
from .training import initial_policy


@dataclass
class CheckResult:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def error(self) -> float:
        scale = float(np.max(np.abs(self.numeric))) if self.numeric.size else 0.0
        diff = float(np.max(np.abs(self.analytic - self.numeric))) if self.numeric.size else 0.0
        if scale == 0.0:
            return diff
        return diff / scale


def _central(fn, x: np.ndarray, step: float, entries=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    idx = range(x.size) if entries is None else entries
    for k in idx:
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[k] += step
        xm[k] -= step
        flat[k] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * step)
    return out


def random_actions(rng: np.random.Generator, f: int) -> np.ndarray:
    return rng.uniform(0.6, 1.0, f)


def check_quasistatic(sim: Simulator, seed: int, fd_step: float = 1e-5, a=None,
                      oracle: Simulator | None = None) -> list[CheckResult]:
    """dL/da for ``L = w . x1`` with random weights ``w``."""
    rng = np.random.default_rng(seed)
    a = random_actions(rng, sim.scene.n_fibers) if a is None else np.asarray(a, dtype=np.float64)
    w = rng.standard_normal((sim.scene.n_vertices, 2))
    x1, ctx = sim.quasistatic_forward(a)
    da = sim.quasistatic_backward(ctx, w)
    oracle = oracle or sim

    def loss(av):
        return float(np.sum(w * oracle.quasistatic_forward(av, x_init=x1)[0]))

    return [CheckResult("a", da, _central(loss, a, fd_step))]


def random_state(sim: Simulator, rng: np.random.Generator, speed: float = 0.1) -> State:
    state = initial_state(sim.scene)
    v = speed * rng.standard_normal(state.v.shape)
    v[list(sim.scene.pinned)] = 0.0
    return State(state.x.copy(), v)


def check_dynamic(sim: Simulator, seed: int, fd_step: float = 1e-5, state0: State | None = None,
                  a=None, oracle: Simulator | None = None) -> list[CheckResult]:
    """Gradients with respect to ``(x0, v0, a)`` of ``L = w . x1 + u . v1``."""
    rng = np.random.default_rng(seed)
    state0 = random_state(sim, rng) if state0 is None else state0
    a = random_actions(rng, sim.scene.n_fibers) if a is None else np.asarray(a, dtype=np.float64)
    n = sim.scene.n_vertices
    w = rng.standard_normal((n, 2))
    u = rng.standard_normal((n, 2))
    s1, ctx = sim.dynamic_forward(state0, a)
    dx0, dv0, da = sim.dynamic_backward(ctx, w, u)
    oracle = oracle or sim

    def loss(x0, v0, av):
        s = oracle.dynamic_forward(State(x0, v0), av)[0]
        return float(np.sum(w * s.x) + np.sum(u * s.v))

    # pinned rows of x0 and v0 are fixed by the scene
    free = [2 * i + c for i in sim.free for c in range(2)]
    x0, v0 = state0.x, state0.v
    fd_x0 = _central(lambda z: loss(z, v0, a), x0, fd_step, free)
    fd_v0 = _central(lambda z: loss(x0, z, a), v0, fd_step, free)
    fd_a = _central(lambda z: loss(x0, v0, z), a, fd_step)
    mask = np.zeros(x0.size, dtype=bool)
    mask[free] = True
    mask = mask.reshape(x0.shape)
    return [
        CheckResult("x0", dx0[mask], fd_x0[mask]),
        CheckResult("v0", dv0[mask], fd_v0[mask]),
        CheckResult("a", da, fd_a),
    ]


def check_bptt(sim: Simulator, seed: int, H: int = 5, n_params: int = 5, fd_step: float = 1e-4,
               params: PolicyParams | None = None) -> list[CheckResult]:
    """BPTT reward gradient over ``n_params`` random policy entries with a nonzero gradient."""
    params = initial_policy(sim, seed) if params is None else params.mean_part()
    grad, _ = bptt_gradient(sim, params, H)
    g = grad.flat()
    theta = params.flat()
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(g)
    if candidates.size == 0:
        candidates = np.arange(g.size)
    picks = np.sort(rng.choice(candidates, min(n_params, candidates.size), replace=False))

    def reward_at(vec):
        return rollout(sim, params.with_flat(vec), H).reward

    fd = _central(reward_at, theta, fd_step, picks)
    return [CheckResult("params", g[picks], fd[picks])]


def random_scene(rng: np.random.Generator, cols: int | None = None, pinned: bool = True,
                 contact: bool = True) -> Scene:
    """Small jittered strip mesh with random fibers, material and optional ground contact.

    At most 12 vertices; the left column is pinned when ``pinned``.
    """
    cols = int(rng.integers(2, 6)) if cols is None else cols
    width, height = 0.4 * (cols - 1), 0.3
    verts = []
    for r in range(2):
        for c in range(cols):
            jitter = rng.uniform(-0.04, 0.04, 2)
            verts.append([c * width / (cols - 1) + jitter[0], r * height + jitter[1]])
    verts = np.array(verts)
    # lift so the body hovers slightly above or sinks slightly into the ground
    verts[:, 1] += rng.uniform(-0.02, 0.05)
    tris = []
    for c in range(cols - 1):
        b0, b1, t0, t1 = c, c + 1, cols + c, cols + c + 1
        tris += [[b0, b1, t1], [b0, t1, t0]]
    fibers = []
    for c in range(cols - 1):
        for r in range(2):
            i, j = r * cols + c, r * cols + c + 1
            fibers.append({"i": i, "j": j, "stiffness": float(rng.uniform(20, 200))})
    doc = {
        "vertices": verts.tolist(),
        "triangles": tris,
        "fibers": fibers,
        "material": {
            "mu": float(rng.uniform(20, 200)),
            "lambda": float(rng.uniform(20, 200)),
            "density": float(rng.uniform(20, 60)),
        },
        "pinned": [0, cols] if pinned else [],
        "gravity": [0.0, -9.8],
        "dt": 0.01,
        "contact": {
            "k_collision": 1e4 if contact else 0.0,
            "k_friction": 50.0 if contact else 0.0,
            "eps": 1e-2,
        },
    }
    return scene_from_dict(doc)


def tight_simulator(scene: Scene, tol: float = 1e-10, terms=None) -> Simulator:
    return Simulator(scene, SolverConfig(tol=tol), terms=terms)


ORACLE_TOL = 1e-12


def oracle_simulator(sim: Simulator) -> Simulator:
    """Copy of ``sim`` with the forward tolerance tightened to ``ORACLE_TOL``."""
    tol = min(sim.tolerance(), ORACLE_TOL)
    return Simulator(sim.scene, SolverConfig(tol=tol, max_iters=max(sim.config.max_iters, 10000)),
                     terms=sim.model.terms)
