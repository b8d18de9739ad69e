"""The differentiable simulation step.

Forward passes find an energy minimum by descent; backward passes use the
stationarity of that minimum instead of unrolling the solver.  For a loss
gradient ``dL/dx1`` the adjoint system ``H z = dL/dx1`` is solved by CG with
Hessian-vector products, and parameter gradients follow as mixed
second-derivative products ``z^T df/dp`` (``f = -grad_x``).

Pinned vertices are eliminated: only free rows are optimization variables
and only free rows enter the linear solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .energy import EnergyModel
from .minimize import CGReport, SolveReport, cg_solve, minimize
from .scene import Scene, State


class ForwardError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(f"{message}: {report}")
        self.report = report


class BackwardError(RuntimeError):
    def __init__(self, message: str, report: CGReport):
        super().__init__(f"{message}: {report}")
        self.report = report


@dataclass
class SolverConfig:
    tol: float | None = None  # None: 1e-6 * max(1, mean lumped mass)
    max_iters: int = 2000
    cg_tol: float = 1e-10
    cg_max_iters: int | None = None  # None: 10 * free DOF count


@dataclass
class StepContext:
    mode: str
    x1: np.ndarray
    a: np.ndarray
    x0: np.ndarray | None = None
    v0: np.ndarray | None = None
    report: SolveReport | None = None


class Simulator:
    """Quasistatic and backward-Euler steps over one scene, with their adjoints."""

    def __init__(self, scene: Scene, config: SolverConfig | None = None, terms=None):
        self.model = EnergyModel.from_scene(scene, terms)
        self.scene = scene
        self.config = config or SolverConfig()
        self.free = scene.free
        n = scene.n_vertices
        self._base = np.zeros((n, 2))
        pinned = list(scene.pinned)
        self._base[pinned] = scene.vertices[pinned]
        self._all_free = len(self.free) == n
        self._select = np.zeros((n, len(self.free)))
        self._select[self.free, np.arange(len(self.free))] = 1.0

    @property
    def masses(self) -> np.ndarray:
        return self.model.rest.masses

    def tolerance(self) -> float:
        if self.config.tol is not None:
            return self.config.tol
        return 1e-6 * max(1.0, float(np.mean(self.masses)))

    def full(self, xf):
        """Full ``(n, 2)`` positions from the free rows."""
        if self._all_free:
            return xf
        return ad.matmul(self._select, xf) + self._base

    def _minimize(self, objective, x_init):
        def fun(z):
            zv = ad.variable(z)
            e = objective(zv)
            (g,) = ad.gradient(e, [zv])
            return e.item(), g.value

        def value(z):
            return objective(ad.constant(z)).item()

        return minimize(fun, x_init, tol=self.tolerance(), max_iters=self.config.max_iters, value_fn=value)

    def _adjoint(self, objective, x1f, b):
        apply_H = ad.hvp_operator(objective, x1f)
        z, rep = cg_solve(apply_H, b, tol=self.config.cg_tol, max_iters=self.config.cg_max_iters)
        if not rep.converged:
            raise BackwardError("adjoint solve failed", rep)
        return z

    # ------------------------------------------------------------ quasistatic

    def _qs_energy(self, a):
        return lambda xf: self.model.total_potential(self.full(xf), a)

    def quasistatic_forward(self, a, x_init=None) -> tuple[np.ndarray, StepContext]:
        if not self.scene.pinned:
            raise ValueError("quasistatic mode needs pinned vertices (unpinned scenes have a singular Hessian)")
        a = np.asarray(a, dtype=np.float64)
        x_init = self.scene.vertices if x_init is None else np.asarray(x_init, dtype=np.float64)
        xf, rep = self._minimize(self._qs_energy(a), x_init[self.free])
        if not rep.converged:
            raise ForwardError("quasistatic forward did not converge", rep)
        x1 = self._base.copy()
        x1[self.free] = xf
        return x1, StepContext("quasistatic", x1, a.copy(), report=rep)

    def quasistatic_backward(self, ctx: StepContext, dL_dx1) -> np.ndarray:
        b = np.asarray(dL_dx1, dtype=np.float64)[self.free]
        if not np.any(b):
            return np.zeros_like(ctx.a)
        x1f = ctx.x1[self.free]
        z = self._adjoint(self._qs_energy(ctx.a), x1f, b)
        return ad.mixed_vjp(lambda xf, a: self.model.total_potential(self.full(xf), a), x1f, ctx.a, z)

    # ---------------------------------------------------------------- dynamic

    def dynamic_forward(self, state0: State, a) -> tuple[State, StepContext]:
        h = self.scene.dt
        a = np.asarray(a, dtype=np.float64)
        x0, v0 = state0.x, state0.v
        warm = (x0 + h * v0)[self.free]
        xf, rep = self._minimize(lambda z: self.model.incremental_potential(self.full(z), x0, v0, a), warm)
        if not rep.converged:
            raise ForwardError("dynamic forward did not converge", rep)
        x1 = self._base.copy()
        x1[self.free] = xf
        v1 = (x1 - x0) / h
        return State(x1, v1), StepContext("dynamic", x1, a.copy(), x0.copy(), v0.copy(), rep)

    def dynamic_backward(self, ctx: StepContext, dL_dx1, dL_dv1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradients with respect to ``(x0, v0, a)`` of a loss on ``(x1, v1)``."""
        h = self.scene.dt
        dL_dx1 = np.asarray(dL_dx1, dtype=np.float64)
        dL_dv1 = np.asarray(dL_dv1, dtype=np.float64)
        # v1 = (x1 - x0) / h
        u = dL_dx1 + dL_dv1 / h
        dx0 = -dL_dv1 / h
        dv0 = np.zeros_like(ctx.v0)
        da = np.zeros_like(ctx.a)
        b = u[self.free]
        if not np.any(b):
            return dx0, dv0, da
        x1f = ctx.x1[self.free]
        z = self._adjoint(
            lambda xf: self.model.incremental_potential(self.full(xf), ctx.x0, ctx.v0, ctx.a), x1f, b
        )
        gx0, gv0, ga = ad.mixed_vjp(
            lambda xf, x0, v0, a: self.model.incremental_potential(self.full(xf), x0, v0, a),
            x1f,
            (ctx.x0, ctx.v0, ctx.a),
            z,
        )
        return dx0 + gx0, dv0 + gv0, da + ga
