"""Gradient descent with backtracking line search, and matrix-free CG."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

EPS = np.finfo(np.float64).eps
# below ROUNDOFF * eps * |f| a predicted decrease is treated as lost in rounding
ROUNDOFF = 1e3
CURVATURE_FLOOR = 1e-12


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    grad_inf_norm: float
    objective: float
    line_search_failures: int = 0
    history: list = field(default_factory=list, repr=False)


@dataclass
class CGReport:
    converged: bool
    iterations: int
    relative_residual: float
    breakdown: bool = False
    regularization: float = 0.0


def minimize(
    fun: Callable[[np.ndarray], tuple],
    x_init: np.ndarray,
    tol: float = 1e-6,
    max_iters: int = 2000,
    value_fn: Callable[[np.ndarray], float] | None = None,
    armijo: float = 1e-4,
    shrink: float = 0.5,
    min_step: float = 1e-12,
    max_step: float = 1.0,
) -> tuple[np.ndarray, SolveReport]:
    """Minimize a smooth objective by steepest descent with backtracking.

    ``fun(x)`` returns ``(value, gradient)``; ``value_fn(x)`` (optional) returns
    only the value and is used for line-search trials.  Each line search starts
    from the Barzilai-Borwein step ``s.y / y.y`` of the last two iterates
    (twice the previous accepted step when the curvature ``s.y`` is not
    positive), clamped to ``[min_step, max_step]``, and shrinks until the
    Armijo condition holds.

    Near the minimum the predicted decrease falls below the rounding noise of
    the objective and value comparisons stop being informative.  There the
    decrease along the step is measured by the trapezoid rule on the
    directional derivative, ``alpha/2 * (g(x) + g(x_trial)) . d``, which has no
    cancellation, and the tracked objective is advanced by that amount.  The
    objective recorded in ``report.history`` therefore never increases.
    """
    value_fn = value_fn or (lambda z: fun(z)[0])
    x = np.array(x_init, dtype=np.float64)
    f, g = fun(x)
    f = float(f)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    report = SolveReport(False, 0, gnorm, f, 0, [f])
    if gnorm <= tol:
        report.converged = True
        return x, report

    step = max_step
    x_prev = g_prev = None
    for it in range(1, max_iters + 1):
        slope = -float(np.vdot(g, g))
        if x_prev is not None:
            y = g - g_prev
            sy = float(np.vdot(x - x_prev, y))
            if sy > 0:
                step = sy / float(np.vdot(y, y))
        alpha = min(max(step, min_step), max_step)
        xscale = max(1.0, float(np.max(np.abs(x))))
        gmax = float(np.max(np.abs(g)))
        accepted = False
        gt = None
        while alpha * gmax > EPS * xscale:
            xt = x - alpha * g
            ft = float(value_fn(xt))
            target = armijo * alpha * slope
            if ft <= f + target:
                accepted, gt = True, None
                break
            if -target <= ROUNDOFF * EPS * (abs(f) + abs(ft)):
                _, gt = fun(xt)
                decrease = 0.5 * alpha * (slope - float(np.vdot(gt, g)))
                if decrease <= target:
                    accepted, ft = True, f + decrease
                    break
            alpha *= shrink
        report.iterations = it
        if not accepted:
            report.line_search_failures += 1
            break
        x_prev, g_prev = x, g
        x = xt
        if gt is None:
            f, g = fun(x)
            f = float(f)
        else:
            f, g = ft, gt
        report.history.append(f)
        step = 2.0 * alpha
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            report.converged = True
            break
    report.grad_inf_norm = gnorm
    report.objective = f
    return x, report


def _cg(apply_H, b, tol, max_iters, shift, floor):
    bnorm = np.sqrt(float(np.vdot(b, b)))
    z = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(np.vdot(r, r))
    it = 0
    while it < max_iters:
        Hp = apply_H(p) + shift * p
        pHp = float(np.vdot(p, Hp))
        if pHp <= floor * float(np.vdot(p, p)):
            return z, CGReport(False, it, np.sqrt(rr) / bnorm, breakdown=True, regularization=shift)
        alpha = rr / pHp
        z = z + alpha * p
        r = r - alpha * Hp
        it += 1
        rr_new = float(np.vdot(r, r))
        if np.sqrt(rr_new) <= tol * bnorm:
            # confirm against the true residual; restart if the recurrence drifted
            r = b - (apply_H(z) + shift * z)
            rr_new = float(np.vdot(r, r))
            if np.sqrt(rr_new) <= tol * bnorm:
                return z, CGReport(True, it, np.sqrt(rr_new) / bnorm, regularization=shift)
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    return z, CGReport(False, it, np.sqrt(rr) / bnorm, regularization=shift)


def cg_solve(
    apply_H: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    max_iters: int | None = None,
) -> tuple[np.ndarray, CGReport]:
    """Solve ``H z = b`` for a symmetric positive definite operator given as a closure.

    ``b`` may have any shape; inner products run over all entries.  A search
    direction whose curvature is below ``1e-12`` times the Rayleigh quotient
    of ``b`` counts as non-positive; the solve is then retried once with
    ``H + delta I``, ``delta = 1e-8`` times that quotient.
    """
    b = np.asarray(b, dtype=np.float64)
    if max_iters is None:
        max_iters = 10 * max(b.size, 1)
    bb = float(np.vdot(b, b))
    if bb == 0.0:
        return np.zeros_like(b), CGReport(True, 0, 0.0)
    # curvature below CURVATURE_FLOOR * (Rayleigh quotient of b) counts as non-positive
    scale = abs(float(np.vdot(b, apply_H(b)))) / bb
    floor = CURVATURE_FLOOR * scale
    z, rep = _cg(apply_H, b, tol, max_iters, 0.0, floor)
    if rep.breakdown:
        shift = 1e-8 * (scale or 1.0)
        z, rep2 = _cg(apply_H, b, tol, max_iters, shift, floor)
        rep2.iterations += rep.iterations
        return z, rep2
    return z, rep
