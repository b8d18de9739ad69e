"""Command-line entry point.

Exit codes: 0 success, 1 failed gradient check, 2 bad flags, 3 scene
errors, 4 solver non-convergence.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .energy import ALL_TERMS
from .layer import BackwardError, ForwardError, Simulator, SolverConfig
from .policy import PolicyParams
from .rollout import RolloutError, rollout, write_trajectory
from .scene import SceneError, builtin_scene, load_scene_file
from .training import TrainConfig, train_bptt, train_ppo

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_SCENE, EXIT_SOLVER = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _load_scene(spec: str):
    if spec.startswith("builtin:"):
        return builtin_scene(spec.split(":", 1)[1])
    path = Path(spec)
    if not path.is_file():
        raise SceneError(f"scene file not found: {spec}")
    return load_scene_file(path)


def _terms(text: str | None):
    if text is None:
        return None
    if text == "none":
        return ()
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = sorted(set(names) - set(ALL_TERMS))
    if bad:
        raise UsageError(f"unknown energy term(s) {bad}; choose from {sorted(ALL_TERMS)} or 'none'")
    return names


def _const_actions(text: str, f: int) -> np.ndarray:
    kind, _, value = text.partition(":")
    if kind != "const" or not value:
        raise UsageError(f"--actions expects const:VAL, got {text!r}")
    try:
        val = float(value)
    except ValueError:
        raise UsageError(f"--actions value is not a number: {value!r}") from None
    if not val > 0:
        raise UsageError("--actions value must be > 0")
    return np.full(f, val)


def _simulator(args, scene) -> Simulator:
    return Simulator(scene, SolverConfig(tol=args.tol), terms=_terms(args.terms))


def _check_out(path: str) -> Path:
    out = Path(path)
    if out.parent and not out.parent.exists():
        raise UsageError(f"output directory does not exist: {out.parent}")
    return out


def cmd_simulate(args) -> int:
    out = _check_out(args.out)
    if args.policy and args.actions:
        raise UsageError("--policy and --actions are mutually exclusive")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.policy and not Path(args.policy).is_file():
        raise UsageError(f"policy file not found: {args.policy}")
    scene = _load_scene(args.scene)
    sim = _simulator(args, scene)
    if args.policy:
        params = PolicyParams.load(args.policy)
        rng = np.random.default_rng(args.seed)
        traj = rollout(sim, params, args.steps, deterministic=not args.stochastic, rng=rng)
    else:
        actions = _const_actions(args.actions or "const:1.0", scene.n_fibers)
        traj = rollout(sim, None, args.steps, actions=actions)
    write_trajectory(traj, out)
    print(f"reward {traj.reward!r}", file=sys.stderr)
    return EXIT_OK


def cmd_quasistatic(args) -> int:
    out = _check_out(args.out) if args.out else None
    scene = _load_scene(args.scene)
    sim = _simulator(args, scene)
    a = _const_actions(args.actions, scene.n_fibers)
    x1, ctx = sim.quasistatic_forward(a)
    doc = {"x": x1.tolist(), "a": a.tolist(), "iterations": ctx.report.iterations,
           "grad_inf_norm": ctx.report.grad_inf_norm}
    text = json.dumps(doc) + "\n"
    if out:
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scene = _load_scene(args.scene)
    tol = args.tol if args.tol is not None else (1e-12 if args.mode == "bptt" else 1e-10)
    sim = Simulator(scene, SolverConfig(tol=tol), terms=_terms(args.terms))
    if args.mode == "quasistatic":
        results = gradcheck.check_quasistatic(sim, args.seed, fd_step=args.fd_step or 1e-5)
    elif args.mode == "dynamic":
        results = gradcheck.check_dynamic(sim, args.seed, fd_step=args.fd_step or 1e-5)
    else:
        results = gradcheck.check_bptt(sim, args.seed, H=args.horizon, fd_step=args.fd_step or 1e-4)
    ok = True
    for r in results:
        passed = r.error < args.threshold
        ok &= passed
        print(f"{r.name}\t{r.error:.3e}\t{'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_train(args) -> int:
    log_path = _check_out(args.log)
    if args.iters < 0:
        raise UsageError("--iters must be >= 0")
    if args.horizon < 1:
        raise UsageError("--horizon must be >= 1")
    if args.batch < 1:
        raise UsageError("--batch must be >= 1")
    if args.init_std is not None and not args.init_std > 0:
        raise UsageError("--init-std must be > 0")
    save = _check_out(args.save_policy) if args.save_policy else None
    scene = _load_scene(args.scene)
    sim = _simulator(args, scene)
    config = TrainConfig(lr=args.lr, eval_horizon=args.eval_horizon)

    def progress(rec):
        if args.verbose:
            print(f"iter {rec.iteration} reward {rec.reward:.6f} env_steps {rec.env_steps}", file=sys.stderr)

    if args.algo == "bptt":
        params, log = train_bptt(sim, args.horizon, args.iters, args.seed, config=config, callback=progress)
    else:
        log_std = None if args.init_std is None else math.log(args.init_std)
        params, log = train_ppo(sim, args.horizon, args.iters, args.batch, args.seed, init_log_std=log_std,
                                config=config, callback=progress)
    log.write_csv(log_path, wall_clock=not args.no_wall_clock)
    if save:
        params.save(save)
    print(repr(float(log.rewards[-1])))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffsoft", description="Differentiable 2D soft-body simulation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--scene", required=True, help="scene JSON path, or builtin:NAME")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float,
                       help="forward gradient tolerance (default 1e-6 * max(1, mean mass))")
        p.add_argument("--terms", help="comma-separated energy terms to enable, or 'none'")

    p = sub.add_parser("simulate", help="run a rollout and write the trajectory as NDJSON")
    common(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--policy", help="policy JSON written by --save-policy")
    p.add_argument("--actions", help="fixed activations, const:VAL")
    p.add_argument("--stochastic", action="store_true", help="sample from the policy's Gaussian")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("quasistatic", help="solve one quasistatic equilibrium")
    common(p)
    p.add_argument("--actions", default="const:1.0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quasistatic)

    p = sub.add_parser("gradcheck", help="compare implicit gradients against finite differences")
    common(p)
    p.add_argument("--mode", choices=["quasistatic", "dynamic", "bptt"], required=True)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    def train_flags(p):
        common(p)
        p.add_argument("--iters", type=int, required=True)
        p.add_argument("--horizon", type=int, default=100)
        p.add_argument("--eval-horizon", type=int, default=100)
        p.add_argument("--log", required=True)
        p.add_argument("--batch", type=int, default=4)
        p.add_argument("--init-std", type=float, help="initial PPO action std (default 0.1)")
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--save-policy")
        p.add_argument("--no-wall-clock", action="store_true", help="write 0 in the wall_ms column")
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("train", help="train a policy")
    train_flags(p)
    p.add_argument("--algo", choices=["bptt", "ppo"], required=True)
    for name, algo in (("train-bptt", "bptt"), ("train-ppo", "ppo")):
        p = sub.add_parser(name, help=f"alias for train --algo {algo}")
        train_flags(p)
        p.set_defaults(algo=algo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneError, OSError) as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except RolloutError as exc:
        print(f"solver did not converge at step {exc.step}: {exc.report}", file=sys.stderr)
        return EXIT_SOLVER
    except (ForwardError, BackwardError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
