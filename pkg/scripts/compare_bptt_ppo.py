"""Sample-efficiency comparison of BPTT and PPO on the crawler.

Writes one learning-curve CSV per (method, seed[, std]) into --out and a
summary.csv with the env steps each run needed to reach half of BPTT's
final reward.

    python3 scripts/compare_bptt_ppo.py --out runs/compare --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import csv
import math
from pathlib import Path

from diffsoft import Simulator, builtin_scene
from diffsoft.training import TrainConfig, train_bptt, train_ppo


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--stds", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    ap.add_argument("--horizon", type=int, default=100)
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--ppo-steps", type=int, default=None,
                    help="PPO env-step budget per run (default: BPTT's total)")
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulator(builtin_scene("crawler"))
    config = TrainConfig(lr=args.lr, eval_horizon=args.horizon)
    rows = []
    for seed in args.seeds:
        _, blog = train_bptt(sim, args.horizon, args.iters, seed, config=config)
        blog.write_csv(out / f"bptt_seed{seed}.csv")
        threshold = 0.5 * blog.rewards[-1]
        b_steps = blog.steps_to_reach(threshold)
        rows.append(["bptt", seed, "", blog.rewards[-1], threshold, b_steps])
        print(f"seed {seed} bptt final {blog.rewards[-1]:.4f} half-reward steps {b_steps}", flush=True)
        budget = args.ppo_steps or args.iters * args.horizon
        ppo_iters = math.ceil(budget / (args.batch * args.horizon))
        for std in args.stds:
            _, plog = train_ppo(sim, args.horizon, ppo_iters, args.batch, seed,
                                init_log_std=math.log(std), config=config)
            plog.write_csv(out / f"ppo_std{std}_seed{seed}.csv")
            p_steps = plog.steps_to_reach(threshold)
            rows.append(["ppo", seed, std, plog.rewards[-1], threshold, p_steps])
            print(f"seed {seed} ppo std {std} final {plog.rewards[-1]:.4f} half-reward steps {p_steps}",
                  flush=True)

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "init_std", "final_reward", "threshold", "steps_to_threshold"])
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


if __name__ == "__main__":
    main()
