"""Compare the two threshold schedules on the baseline scenario.

Prints blocks mined, mean round length and mean winning score per policy
and bump size, over a few seeds.
"""

import argparse
import dataclasses
import statistics

from coinai.sim import bundled_scenario_path, load_scenario, report, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ticks", type=int, default=200)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--bumps", type=float, nargs="+", default=[0.0, 0.01, 0.02])
    args = ap.parse_args()

    base = load_scenario(bundled_scenario_path("baseline.cfg"))
    print(f"{'policy':<16}{'bump':>6}{'blocks':>8}{'round':>8}{'score':>8}")
    for bump in args.bumps:
        policy = "decay_only" if bump == 0 else "bump_then_decay"
        schedule = dataclasses.replace(base.schedule, policy=policy, bump=bump, base=None)
        blocks, rounds, scores = [], [], []
        for seed in args.seeds:
            res = run(dataclasses.replace(base, schedule=schedule, ticks=args.ticks), seed)
            _, stats = report(res.rows)
            blocks.append(stats["blocks_mined"])
            if stats["mean_round_duration"] is not None:
                rounds.append(stats["mean_round_duration"])
            scores += [b.reported_score for b in res.chain.blocks[1:]]
        mean = lambda xs: statistics.fmean(xs) if xs else float("nan")
        print(f"{policy:<16}{bump:>6.2f}{mean(blocks):>8.1f}{mean(rounds):>8.1f}{mean(scores):>8.3f}")


if __name__ == "__main__":
    main()
