"""Share of blocks won per miner when one miner drops the free nonce.

In ``tx_combination`` mode a miner can only vary the hash by choosing a
different transaction subset, so with a thin mempool it explores fewer
architectures per attempt. This runs the baseline with miner m1 switched to
that mode and reports each miner's share of blocks.
"""

import argparse
import collections
import dataclasses

from coinai.sim import bundled_scenario_path, load_scenario, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ticks", type=int, default=300)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--rate", type=float, default=0.5, help="workload transactions per tick")
    args = ap.parse_args()

    base = load_scenario(bundled_scenario_path("baseline.cfg"))
    for mode in ("free_nonce", "tx_combination"):
        miners = [
            dataclasses.replace(m, config=dataclasses.replace(m.config, nonce_mode=mode)) if m.miner_id == "m1" else m
            for m in base.miners
        ]
        sc = dataclasses.replace(base, miners=miners, ticks=args.ticks,
                                 workload=dataclasses.replace(base.workload, rate=args.rate))
        wins = collections.Counter()
        for seed in args.seeds:
            wins.update(b.miner for b in run(sc, seed).chain.blocks[1:])
        total = sum(wins.values()) or 1
        shares = ", ".join(f"{m.miner_id} {wins[m.miner_id] / total:.2f}" for m in base.miners)
        print(f"m1 {mode:<15} blocks {sum(wins.values()):>3}  shares: {shares}")


if __name__ == "__main__":
    main()
