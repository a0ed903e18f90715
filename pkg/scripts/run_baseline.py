"""Run a bundled scenario and write metrics, chain and summary to an output directory."""

import argparse

from coinai.sim import bundled_scenario_path, load_scenario, run, write_outputs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default="baseline.cfg", help="bundled name or path")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--ticks", type=int)
    ap.add_argument("--out-dir", default="out/baseline")
    args = ap.parse_args()

    path = bundled_scenario_path(args.scenario) if "/" not in args.scenario else args.scenario
    sc = load_scenario(path)
    if args.ticks:
        sc.ticks = args.ticks
    result = run(sc, args.seed)
    out = write_outputs(result, args.out_dir)
    print((out / "summary.txt").read_text(), end="")
    print("miner outcomes:", result.miner_outcomes)


if __name__ == "__main__":
    main()
