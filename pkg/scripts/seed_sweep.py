"""Train and evaluate over several master seeds and tabulate ECE before
and after training, one CSV row per (scenario, seed)."""
import argparse
import dataclasses
from pathlib import Path

from conradlab.policy import Scenario
from conradlab.runio import RunConfig, load_config, run_experiment, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/seed_sweep")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    args = ap.parse_args()

    base = load_config(args.config) if args.config else RunConfig()
    rows = []
    for scenario in Scenario:
        for seed in args.seeds:
            out = Path(args.out) / f"{scenario.value}_seed{seed}"
            cfg = dataclasses.replace(base, policy=dataclasses.replace(base.policy, scenario=scenario),
                                      master_seed=seed, output_dir=str(out))
            run_experiment(cfg, "train")
            s = run_experiment(cfg, "eval").summary
            rows.append([scenario.value, seed, s["untrained"]["ece"], s["trained"]["ece"],
                         s["untrained"]["mean_oracle_score"], s["trained"]["mean_oracle_score"]])
            print(*rows[-1])
    write_csv(Path(args.out) / "sweep.csv",
              ["scenario", "seed", "ece_untrained", "ece_trained", "green_untrained", "green_trained"], rows)


if __name__ == "__main__":
    main()
