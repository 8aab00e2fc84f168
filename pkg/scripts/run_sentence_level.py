"""Sentence-level experiment: train, evaluate and print the triage table."""
import argparse
import dataclasses

from conradlab.policy import Scenario
from conradlab.runio import RunConfig, load_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/sentence_level")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = dataclasses.replace(cfg, policy=dataclasses.replace(cfg.policy, scenario=Scenario.SENTENCE),
                              master_seed=args.seed, output_dir=args.out)
    run_experiment(cfg, "train")
    ev = run_experiment(cfg, "eval").summary
    print(f"ECE untrained {ev['untrained']['ece']:.3f}  trained {ev['trained']['ece']:.3f}")
    rows = run_experiment(cfg, "filter").summary["trained"]
    print(f"{'tau':>5} {'n':>6} {'precision':>9} {'coverage':>8}")
    for r in rows:
        prec = "-" if r["precision"] is None else f"{r['precision']:.3f}"
        print(f"{r['threshold']:>5} {r['retained_count']:>6} {prec:>9} {r['coverage']:>8.3f}")


if __name__ == "__main__":
    main()
