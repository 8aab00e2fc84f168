"""Report-level experiment: train, evaluate in and out of distribution,
and compare against the confidence baselines."""
import argparse
import dataclasses
import json

from conradlab.runio import RunConfig, load_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key=value config (defaults if omitted)")
    ap.add_argument("--out", default="runs/report_level")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    if cfg.scenario.value != "ReportLevel":
        ap.error("config must use policy.scenario=ReportLevel")
    cfg = dataclasses.replace(cfg, master_seed=args.seed, output_dir=args.out)
    summary = {}
    for cmd in ("train", "eval", "ood", "baselines"):
        summary[cmd] = run_experiment(cfg, cmd).summary
    print(json.dumps(summary, indent=2, default=float))


if __name__ == "__main__":
    main()
