"""Error and insight propagation along sparsity sweeps, plus the baseline suite.

Writes per-seed sweep CSVs, baselines.csv, a summary and a manifest, and
prints seed-averaged tables.

    python scripts/propagation_sweeps.py --out results/sweeps --seeds 0 1 2 3 4
"""

import argparse
import logging

import numpy as np

from topolab.causal import baseline_suite, sweep_error_propagation, sweep_insight_propagation
from topolab.harness import ExperimentConfig, RunManifest, partition_by_correctness, summarize_baselines, write_report
from topolab.rng import derive_seed
from topolab.topology import TopologyKind, chain, densify_path, full, sparsify_path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="experiment config JSON (defaults to the six-agent reference setup)")
    ap.add_argument("--out", default="results/sweeps")
    ap.add_argument("--seeds", type=int, nargs="+")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(task_count=20_000, accuracy_reps=5)
    seeds = args.seeds or cfg.sweep_seeds
    tasks = cfg.tasks()
    n = len(cfg.agents)
    reports, rows = [], []
    for seed in seeds:
        run = cfg.run_config(seed)
        correct, _ = partition_by_correctness(full(n), cfg.agents, tasks, run, cfg.pool_size, 0)
        _, incorrect = partition_by_correctness(chain(n), cfg.agents, tasks, run, 0, cfg.pool_size)
        path_seed = derive_seed(seed, "path")
        reports.append(sweep_error_propagation(cfg.agents, correct, run, sparsify_path(n, np.random.default_rng(path_seed)), cfg.reverify, cfg.accuracy_reps))
        reports.append(sweep_insight_propagation(cfg.agents, incorrect, run, densify_path(n, np.random.default_rng(path_seed)), cfg.reverify, cfg.accuracy_reps))
        if seed == seeds[0]:
            rows = baseline_suite(cfg.agents, correct, incorrect, run, [TopologyKind.parse(k) for k in cfg.baselines], cfg.accuracy_reps)
        logging.info("seed %d: %d correct, %d incorrect tasks", seed, len(correct), len(incorrect))
    write_report(reports, args.out, RunManifest.for_config("propagation_sweeps", seeds[0], cfg), rows)
    print(open(f"{args.out}/summary.txt").read())


if __name__ == "__main__":
    main()
