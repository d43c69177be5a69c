"""Accuracy under a persistent injected answer, by topology.

One agent is forced to a fixed wrong answer in every round (the synthetic
stand-in for a prompt-injected agent). Compares the accuracy drop across
named topologies, optionally including a trained generator checkpoint.

    python scripts/adversarial_injection.py --model out/model.json
"""

import argparse

import numpy as np

from topolab.agents import homogeneous_agents
from topolab.eib.model import EibModel
from topolab.eib.train import design_topology
from topolab.harness import generate_synthetic_tasks
from topolab.protocol import RunConfig, aggregate_batch, simulate_batch
from topolab.rng import derive_seed
from topolab.topology import TopologyKind, build_named


def accuracy(adjs, agents, tasks, rounds, attacker=None):
    k = tasks[0].alphabet_size
    gold = np.array([t.gold for t in tasks])
    seeds = np.array([derive_seed("inject", t.id) for t in tasks], dtype=np.uint64)
    target = forced = None
    if attacker is not None:
        target = np.full(len(tasks), attacker)
        forced = (gold + 1) % k
    answers = simulate_batch(adjs, agents, k, gold, seeds, rounds, target, forced)
    return float(np.mean(aggregate_batch(answers[:, -1, :], RunConfig().aggregation, k) == gold))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=6)
    ap.add_argument("--competence", type=float, default=0.8)
    ap.add_argument("--social-weight", type=float, default=0.6)
    ap.add_argument("--tasks", type=int, default=5000)
    ap.add_argument("--attacker", type=int, default=0)
    ap.add_argument("--model", help="generator checkpoint to include as a designed topology")
    args = ap.parse_args()

    n = args.agents
    agents = homogeneous_agents(n, args.competence, args.social_weight)
    tasks = generate_synthetic_tasks(args.tasks, 4, 11)
    kinds = ["chain", "star", "tree:2", "layered:3", "random:0.5", "full"]
    print(f"{'topology':<12} {'clean':>7} {'attacked':>9} {'drop':>7}")
    for kind in kinds:
        adj = build_named(TopologyKind.parse(kind), n, np.random.default_rng(0)).adj
        clean, hit = accuracy(adj, agents, tasks, 3), accuracy(adj, agents, tasks, 3, args.attacker)
        print(f"{kind:<12} {clean:7.4f} {hit:9.4f} {clean - hit:7.4f}")
    if args.model:
        model = EibModel.load(args.model)
        adjs = np.stack(
            [design_topology(model, agents, t, np.random.default_rng(derive_seed("design", t.id)))[0].adj for t in tasks]
        )
        clean, hit = accuracy(adjs, agents, tasks, 3), accuracy(adjs, agents, tasks, 3, args.attacker)
        print(f"{'designed':<12} {clean:7.4f} {hit:9.4f} {clean - hit:7.4f}")


if __name__ == "__main__":
    main()
