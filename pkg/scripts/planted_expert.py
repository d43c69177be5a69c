"""Train the topology generator on the planted-expert benchmark and compare ablations.

One agent always knows the answer; five guess at 0.5 competence. A good
topology routes the expert's answer to everyone else.

    python scripts/planted_expert.py --seeds 0 1 2 3 4 --steps 200
"""

import argparse
import time

import numpy as np

from topolab.agents import AgentSpec, TaskItem
from topolab.eib.model import ABLATIONS, EibModel, Hyper
from topolab.eib.train import SyntheticEnv, TrainConfig, evaluate, final_mask, train
from topolab.protocol import Aggregation, RunConfig

ROLES = [
    "Domain expert who has mastered this subject and answers with certainty.",
    "Junior analyst who skims the question quickly.",
    "Creative brainstormer who guesses freely.",
    "Skeptical critic who doubts every claim.",
    "Generalist student with broad shallow knowledge.",
    "Summarizer who restates what others said.",
]


def tasks(count, seed, prefix):
    rng = np.random.default_rng(seed)
    return [
        TaskItem(f"{prefix}-{i}", f"Question {prefix} {i}: which option about topic {rng.integers(1000)} is right?", 4, int(rng.integers(4)))
        for i in range(count)
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--ablations", nargs="+", default=list(ABLATIONS), choices=ABLATIONS)
    args = ap.parse_args()

    agents = [AgentSpec(i, ROLES[i], 1.0 if i == 0 else 0.5, 0.8) for i in range(6)]
    train_tasks, eval_tasks = tasks(60, 1, "train"), tasks(200, 2, "eval")
    env = SyntheticEnv(agents, RunConfig(rounds=3, aggregation=Aggregation("majority")))
    print(f"untrained all-0.5 mask: {evaluate(None, agents, eval_tasks, env, samples=20, seed=99, constant=0.5):.4f}")
    scores = {ab: [] for ab in args.ablations}
    for seed in args.seeds:
        for ab in args.ablations:
            start = time.perf_counter()
            model = EibModel.init(Hyper(), seed=seed)
            cfg = TrainConfig(
                samples_per_query=4, learning_rate=args.lr, queries_per_batch=60,
                epochs=args.steps, max_steps=args.steps, seed=seed, ablation=ab,
            )
            history = train(model, agents, train_tasks, env, cfg)
            acc = evaluate(model, agents, eval_tasks, env, samples=20, seed=99, ablation=ab)
            scores[ab].append(acc)
            m = final_mask(model, agents, eval_tasks[0], ab).m_final
            expert_out = m[1:, 0].mean()
            others = m[np.tril_indices(6, -1)].mean()
            print(
                f"seed {seed} {ab:<11} acc {acc:.4f}  alpha_dense {history[-1].mean_alpha_dense:.3f}  "
                f"p(edge from expert) {expert_out:.3f}  p(edge) {others:.3f}  {time.perf_counter() - start:.1f}s"
            )
    for ab, v in scores.items():
        print(f"{ab:<11} mean {np.mean(v):.4f}  sd {np.std(v):.4f}")


if __name__ == "__main__":
    main()
